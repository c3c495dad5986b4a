# tests/test_sim_components.py
# -*- coding: utf-8 -*-
"""Parameter sets, OCP curves, kinetics, electrolyte resistance, particle diffusion, cell voltage."""

from __future__ import annotations

import math

import numpy as np
import pytest

from modules.core.errors import ConcentrationBoundError, DomainError, KineticsError, ParameterValidationError
from modules.core.models import CellState
from modules.sim import parameters as P
from modules.sim.cell import cell_voltage, initial_state, lithium_inventory, theoretical_capacity
from modules.sim.constants import FARADAY, GAS_CONSTANT
from modules.sim.diffusion import step_particle_diffusion
from modules.sim.kinetics import butler_volmer_overpotential, electrolyte_resistance, exchange_current_density
from modules.sim.ocp import default_curves, ocp_negative, ocp_positive
from modules.sim.parameters import PHYSICAL_NAMES, load_parameter_set


# ────────────────────────────────────────────────────────────────────────────────
# Parameter sets
# ────────────────────────────────────────────────────────────────────────────────

class TestParameterSets:
    def test_default_cell_is_valid_and_complete(self, cell):
        assert cell.is_valid()
        assert set(PHYSICAL_NAMES) <= set(cell.keys())

    def test_default_degradation_is_valid(self, sei_params):
        assert sei_params.is_valid()
        assert sei_params[P.LI_PER_SEI] > 0

    def test_porosity_zero_rejected(self, cell):
        with pytest.raises(ParameterValidationError):
            cell.with_values({P.NEG_POROSITY: 0.0})

    def test_initial_above_maximum_reports_ordering(self, cell):
        bad = cell.with_entry(P.NEG_C0, value=34000.0, upper=40000.0)
        problems = bad.violations()
        assert any("maximum concentration must be greater than the initial concentration" in p for p in problems)

    def test_porosity_plus_active_fraction_above_one(self, cell):
        bad = cell.with_values({P.NEG_POROSITY: 0.4}, validate=False)
        assert any("exceeds 1" in p for p in bad.violations())

    def test_unknown_name_rejected(self, cell):
        with pytest.raises(ParameterValidationError):
            cell.with_values({"Cathode colour": 1.0})

    def test_with_values_leaves_original_untouched(self, cell):
        wider = cell.with_values({P.WIDTH: 2.0})
        assert wider[P.WIDTH] == 2.0
        assert cell[P.WIDTH] == pytest.approx(1.58)

    def test_json_round_trip(self, cell, tmp_path):
        path = cell.to_json(tmp_path / "cell.json")
        again = load_parameter_set(path)
        assert again.values() == cell.values()
        assert again.constants == cell.constants
        assert type(again) is type(cell)


# ────────────────────────────────────────────────────────────────────────────────
# Open-circuit potentials
# ────────────────────────────────────────────────────────────────────────────────

class TestOcp:
    def test_endpoints_match_declared_values(self):
        neg, pos = default_curves()
        assert ocp_negative(0.0) == pytest.approx(neg.value_at_0, abs=5e-4)
        assert ocp_negative(1.0) == pytest.approx(neg.value_at_1, abs=5e-4)
        assert ocp_positive(0.0) == pytest.approx(pos.value_at_0, abs=5e-4)
        assert ocp_positive(1.0) == pytest.approx(pos.value_at_1, abs=5e-4)

    @pytest.mark.parametrize("curve", [ocp_negative, ocp_positive])
    def test_monotone_nonincreasing_and_bounded(self, curve):
        xs = np.linspace(0.0, 1.0, 1000)
        u = curve(xs)
        assert np.all(np.diff(u) <= 0.0)
        assert np.all(np.isfinite(u))
        assert u.min() >= 0.0 and u.max() <= 5.0

    def test_midpoint_matches_closed_form(self):
        x = 0.5
        expected_neg = (
              0.2482 + 1.9793 * math.exp(-39.3631 * x)
            - 0.0909 * math.tanh(29.8538 * (x - 0.1234))
            - 0.04478 * math.tanh(14.9159 * (x - 0.2769))
            - 0.0205 * math.tanh(30.4444 * (x - 0.6103))
        )
        expected_pos = 4.40 - 0.85 * x - 0.10 * math.tanh(10.0 * (x - 0.55)) - 1.5 * math.exp(30.0 * (x - 1.0))
        assert ocp_negative(x) == pytest.approx(expected_neg, abs=1e-12)
        assert ocp_positive(x) == pytest.approx(expected_pos, abs=1e-12)

    @pytest.mark.parametrize("x", [-0.01, 1.01, float("nan")])
    def test_out_of_range_raises(self, x):
        with pytest.raises(DomainError):
            ocp_negative(x)
        with pytest.raises(DomainError):
            ocp_positive(x)


# ────────────────────────────────────────────────────────────────────────────────
# Kinetics
# ────────────────────────────────────────────────────────────────────────────────

class TestKinetics:
    def test_exchange_current_zero_at_limits(self):
        assert exchange_current_density(0.0, 30000.0, 1000.0, 1e-11) == 0.0
        assert exchange_current_density(30000.0, 30000.0, 1000.0, 1e-11) == 0.0

    def test_exchange_current_midpoint(self):
        c_max, c_e = 30000.0, 1000.0
        j0 = exchange_current_density(c_max / 2, c_max, c_e, 1.0)
        assert j0 == pytest.approx(FARADAY * math.sqrt(c_e) * c_max / 2, rel=1e-12)

    def test_exchange_current_out_of_bounds(self):
        with pytest.raises(ConcentrationBoundError):
            exchange_current_density(30001.0, 30000.0, 1000.0, 1e-11)
        with pytest.raises(ConcentrationBoundError):
            exchange_current_density(-1.0, 30000.0, 1000.0, 1e-11)

    def test_overpotential_zero_current(self):
        assert butler_volmer_overpotential(0.0, 2.0) == 0.0

    @pytest.mark.parametrize("j", [1e-3, 0.5, 3.0, 250.0])
    def test_overpotential_is_odd(self, j):
        assert butler_volmer_overpotential(-j, 1.3) == pytest.approx(-butler_volmer_overpotential(j, 1.3), rel=1e-14)

    def test_overpotential_tafel_asymptote(self):
        T = 298.15
        j0 = 0.2
        eta = butler_volmer_overpotential(1e4 * j0, j0, T)
        tafel = 2 * GAS_CONSTANT * T / FARADAY * math.log(1e4)
        assert eta == pytest.approx(tafel, rel=1e-2)

    def test_overpotential_requires_positive_exchange_current(self):
        with pytest.raises(KineticsError):
            butler_volmer_overpotential(1.0, 0.0)


class TestElectrolyteResistance:
    def test_default_value_pinned(self, cell):
        # (1/(1.0 * 1.58*0.065)) * (85.2e-6/0.25^1.5 + 12e-6/0.47^1.5 + 75.6e-6/0.335^1.5)
        assert electrolyte_resistance(cell) == pytest.approx(0.0107960, rel=1e-4)

    def test_unit_porosity_reduces_to_lengths(self, cell):
        pset = cell
        for key in (P.NEG_POROSITY, P.SEP_POROSITY, P.POS_POROSITY):
            pset = pset.with_entry(key, value=1.0, upper=1.0)
        total_l = cell[P.NEG_THICKNESS] + cell[P.SEP_THICKNESS] + cell[P.POS_THICKNESS]
        expected = total_l / (cell[P.CONDUCTIVITY] * cell.electrode_area())
        assert electrolyte_resistance(pset) == pytest.approx(expected, rel=1e-12)

    def test_bruggeman_ratio(self, cell):
        base = cell.with_values({P.NEG_POROSITY: 0.3})
        raised = base.with_values({P.NEG_BRUGGEMAN: 2.5})
        scale = base[P.NEG_THICKNESS] / (base[P.CONDUCTIVITY] * base.electrode_area())
        others = electrolyte_resistance(base) - scale / 0.3 ** 1.5
        ratio = (electrolyte_resistance(raised) - others) / (electrolyte_resistance(base) - others)
        assert ratio == pytest.approx(1 / 0.3, rel=1e-9)

    def test_monotone_in_length_and_porosity(self, cell):
        r0 = electrolyte_resistance(cell)
        assert electrolyte_resistance(cell.with_values({P.SEP_THICKNESS: 2e-5})) > r0
        assert electrolyte_resistance(cell.with_values({P.POS_POROSITY: 0.4})) < r0
        assert electrolyte_resistance(cell.with_values({P.POS_BRUGGEMAN: 2.0})) > r0


# ────────────────────────────────────────────────────────────────────────────────
# Particle diffusion
# ────────────────────────────────────────────────────────────────────────────────

def _shell_volumes(radius: float, n: int) -> np.ndarray:
    faces = radius * np.arange(n + 1) / n
    return 4.0 * np.pi / 3.0 * np.diff(faces ** 3)


class TestDiffusion:
    def test_uniform_profile_zero_flux_is_steady(self):
        c = np.full(20, 12345.0)
        out = step_particle_diffusion(c, 0.0, 1e-14, 5e-6, 10.0)
        np.testing.assert_allclose(out, c, rtol=1e-12, atol=0)

    def test_constant_flux_mass_balance(self):
        radius, dt, flux = 5e-6, 30.0, 2e-5
        c = np.linspace(15000.0, 16000.0, 20)
        out = step_particle_diffusion(c, flux, 1e-14, radius, dt)
        vol = _shell_volumes(radius, 20)
        delta = vol @ out - vol @ c
        assert delta == pytest.approx(-flux * 4 * np.pi * radius ** 2 * dt, rel=1e-8)

    def test_second_order_against_pseudo_steady_solution(self):
        radius, D, c0, flux = 1e-5, 1e-14, 20000.0, 1e-6
        t_end, n_steps = 3e4, 200
        dt = t_end / n_steps
        c_avg = c0 - 3 * flux * t_end / radius
        exact_surface = c_avg - flux * radius / (5 * D)

        errors = []
        for n in (10, 20, 40):
            c = np.full(n, c0)
            for _ in range(n_steps):
                c = step_particle_diffusion(c, flux, D, radius, dt)
            dr = radius / n
            surface = c[-1] - 0.5 * dr * flux / D
            errors.append(abs(surface - exact_surface))

        assert errors[0] / errors[1] >= 3.5
        assert errors[1] / errors[2] >= 3.5

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            step_particle_diffusion(np.ones(5), 0.0, 1e-14, 5e-6, 0.0)
        with pytest.raises(ValueError):
            step_particle_diffusion(np.ones(2), 0.0, 1e-14, 5e-6, 1.0)


# ────────────────────────────────────────────────────────────────────────────────
# Cell-level quantities
# ────────────────────────────────────────────────────────────────────────────────

class TestCell:
    def test_theoretical_capacity_pinned(self, cell):
        # negative-limited: F * 0.65 * 85.2e-6 * 0.1027 * (0.9014-0.0279) * 33133 / 3600
        assert theoretical_capacity(cell) == pytest.approx(4.4117, rel=1e-4)

    def test_theoretical_capacity_linear_in_width(self, cell):
        doubled = cell.with_values({P.WIDTH: 2 * cell[P.WIDTH]})
        assert theoretical_capacity(doubled) / theoretical_capacity(cell) == pytest.approx(2.0, rel=1e-12)

    @pytest.mark.parametrize("key", [P.NEG_ACTIVE, P.POS_ACTIVE])
    def test_zero_active_material_gives_zero(self, cell, key):
        pset = cell.with_entry(key, value=0.0, lower=0.0)
        assert theoretical_capacity(pset) == 0.0

    def test_zero_current_equals_ocv(self, cell):
        st = initial_state(cell)
        x_n = cell[P.NEG_C0] / cell[P.NEG_CMAX]
        x_p = cell[P.POS_C0] / cell[P.POS_CMAX]
        assert cell_voltage(st, 0.0, cell) == ocp_positive(x_p) - ocp_negative(x_n)

    def test_current_sign(self, cell):
        st = initial_state(cell)
        ocv = cell_voltage(st, 0.0, cell)
        one_c = cell[P.NOMINAL_CAPACITY]
        assert cell_voltage(st, one_c, cell) < ocv
        assert cell_voltage(st, -one_c, cell) > ocv

    def test_one_c_voltage_matches_formula(self, cell):
        st = initial_state(cell)
        current = cell[P.NOMINAL_CAPACITY]
        area = cell[P.WIDTH] * cell[P.HEIGHT]
        T = cell[P.TEMPERATURE]
        ce = cell[P.ELECTROLYTE_CONC]

        def side(radius, active, thick, cmax, c0, k, diff, flux_sign, curve):
            s = 3 * active * thick * area / radius
            flux = flux_sign * current / (FARADAY * s)
            cs = c0 - 0.5 * (radius / 20) * flux / diff
            j0 = FARADAY * k * math.sqrt(ce) * math.sqrt(cs) * math.sqrt(cmax - cs)
            eta = 2 * GAS_CONSTANT * T / FARADAY * math.asinh(flux_sign * current / s / (2 * j0))
            return curve(cs / cmax), eta

        u_n, eta_n = side(cell[P.NEG_RADIUS], cell[P.NEG_ACTIVE], cell[P.NEG_THICKNESS], cell[P.NEG_CMAX],
                          cell[P.NEG_C0], cell[P.NEG_RATE], cell[P.NEG_DIFFUSIVITY], 1.0, ocp_negative)
        u_p, eta_p = side(cell[P.POS_RADIUS], cell[P.POS_ACTIVE], cell[P.POS_THICKNESS], cell[P.POS_CMAX],
                          cell[P.POS_C0], cell[P.POS_RATE], cell[P.POS_DIFFUSIVITY], -1.0, ocp_positive)
        r_e = (
              cell[P.NEG_THICKNESS] / cell[P.NEG_POROSITY] ** 1.5
            + cell[P.SEP_THICKNESS] / cell[P.SEP_POROSITY] ** 1.5
            + cell[P.POS_THICKNESS] / cell[P.POS_POROSITY] ** 1.5
        ) / (cell[P.CONDUCTIVITY] * area)
        expected = u_p - u_n + eta_p - eta_n - current * r_e

        assert cell_voltage(st, current, cell) == pytest.approx(expected, abs=1e-10)

    def test_surface_at_bound_raises(self, cell):
        st = initial_state(cell)
        full = CellState(c_neg=np.full_like(st.c_neg, cell[P.NEG_CMAX]), c_pos=st.c_pos.copy())
        with pytest.raises(ConcentrationBoundError):
            cell_voltage(full, 0.0, cell)

    def test_lithium_inventory_of_uniform_state(self, cell):
        st = initial_state(cell)
        area = cell.electrode_area()
        expected = (
              cell[P.NEG_ACTIVE] * cell[P.NEG_THICKNESS] * area * cell[P.NEG_C0]
            + cell[P.POS_ACTIVE] * cell[P.POS_THICKNESS] * area * cell[P.POS_C0]
        )
        assert lithium_inventory(st, cell) == pytest.approx(expected, rel=1e-12)
