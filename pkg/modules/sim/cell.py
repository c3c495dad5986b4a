# modules/sim/cell.py
# -*- coding: utf-8 -*-
"""
Single-particle cell model
==========================

Purpose
-------
Everything the protocol driver needs to turn a CellState and an applied
current into a terminal voltage:

    V = U_pos(x_pos,s) − U_neg(x_neg,s) + η_pos − η_neg − I·R_e − I·R_sei

Current I > 0 is discharge. Each electrode is one representative
spherical particle; the electrode's total interfacial area is

    S = 3 · ε_am · L · A / R_particle

and the outward molar flux at the particle surface is I / (F·S) for the
negative electrode and −I / (F·S) for the positive one.

Public API
----------
- CellModel: precomputed geometry / kinetics for one parameter set
- theoretical_capacity(params) -> Ah
- step_capacity_bound(params) -> Ah (sizes CC step max durations)
- cell_voltage(state, current, params) -> V
- lithium_inventory(state, params) -> mol
- initial_state(params, degradation=None) -> CellState
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Tuple

import numpy as np

from modules.core.config import get_simulation_defaults
from modules.core.errors import ConcentrationBoundError
from modules.core.models import CellState
from modules.sim import parameters as P
from modules.sim.constants import FARADAY, SECONDS_PER_HOUR
from modules.sim.diffusion import ParticleGrid, particle_grid
from modules.sim.kinetics import butler_volmer_overpotential, electrolyte_resistance, exchange_current_density
from modules.sim.ocp import OcpCurve, curves_from_constants
from modules.sim.parameters import DegradationParameterSet, PhysicalParameterSet

# film conductivity used for R_sei = L_sei / (κ_sei · S_neg)
SEI_CONDUCTIVITY_S_PER_M = 5.0e-6

__all__ = [
      "CellModel"
    , "VoltageTerms"
    , "theoretical_capacity"
    , "step_capacity_bound"
    , "cell_voltage"
    , "lithium_inventory"
    , "initial_state"
    , "SEI_CONDUCTIVITY_S_PER_M"
]


class VoltageTerms(NamedTuple):
    voltage: float
    ocv: float
    eta_neg: float
    eta_pos: float
    cs_neg: float
    cs_pos: float


@dataclass(frozen=True, eq=False)
class CellModel:
    """
    Parameter-derived constants of the single-particle model.

    Build with `CellModel.from_params()`; instances are immutable and safe
    to share between threads.
    """

    params: PhysicalParameterSet
    neg_grid: ParticleGrid
    pos_grid: ParticleGrid
    s_neg: float
    s_pos: float
    v_neg: float
    v_pos: float
    r_electrolyte: float
    d_neg: float
    d_pos: float
    cmax_neg: float
    cmax_pos: float
    k_neg: float
    k_pos: float
    c_electrolyte: float
    temperature_k: float
    curve_neg: OcpCurve
    curve_pos: OcpCurve
    one_c_a: float
    lower_cutoff_v: float
    upper_cutoff_v: float
    sei_conductivity: float = SEI_CONDUCTIVITY_S_PER_M

    @classmethod
    def from_params(
          cls
        , params: PhysicalParameterSet
        , n_shells: Optional[int] = None
        , *
        , sei_conductivity: Optional[float] = None
    ) -> "CellModel":
        n = int(n_shells or get_simulation_defaults().n_shells)
        area = params.electrode_area()
        v_neg = params[P.NEG_ACTIVE] * params[P.NEG_THICKNESS] * area
        v_pos = params[P.POS_ACTIVE] * params[P.POS_THICKNESS] * area
        curve_neg, curve_pos = curves_from_constants(params.constants)
        return cls(
              params=params
            , neg_grid=particle_grid(params[P.NEG_RADIUS], n)
            , pos_grid=particle_grid(params[P.POS_RADIUS], n)
            , s_neg=3.0 * v_neg / params[P.NEG_RADIUS]
            , s_pos=3.0 * v_pos / params[P.POS_RADIUS]
            , v_neg=v_neg
            , v_pos=v_pos
            , r_electrolyte=electrolyte_resistance(params)
            , d_neg=params[P.NEG_DIFFUSIVITY]
            , d_pos=params[P.POS_DIFFUSIVITY]
            , cmax_neg=params[P.NEG_CMAX]
            , cmax_pos=params[P.POS_CMAX]
            , k_neg=params[P.NEG_RATE]
            , k_pos=params[P.POS_RATE]
            , c_electrolyte=params[P.ELECTROLYTE_CONC]
            , temperature_k=params[P.TEMPERATURE]
            , curve_neg=curve_neg
            , curve_pos=curve_pos
            , one_c_a=params.one_c_current()
            , lower_cutoff_v=params[P.LOWER_CUTOFF]
            , upper_cutoff_v=params[P.UPPER_CUTOFF]
            , sei_conductivity=SEI_CONDUCTIVITY_S_PER_M if sei_conductivity is None else sei_conductivity
        )

    # ── fluxes ──────────────────────────────────────────────────────────────

    def flux_neg(self, current: float) -> float:
        return current / (FARADAY * self.s_neg)

    def flux_pos(self, current: float) -> float:
        return -current / (FARADAY * self.s_pos)

    # ── state helpers ───────────────────────────────────────────────────────

    def initial_state(
          self
        , degradation: Optional[DegradationParameterSet] = None
        , *
        , inventory_loss_mol: float = 0.0
        , sei_thickness_m: Optional[float] = None
    ) -> CellState:
        """
        Uniform relaxed state at the parameter file's initial concentrations,
        with `inventory_loss_mol` removed from the negative electrode.
        """
        n = self.neg_grid.n_shells
        c_neg0 = self.params[P.NEG_C0] - inventory_loss_mol / self.v_neg
        if sei_thickness_m is None:
            sei_thickness_m = degradation[P.SEI_INITIAL_THICKNESS] if degradation is not None else 0.0
        return CellState(
              c_neg=np.full(n, c_neg0)
            , c_pos=np.full(n, self.params[P.POS_C0])
            , sei_thickness_m=float(sei_thickness_m)
            , inventory_loss_mol=float(inventory_loss_mol)
        )

    def lithium_moles(self, state: CellState) -> float:
        """Total cyclable lithium held in both electrodes' particles [mol]."""
        per_volume_neg = self.neg_grid.total_moles(state.c_neg) / _sphere_volume(self.neg_grid.radius)
        per_volume_pos = self.pos_grid.total_moles(state.c_pos) / _sphere_volume(self.pos_grid.radius)
        return self.v_neg * per_volume_neg + self.v_pos * per_volume_pos

    def sei_resistance(self, thickness_m: float) -> float:
        return thickness_m / (self.sei_conductivity * self.s_neg)

    # ── voltage ─────────────────────────────────────────────────────────────

    def surface_concentrations(
          self
        , c_neg: np.ndarray
        , c_pos: np.ndarray
        , current: float
        , side_flux: float = 0.0
    ) -> Tuple[float, float]:
        cs_neg = self.neg_grid.surface_concentration(c_neg, self.flux_neg(current) + side_flux, self.d_neg)
        cs_pos = self.pos_grid.surface_concentration(c_pos, self.flux_pos(current), self.d_pos)
        return cs_neg, cs_pos

    def terms_at_surface(
          self
        , cs_neg: float
        , cs_pos: float
        , current: float
        , sei_thickness_m: float = 0.0
    ) -> VoltageTerms:
        """
        Voltage decomposition for given surface concentrations.

        Raises ConcentrationBoundError when either surface concentration
        reaches 0 or c_max.
        """
        if not (0.0 < cs_neg < self.cmax_neg):
            raise ConcentrationBoundError(f"negative surface concentration {cs_neg:.6g} at bound")
        if not (0.0 < cs_pos < self.cmax_pos):
            raise ConcentrationBoundError(f"positive surface concentration {cs_pos:.6g} at bound")

        ocv = self.curve_pos(cs_pos / self.cmax_pos) - self.curve_neg(cs_neg / self.cmax_neg)
        j0_neg = exchange_current_density(cs_neg, self.cmax_neg, self.c_electrolyte, self.k_neg)
        j0_pos = exchange_current_density(cs_pos, self.cmax_pos, self.c_electrolyte, self.k_pos)
        eta_neg = butler_volmer_overpotential(current / self.s_neg, j0_neg, self.temperature_k)
        eta_pos = butler_volmer_overpotential(-current / self.s_pos, j0_pos, self.temperature_k)
        ohmic = current * (self.r_electrolyte + self.sei_resistance(sei_thickness_m))
        v = ocv + eta_pos - eta_neg - ohmic
        if not math.isfinite(v):
            raise ConcentrationBoundError("terminal voltage is not finite")
        return VoltageTerms(v, ocv, eta_neg, eta_pos, cs_neg, cs_pos)

    def terms(self, state: CellState, current: float, side_flux: float = 0.0) -> VoltageTerms:
        cs_neg, cs_pos = self.surface_concentrations(state.c_neg, state.c_pos, current, side_flux)
        return self.terms_at_surface(cs_neg, cs_pos, current, state.sei_thickness_m)

    def voltage(self, state: CellState, current: float, side_flux: float = 0.0) -> float:
        return self.terms(state, current, side_flux).voltage


def _sphere_volume(radius: float) -> float:
    return 4.0 * math.pi * radius ** 3 / 3.0


def _span(window: Tuple[float, float]) -> float:
    lo, hi = float(window[0]), float(window[1])
    return max(0.0, hi - lo)


# ────────────────────────────────────────────────────────────────────────────────
# Functional API
# ────────────────────────────────────────────────────────────────────────────────

def _electrode_capacities(params: PhysicalParameterSet, window: Mapping[str, Tuple[float, float]]) -> Tuple[float, float]:
    area = params.electrode_area()
    out = []
    for active, thick, cmax, side in (
          (P.NEG_ACTIVE, P.NEG_THICKNESS, P.NEG_CMAX, "negative")
        , (P.POS_ACTIVE, P.POS_THICKNESS, P.POS_CMAX, "positive")
    ):
        span = _span(window.get(side, (0.0, 1.0)))
        out.append(FARADAY * params[active] * params[thick] * area * span * params[cmax] / SECONDS_PER_HOUR)
    return out[0], out[1]


def theoretical_capacity(params: PhysicalParameterSet) -> float:
    """
    Coulomb-counting capacity bound [Ah]: min over electrodes of
    F · ε_am · L · A · (usable stoichiometry span) · c_max / 3600.
    """
    params.validate(allow_zero_active_material=True)
    return float(min(_electrode_capacities(params, params.constants.get("stoichiometry_window", {}))))


def step_capacity_bound(params: PhysicalParameterSet) -> float:
    """
    Largest charge [Ah] one CC step can pass: the smaller electrode's full
    lithium capacity (stoichiometry 0 to 1), whatever the initial state.
    """
    return float(min(_electrode_capacities(params, {})))


def initial_state(
      params: PhysicalParameterSet
    , degradation: Optional[DegradationParameterSet] = None
    , *
    , n_shells: Optional[int] = None
) -> CellState:
    return CellModel.from_params(params, n_shells).initial_state(degradation)


def cell_voltage(state: CellState, current: float, params: PhysicalParameterSet) -> float:
    """Terminal voltage [V] for a state and applied current (I > 0 discharges)."""
    model = CellModel.from_params(params, state.c_neg.size)
    return model.voltage(state, current)


def lithium_inventory(state: CellState, params: PhysicalParameterSet) -> float:
    """Lithium held in both electrodes [mol]."""
    return CellModel.from_params(params, state.c_neg.size).lithium_moles(state)


if __name__ == "__main__":
    from modules.sim.parameters import load_default_cell

    cell = load_default_cell()
    st = initial_state(cell)
    print(f"theoretical capacity: {theoretical_capacity(cell):.4f} Ah")
    print(f"electrolyte resistance: {electrolyte_resistance(cell) * 1e3:.3f} mOhm")
    print(f"OCV at t=0: {cell_voltage(st, 0.0, cell):.4f} V")
    print(f"V at 1C: {cell_voltage(st, cell.one_c_current(), cell):.4f} V")
