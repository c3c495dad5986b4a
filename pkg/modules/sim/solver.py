# modules/sim/solver.py
# -*- coding: utf-8 -*-
"""
Protocol driver
===============

Purpose
-------
Run a Protocol on a PhysicalParameterSet and return a SimulationTrace.

Time stepping
-------------
Each step is sampled on a fixed interval. One sample = one backward-Euler
diffusion step per electrode. Within a sample:

- CC: the voltage is checked against the cutoff; when the cutoff (or a
  surface-concentration bound) is crossed inside the interval, the exact
  crossing time is located with `scipy.optimize.brentq` on the sub-step
  duration and the step ends there.
- CV: the current holding V = V_hold is found with `brentq` on
  I ∈ [−bracket, +bracket] × 1C; the step ends when |I| < cutoff.
- Rest: I = 0.

SEI side reactions (when a DegradationParameterSet is supplied) are
explicit per sample: the lithium flux is evaluated from the negative
overpotential at the start of the interval and drawn from the negative
particle on top of the intercalation flux.

Failures
--------
Validation errors are raised before integration. Everything after that
is converted into a TerminationEvent; the trace keeps the samples
computed so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.linalg import LinAlgError
from scipy.optimize import brentq

from modules.core.config import SimulationDefaults, get_simulation_defaults
from modules.core.errors import ConcentrationBoundError, DomainError, KineticsError, SolverError
from modules.core.models import CellState, SimulationTrace, TerminationEvent
from modules.infra.logging import get_logger
from modules.sim.cell import CellModel, VoltageTerms, step_capacity_bound
from modules.sim.diffusion import ParticleGrid
from modules.sim.parameters import DegradationParameterSet, PhysicalParameterSet
from modules.sim.protocol import ConstantCurrent, ConstantVoltage, Protocol, Rest, Step
from modules.sim.sei import SeiModel

_log = get_logger(__name__)

# voltage returned for an infeasible current in the CV search (keeps f monotone)
_INFEASIBLE_V = 1.0e3

__all__ = ["run_protocol"]


# ────────────────────────────────────────────────────────────────────────────────
# One sample interval, affine in the applied current
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class _Sample:
    """
    Particle profiles after `dt` seconds as an affine function of current.
    `dt = 0` represents the instantaneous state.
    """

    model: CellModel
    dt: float
    base_neg: np.ndarray
    resp_neg: np.ndarray
    base_pos: np.ndarray
    resp_pos: np.ndarray
    side_flux: float
    sei_thickness_m: float

    def fluxes(self, current: float) -> Tuple[float, float]:
        return self.model.flux_neg(current) + self.side_flux, self.model.flux_pos(current)

    def surfaces(self, current: float) -> Tuple[float, float]:
        m = self.model
        fn, fp = self.fluxes(current)
        cn = self.base_neg[-1] + fn * self.resp_neg[-1] - 0.5 * m.neg_grid.dr * fn / m.d_neg
        cp = self.base_pos[-1] + fp * self.resp_pos[-1] - 0.5 * m.pos_grid.dr * fp / m.d_pos
        return float(cn), float(cp)

    def terms(self, current: float) -> VoltageTerms:
        cn, cp = self.surfaces(current)
        return self.model.terms_at_surface(cn, cp, current, self.sei_thickness_m)

    def voltage_or_limit(self, current: float) -> float:
        """Voltage, or ±_INFEASIBLE_V when a surface concentration leaves (0, c_max)."""
        m = self.model
        cn, cp = self.surfaces(current)
        if cn <= 0.0 or cp >= m.cmax_pos:
            return -_INFEASIBLE_V
        if cn >= m.cmax_neg or cp <= 0.0:
            return _INFEASIBLE_V
        return m.terms_at_surface(cn, cp, current, self.sei_thickness_m).voltage

    def profiles(self, current: float) -> Tuple[np.ndarray, np.ndarray]:
        fn, fp = self.fluxes(current)
        return self.base_neg + fn * self.resp_neg, self.base_pos + fp * self.resp_pos


@dataclass
class _Cursor:
    t: float
    state: CellState
    eta_neg: float = 0.0


@dataclass
class _Recorder:
    time: List[float] = field(default_factory=list)
    voltage: List[float] = field(default_factory=list)
    current: List[float] = field(default_factory=list)
    step: List[int] = field(default_factory=list)

    def add(self, t: float, v: float, i: float, k: int) -> None:
        self.time.append(t)
        self.voltage.append(v)
        self.current.append(i)
        self.step.append(k)


# ────────────────────────────────────────────────────────────────────────────────
# Driver
# ────────────────────────────────────────────────────────────────────────────────

class _Driver:
    def __init__(
          self
        , model: CellModel
        , sei: Optional[SeiModel]
        , defaults: SimulationDefaults
    ) -> None:
        self.model = model
        self.sei = sei
        self.defaults = defaults
        self.capacity_ratio = step_capacity_bound(model.params) / model.one_c_a
        self._bands: Dict[Tuple[str, float], np.ndarray] = {}

    # ── sample construction ─────────────────────────────────────────────────

    def _band(self, key: str, grid: ParticleGrid, diffusivity: float, dt: float, cache: bool) -> np.ndarray:
        if not cache:
            return grid.banded(diffusivity, dt)
        ab = self._bands.get((key, dt))
        if ab is None:
            ab = grid.banded(diffusivity, dt)
            self._bands[(key, dt)] = ab
        return ab

    def _side(self, cur: _Cursor) -> Tuple[float, float]:
        """(lithium flux, film growth rate) evaluated at the interval start."""
        if self.sei is None:
            return 0.0, 0.0
        thick = cur.state.sei_thickness_m
        T = self.model.temperature_k
        return (
              self.sei.lithium_flux(thick, cur.eta_neg, T)
            , self.sei.growth_rate(thick, cur.eta_neg, T)
        )

    def _sample(self, cur: _Cursor, dt: float, *, cache: bool = True) -> _Sample:
        m = self.model
        side_flux, growth = self._side(cur)
        bn, rn = m.neg_grid.affine_step(cur.state.c_neg, m.d_neg, dt, ab=self._band("n", m.neg_grid, m.d_neg, dt, cache))
        bp, rp = m.pos_grid.affine_step(cur.state.c_pos, m.d_pos, dt, ab=self._band("p", m.pos_grid, m.d_pos, dt, cache))
        return _Sample(m, dt, bn, rn, bp, rp, side_flux, cur.state.sei_thickness_m + growth * dt)

    def _instant(self, cur: _Cursor) -> _Sample:
        side_flux, _ = self._side(cur)
        zeros = np.zeros_like(cur.state.c_neg)
        return _Sample(
              self.model, 0.0
            , cur.state.c_neg, zeros
            , cur.state.c_pos, np.zeros_like(cur.state.c_pos)
            , side_flux, cur.state.sei_thickness_m
        )

    def _commit(self, cur: _Cursor, sample: _Sample, current: float, terms: VoltageTerms) -> None:
        c_neg, c_pos = sample.profiles(current)
        st = cur.state
        st.c_neg = c_neg
        st.c_pos = c_pos
        st.inventory_loss_mol += sample.side_flux * self.model.s_neg * sample.dt
        st.sei_thickness_m = sample.sei_thickness_m
        st.elapsed_s += sample.dt
        cur.t += sample.dt
        cur.eta_neg = terms.eta_neg

    # ── steps ───────────────────────────────────────────────────────────────

    def run_step(
          self
        , k: int
        , step: Step
        , protocol: Protocol
        , cur: _Cursor
        , rec: _Recorder
    ) -> TerminationEvent:
        if isinstance(step, ConstantCurrent):
            return self._run_cc(k, step, protocol, cur, rec)
        if isinstance(step, ConstantVoltage):
            return self._run_cv(k, step, protocol, cur, rec)
        return self._run_rest(k, step, protocol, cur, rec)

    def _intervals(self, protocol: Protocol, step: Step):
        """Yield successive sample lengths until the step's max duration."""
        total = protocol.step_max_duration(step, self.capacity_ratio)
        dt = protocol.step_sample_interval(step)
        elapsed = 0.0
        while total - elapsed > 1e-9 * total:
            h = min(dt, total - elapsed)
            yield h, h == dt
            elapsed += h

    def _run_cc(self, k: int, step: ConstantCurrent, protocol: Protocol, cur: _Cursor, rec: _Recorder) -> TerminationEvent:
        current = step.sign * step.c_rate * self.model.one_c_a
        cutoff = protocol.voltage_cutoff(step, self.model.params)
        # h > 0 before the cutoff, ≤ 0 once crossed (either direction)
        side = step.sign

        def h_of(sample: _Sample) -> float:
            v = sample.voltage_or_limit(current)
            return side * (v - cutoff)

        start = self._instant(cur)
        try:
            terms0 = start.terms(current)
            h0 = side * (terms0.voltage - cutoff)
        except ConcentrationBoundError:
            terms0, h0 = None, -1.0
        if terms0 is not None:
            cur.eta_neg = terms0.eta_neg
            if k == 0:
                rec.add(cur.t, terms0.voltage, current, k)
        if h0 <= 0.0:
            if terms0 is None:
                raise ConcentrationBoundError("surface concentration at bound at step start")
            return TerminationEvent.VOLTAGE_CUTOFF

        for dt, regular in self._intervals(protocol, step):
            sample = self._sample(cur, dt, cache=regular)
            if h_of(sample) > 0.0:
                terms = sample.terms(current)
                self._commit(cur, sample, current, terms)
                rec.add(cur.t, terms.voltage, current, k)
                continue
            return self._locate_cutoff(k, cur, rec, current, dt, h_of)
        return TerminationEvent.COMPLETED

    def _locate_cutoff(
          self
        , k: int
        , cur: _Cursor
        , rec: _Recorder
        , current: float
        , dt: float
        , h_of: Callable[[_Sample], float]
    ) -> TerminationEvent:
        """Find the sub-step duration at which the CC step ends."""
        d = self.defaults

        def h(tau: float) -> float:
            return h_of(self._instant(cur) if tau <= 0.0 else self._sample(cur, tau, cache=False))

        if h(0.0) <= 0.0:
            return TerminationEvent.VOLTAGE_CUTOFF
        xtol = 1e-9 * max(dt, 1.0)
        tau = brentq(h, 0.0, dt, xtol=xtol, maxiter=d.root_maxiter)
        if tau <= xtol:
            return TerminationEvent.VOLTAGE_CUTOFF

        for candidate in (tau, tau - 2.0 * xtol):
            if candidate <= 0.0:
                break
            sample = self._sample(cur, candidate, cache=False)
            try:
                terms = sample.terms(current)
            except ConcentrationBoundError:
                continue
            self._commit(cur, sample, current, terms)
            rec.add(cur.t, terms.voltage, current, k)
            if abs(h_of(sample)) <= 1e-3:
                return TerminationEvent.VOLTAGE_CUTOFF
            raise ConcentrationBoundError(
                f"surface concentration bound reached before the voltage cutoff (t={cur.t:.3f}s)"
            )
        raise ConcentrationBoundError("surface concentration bound reached inside the sample interval")

    def _solve_cv_current(self, sample: _Sample, hold: float) -> float:
        d = self.defaults
        bracket = d.cv_bracket_c * self.model.one_c_a

        def f(current: float) -> float:
            return sample.voltage_or_limit(current) - hold

        f_lo, f_hi = f(-bracket), f(bracket)
        if not (f_lo > 0.0 and f_hi < 0.0):
            raise SolverError(f"no bracketing CV current in ±{d.cv_bracket_c}C (f={f_lo:.4g}, {f_hi:.4g})")
        try:
            current = brentq(f, -bracket, bracket, xtol=1e-12 * bracket, maxiter=d.root_maxiter)
        except RuntimeError as e:
            raise SolverError(f"CV current did not converge: {e}") from e
        return float(current)

    def _run_cv(self, k: int, step: ConstantVoltage, protocol: Protocol, cur: _Cursor, rec: _Recorder) -> TerminationEvent:
        hold = protocol.hold_voltage(step, self.model.params)
        cutoff_a = step.current_cutoff * self.model.one_c_a
        tol = self.defaults.cv_voltage_tol_v

        if k == 0:
            start = self._instant(cur)
            i0 = self._solve_cv_current(start, hold)
            terms0 = start.terms(i0)
            cur.eta_neg = terms0.eta_neg
            rec.add(cur.t, terms0.voltage, i0, k)

        for dt, regular in self._intervals(protocol, step):
            sample = self._sample(cur, dt, cache=regular)
            current = self._solve_cv_current(sample, hold)
            terms = sample.terms(current)
            if abs(terms.voltage - hold) > tol:
                raise SolverError(f"CV residual {terms.voltage - hold:.3g} V exceeds tolerance")
            self._commit(cur, sample, current, terms)
            rec.add(cur.t, terms.voltage, current, k)
            if abs(current) < cutoff_a:
                return TerminationEvent.CURRENT_CUTOFF
        return TerminationEvent.COMPLETED

    def _run_rest(self, k: int, step: Rest, protocol: Protocol, cur: _Cursor, rec: _Recorder) -> TerminationEvent:
        start = self._instant(cur)
        terms0 = start.terms(0.0)
        cur.eta_neg = terms0.eta_neg
        if k == 0:
            rec.add(cur.t, terms0.voltage, 0.0, k)
        for dt, regular in self._intervals(protocol, step):
            sample = self._sample(cur, dt, cache=regular)
            terms = sample.terms(0.0)
            self._commit(cur, sample, 0.0, terms)
            rec.add(cur.t, terms.voltage, 0.0, k)
        return TerminationEvent.COMPLETED


# ────────────────────────────────────────────────────────────────────────────────
# Public entry point
# ────────────────────────────────────────────────────────────────────────────────

def run_protocol(
      params: PhysicalParameterSet
    , protocol: Protocol
    , degradation: Optional[DegradationParameterSet] = None
    , initial_state: Optional[CellState] = None
    , *
    , n_shells: Optional[int] = None
    , defaults: Optional[SimulationDefaults] = None
) -> SimulationTrace:
    """
    Simulate `protocol` from `initial_state` (default: the relaxed state at
    the parameter file's initial concentrations).

    Raises
    ------
    ParameterValidationError, ProtocolValidationError
        Before any integration. Every later failure is reported through
        the trace's termination event.
    """
    params.validate()
    protocol.validate(params)
    if degradation is not None:
        degradation.validate()

    defaults = defaults or get_simulation_defaults()
    if n_shells is None and initial_state is not None:
        n_shells = initial_state.c_neg.size
    kappa = None
    if degradation is not None and "sei_conductivity_s_per_m" in degradation.constants:
        kappa = float(degradation.constants["sei_conductivity_s_per_m"])
    model = CellModel.from_params(params, n_shells or defaults.n_shells, sei_conductivity=kappa)
    sei = SeiModel.from_params(degradation) if degradation is not None else None

    state = initial_state.copy() if initial_state is not None else model.initial_state(degradation)
    cur = _Cursor(t=0.0, state=state)
    rec = _Recorder()
    driver = _Driver(model, sei, defaults)

    durations: List[float] = []
    kinds: List[str] = []
    events: List[str] = []
    event = TerminationEvent.COMPLETED
    failed: Optional[int] = None

    for k, step in enumerate(protocol.steps):
        kinds.append(step.kind)
        t0 = cur.t
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise"):
                event = driver.run_step(k, step, protocol, cur, rec)
        except ConcentrationBoundError as e:
            event, failed = TerminationEvent.CONCENTRATION_BOUND_VIOLATION, k
            _log.debug("run_protocol %s step %d: %s", protocol.name, k, e)
        except (SolverError, KineticsError, DomainError, LinAlgError, FloatingPointError, OverflowError, ValueError) as e:
            event, failed = TerminationEvent.SOLVER_FAILURE, k
            _log.debug("run_protocol %s step %d failed: %s", protocol.name, k, e)
        durations.append(cur.t - t0)
        events.append(event.value)
        if failed is not None:
            break

    trace = SimulationTrace.from_samples(
          rec.time
        , rec.voltage
        , rec.current
        , rec.step
        , event=event
        , step_durations=durations
        , step_kinds=kinds
        , step_events=events
        , failed_step=failed
        , final_state=cur.state
    )
    _log.debug(
          "run_protocol %s: %d samples, event=%s, t_end=%.1fs"
        , protocol.name
        , trace.n_samples
        , event.value
        , cur.t
    )
    return trace


if __name__ == "__main__":
    import time

    from modules.infra.logging import init_logging
    from modules.sim.parameters import load_default_cell
    from modules.sim.protocol import standard_protocol

    init_logging("DEBUG")
    cell = load_default_cell()
    for rate in (0.2, 1.0, 2.0):
        t_start = time.perf_counter()
        tr = run_protocol(cell, standard_protocol(rate))
        print(
            f"{rate:>4}C  samples={tr.n_samples:5d}  event={tr.event.value:<16}"
            f"  Qd={tr.discharge_capacity():.4f} Ah  steps={['%.0f' % d for d in tr.step_durations]}"
            f"  ({time.perf_counter() - t_start:.2f}s)"
        )
