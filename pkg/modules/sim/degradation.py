# modules/sim/degradation.py
# -*- coding: utf-8 -*-
"""
Multi-cycle ageing runs.

Every cycle starts from the relaxed full state (uniform particles at the
parameter file's initial concentrations) with the cumulative lithium
inventory loss removed from the negative electrode; the SEI thickness and
the loss are carried over from the previous cycle's final state.
"""

from __future__ import annotations

from typing import Callable, Optional

from modules.core.config import SimulationDefaults
from modules.core.models import CycleSeries, SimulationTrace
from modules.infra.logging import get_logger
from modules.sim import parameters as P
from modules.sim.cell import CellModel
from modules.sim.parameters import DegradationParameterSet, PhysicalParameterSet
from modules.sim.protocol import Protocol
from modules.sim.solver import run_protocol

_log = get_logger(__name__)

__all__ = ["run_cycles"]


def run_cycles(
      params: PhysicalParameterSet
    , degradation: DegradationParameterSet
    , protocol: Protocol
    , n_cycles: int
    , *
    , n_shells: Optional[int] = None
    , defaults: Optional[SimulationDefaults] = None
    , on_cycle: Optional[Callable[[int, SimulationTrace], None]] = None
) -> CycleSeries:
    """
    Repeat `protocol` `n_cycles` times and record each cycle's discharge capacity.

    A failed cycle ends the series; its trace (with the failure event) is
    the last entry.
    """
    if n_cycles < 1:
        raise ValueError(f"n_cycles must be ≥ 1 (got {n_cycles})")
    params.validate()
    degradation.validate()
    protocol.validate(params)

    model = CellModel.from_params(params, n_shells)
    series = CycleSeries()
    loss = 0.0
    thickness = degradation[P.SEI_INITIAL_THICKNESS]

    for cycle in range(1, n_cycles + 1):
        state = model.initial_state(degradation, inventory_loss_mol=loss, sei_thickness_m=thickness)
        trace = run_protocol(params, protocol, degradation, state, n_shells=n_shells, defaults=defaults)
        series.append(trace, trace.discharge_capacity())
        if on_cycle is not None:
            on_cycle(cycle, trace)
        if not trace.is_success or trace.final_state is None:
            _log.info("run_cycles: cycle %d ended with %s; series truncated", cycle, trace.event.value)
            break
        loss = trace.final_state.inventory_loss_mol
        thickness = trace.final_state.sei_thickness_m

    _log.debug(
          "run_cycles: %d cycles, Q first=%.5f Ah last=%.5f Ah, loss=%.3e mol"
        , len(series)
        , series.capacities()[0] if len(series) else float("nan")
        , series.capacities()[-1] if len(series) else float("nan")
        , loss
    )
    return series


if __name__ == "__main__":
    import time

    from modules.sim.parameters import load_default_cell, load_default_degradation
    from modules.sim.protocol import standard_protocol

    t0 = time.perf_counter()
    s = run_cycles(load_default_cell(), load_default_degradation(), standard_protocol(1.0, sample_interval_s=30.0), 20)
    caps = s.capacities()
    print(f"{len(s)} cycles in {time.perf_counter() - t0:.1f}s; fade {100 * (1 - caps[-1] / caps[0]):.3f}%")
