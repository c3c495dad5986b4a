# modules/feedback/alignment.py
# -*- coding: utf-8 -*-
"""
Trace alignment
===============

Residuals compare curve *shapes*; duration differences are reported
separately as features. Three alignment modes:

- "per_step": both traces completed the same steps → every step is
  resampled onto `n_points` samples of normalized step time.
- "overlap": the simulation was truncated by a failure → both traces are
  resampled on absolute time over their common time span.
- "whole_trace": successful runs with different step sets → whole-trace
  normalized time; the pair carries a "step_mismatch" event.

Linear interpolation (np.interp) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from modules.core.models import SimulationTrace
from modules.infra.logging import get_logger

_log = get_logger(__name__)

POINTS_PER_STEP = 500
CHANNELS = ("voltage", "current", "capacity")

PER_STEP = "per_step"
OVERLAP = "overlap"
WHOLE_TRACE = "whole_trace"
EMPTY = "empty"

STEP_MISMATCH = "step_mismatch"

__all__ = [
      "AlignedPair"
    , "align_traces"
    , "resample_step"
    , "POINTS_PER_STEP"
    , "CHANNELS"
    , "STEP_MISMATCH"
]


@dataclass
class AlignedPair:
    """
    Sim/target channels on a common grid plus the raw traces.

    `segments` maps a step index to its [start, stop) slice in the aligned
    arrays (per-step mode only).
    """

    sim: Dict[str, np.ndarray]
    target: Dict[str, np.ndarray]
    mode: str
    sim_trace: SimulationTrace
    target_trace: SimulationTrace
    segments: Dict[int, Tuple[int, int]] = field(default_factory=dict)
    events: List[str] = field(default_factory=list)

    @property
    def n_points(self) -> int:
        return int(self.target["voltage"].size)


def _channels(trace: SimulationTrace) -> Dict[str, np.ndarray]:
    return {"voltage": trace.voltage, "current": trace.current, "capacity": trace.capacity}


def _resample(t: np.ndarray, y: np.ndarray, grid: np.ndarray) -> np.ndarray:
    if t.size == 1:
        return np.full(grid.shape, float(y[0]))
    return np.interp(grid, t, y)


def resample_step(
      trace: SimulationTrace
    , step: int
    , n_points: int = POINTS_PER_STEP
) -> Optional[Dict[str, np.ndarray]]:
    """One step on `n_points` samples of normalized step time (None if absent)."""
    mask = trace.step_mask(step)
    if not mask.any():
        return None
    t = trace.time[mask]
    span = float(t[-1] - t[0])
    if span <= 0.0:
        return {k: np.full(n_points, float(v[mask][0])) for k, v in _channels(trace).items()}
    u = (t - t[0]) / span
    grid = np.linspace(0.0, 1.0, n_points)
    return {k: _resample(u, v[mask], grid) for k, v in _channels(trace).items()}


def _per_step(sim: SimulationTrace, target: SimulationTrace, n_points: int) -> AlignedPair:
    s_parts: Dict[str, List[np.ndarray]] = {k: [] for k in CHANNELS}
    t_parts: Dict[str, List[np.ndarray]] = {k: [] for k in CHANNELS}
    segments: Dict[int, Tuple[int, int]] = {}
    pos = 0
    for step in target.steps_present():
        s = resample_step(sim, step, n_points)
        t = resample_step(target, step, n_points)
        assert s is not None and t is not None
        for k in CHANNELS:
            s_parts[k].append(s[k])
            t_parts[k].append(t[k])
        segments[step] = (pos, pos + n_points)
        pos += n_points
    return AlignedPair(
          sim={k: np.concatenate(v) for k, v in s_parts.items()}
        , target={k: np.concatenate(v) for k, v in t_parts.items()}
        , mode=PER_STEP
        , sim_trace=sim
        , target_trace=target
        , segments=segments
    )


def _on_grid(sim: SimulationTrace, target: SimulationTrace, grid_s: np.ndarray, grid_t: np.ndarray) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    s = {k: _resample(sim.time, v, grid_s) for k, v in _channels(sim).items()}
    t = {k: _resample(target.time, v, grid_t) for k, v in _channels(target).items()}
    return s, t


def align_traces(
      sim: SimulationTrace
    , target: SimulationTrace
    , *
    , n_points: int = POINTS_PER_STEP
) -> AlignedPair:
    """
    Put a simulated and a target trace on a common grid.

    Parameters
    ----------
    sim, target : SimulationTrace
        The target must contain samples; an empty simulation yields an
        empty pair (mode "empty").
    n_points : int
        Points per step (per-step mode) or in total (other modes).

    Raises
    ------
    ValueError
        Empty target trace.
    """
    if target.n_samples == 0:
        raise ValueError("target trace is empty")
    if sim.n_samples == 0:
        empty = {k: np.zeros(0) for k in CHANNELS}
        return AlignedPair(sim=empty, target=dict(empty), mode=EMPTY, sim_trace=sim, target_trace=target)

    if not sim.is_success:
        t0 = float(max(sim.time[0], target.time[0]))
        t1 = float(min(sim.time[-1], target.time[-1]))
        if t1 <= t0:
            grid = np.array([t0])
        else:
            grid = np.linspace(t0, t1, n_points)
        s, t = _on_grid(sim, target, grid, grid)
        _log.debug("align_traces: overlap [%.1f, %.1f] s", t0, t1)
        return AlignedPair(sim=s, target=t, mode=OVERLAP, sim_trace=sim, target_trace=target)

    if sim.steps_present() == target.steps_present():
        return _per_step(sim, target, n_points)

    _log.debug(
          "align_traces: step mismatch sim=%s target=%s"
        , sim.steps_present(), target.steps_present()
    )
    u = np.linspace(0.0, 1.0, n_points)

    def _scaled(tr: SimulationTrace) -> np.ndarray:
        span = float(tr.time[-1] - tr.time[0])
        return tr.time[0] + u * span

    s, t = _on_grid(sim, target, _scaled(sim), _scaled(target))
    return AlignedPair(
          sim=s
        , target=t
        , mode=WHOLE_TRACE
        , sim_trace=sim
        , target_trace=target
        , events=[STEP_MISMATCH]
    )
