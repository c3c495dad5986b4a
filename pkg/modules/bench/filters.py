# modules/bench/filters.py
# -*- coding: utf-8 -*-
"""
Benchmark candidate filters
===========================

- stability_filter: the candidate simulates to a successful termination
  event (invalid parameters or protocols count as failures)
- sensitivity_filter: the candidate's discharge capacity differs from the
  base's by at least 1% at the same protocol

`screen_candidate` runs both and returns a FilterOutcome with a reason
string for every rejection; the manifest keeps those reasons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from modules.core.errors import CalibrationError
from modules.core.models import SimulationTrace
from modules.infra.logging import get_logger
from modules.sim.parameters import PhysicalParameterSet
from modules.sim.protocol import Protocol
from modules.sim.solver import run_protocol

_log = get_logger(__name__)

SENSITIVITY_THRESHOLD = 0.01

STABILITY = "stability"
SENSITIVITY = "sensitivity"

__all__ = [
      "FilterOutcome"
    , "stability_filter"
    , "sensitivity_filter"
    , "capacity_change"
    , "screen_candidate"
    , "SENSITIVITY_THRESHOLD"
]


@dataclass(frozen=True)
class FilterOutcome:
    accepted: bool
    stage: Optional[str] = None
    reason: str = ""
    delta_q: Optional[float] = None
    trace: Optional[SimulationTrace] = None


def _simulate(params: PhysicalParameterSet, protocol: Protocol) -> SimulationTrace:
    return run_protocol(params, protocol)


def stability_filter(params: PhysicalParameterSet, protocol: Protocol) -> bool:
    """True iff the protocol runs to a successful termination event."""
    try:
        return _simulate(params, protocol).is_success
    except (CalibrationError, ValueError) as e:
        _log.debug("stability_filter: rejected (%s)", e)
        return False


def capacity_change(q_base: float, q_perturbed: float) -> float:
    """Relative discharge-capacity change |Q' − Q| / Q."""
    if not q_base > 0.0:
        return math.inf
    return abs(q_perturbed - q_base) / q_base


def sensitivity_filter(
      base: PhysicalParameterSet
    , perturbed: PhysicalParameterSet
    , protocol: Protocol
    , *
    , threshold: float = SENSITIVITY_THRESHOLD
) -> bool:
    """True iff the discharge capacity moves by at least `threshold` (relative)."""
    q0 = _simulate(base, protocol).discharge_capacity()
    q1 = _simulate(perturbed, protocol).discharge_capacity()
    return capacity_change(q0, q1) >= threshold


def screen_candidate(
      base_capacity: float
    , perturbed: PhysicalParameterSet
    , protocol: Protocol
    , *
    , threshold: float = SENSITIVITY_THRESHOLD
) -> FilterOutcome:
    """
    Both filters on one candidate, reusing a precomputed base capacity.
    The accepted outcome carries the candidate's trace (the benchmark target).
    """
    try:
        trace = _simulate(perturbed, protocol)
    except (CalibrationError, ValueError) as e:
        return FilterOutcome(False, STABILITY, f"invalid: {e}")
    if not trace.is_success:
        where = f"@step{trace.failed_step}" if trace.failed_step is not None else ""
        return FilterOutcome(False, STABILITY, f"simulation {trace.event.value}{where}")

    dq = capacity_change(base_capacity, trace.discharge_capacity())
    if dq < threshold:
        return FilterOutcome(False, SENSITIVITY, f"capacity change {100 * dq:.3f}% < {100 * threshold:g}%", dq)
    return FilterOutcome(True, None, "", dq, trace)
