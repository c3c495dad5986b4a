# modules/feedback/features.py
# -*- coding: utf-8 -*-
"""
Curve-shape features (sign convention: simulated minus target).

- cc_charge_time_mismatch_s: CC-charge duration difference
- plateau_shift_v: median voltage difference over the central half of the
  CC-discharge step (both steps resampled on normalized time)
- cv_fraction_delta: difference of CV duration / (CC charge + CV) duration
- capacity_delta_pct: discharge-capacity difference relative to the mean of
  both capacities, so swapping the traces negates it exactly
- end_voltage_delta_v: final-sample voltage difference

A feature whose segment is missing in either trace is None (absent).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Optional

import numpy as np

from modules.core.models import SimulationTrace
from modules.core.types import JSONDict
from modules.sim.protocol import CC_CHARGE, CC_DISCHARGE, CV

from .alignment import POINTS_PER_STEP, AlignedPair, resample_step

__all__ = ["FeatureSet", "extract_features"]


@dataclass(frozen=True)
class FeatureSet:
    cc_charge_time_mismatch_s: Optional[float] = None
    plateau_shift_v: Optional[float] = None
    cv_fraction_delta: Optional[float] = None
    capacity_delta_pct: Optional[float] = None
    end_voltage_delta_v: Optional[float] = None

    def to_dict(self) -> JSONDict:
        return {
              "cc_charge_time_mismatch_s": self.cc_charge_time_mismatch_s
            , "plateau_shift_v": self.plateau_shift_v
            , "cv_fraction_delta": self.cv_fraction_delta
            , "capacity_delta_pct": self.capacity_delta_pct
            , "end_voltage_delta_v": self.end_voltage_delta_v
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "FeatureSet":
        return cls(**{k: (None if raw.get(k) is None else float(raw[k])) for k in cls().to_dict()})

    def present(self) -> JSONDict:
        return {k: v for k, v in self.to_dict().items() if v is not None}


def _cv_fraction(trace: SimulationTrace) -> Optional[float]:
    cc = trace.step_duration(CC_CHARGE)
    cv = trace.step_duration(CV)
    if cc is None or cv is None or cc + cv <= 0.0:
        return None
    return cv / (cc + cv)


def _plateau_shift(sim: SimulationTrace, target: SimulationTrace) -> Optional[float]:
    ks = sim.first_step_of(CC_DISCHARGE)
    kt = target.first_step_of(CC_DISCHARGE)
    if ks is None or kt is None:
        return None
    s = resample_step(sim, ks, POINTS_PER_STEP)
    t = resample_step(target, kt, POINTS_PER_STEP)
    if s is None or t is None:
        return None
    lo, hi = POINTS_PER_STEP // 4, POINTS_PER_STEP - POINTS_PER_STEP // 4
    return float(np.median(s["voltage"][lo:hi] - t["voltage"][lo:hi]))


def _diff(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return float(a - b)


def extract_features(pair: AlignedPair) -> FeatureSet:
    sim, target = pair.sim_trace, pair.target_trace
    if sim.n_samples == 0 or target.n_samples == 0:
        return FeatureSet()

    q_s, q_t = sim.discharge_capacity(), target.discharge_capacity()
    mean_q = 0.5 * (q_s + q_t)
    return FeatureSet(
          cc_charge_time_mismatch_s=_diff(sim.step_duration(CC_CHARGE), target.step_duration(CC_CHARGE))
        , plateau_shift_v=_plateau_shift(sim, target)
        , cv_fraction_delta=_diff(_cv_fraction(sim), _cv_fraction(target))
        , capacity_delta_pct=float(100.0 * (q_s - q_t) / mean_q) if mean_q > 0.0 else None
        , end_voltage_delta_v=float(sim.voltage[-1] - target.voltage[-1])
    )
