# modules/feedback/package.py
# -*- coding: utf-8 -*-
"""
Feedback package assembly
=========================

build_feedback(sim, target, ...) composes

    align_traces → compute_residuals → extract_features → render_overlay

into a FeedbackPackage whose JSON form uses the keys `residuals`,
`features`, `visual`, `events` (plus `round`, `protocol`, `cycles`, `meta`).

Events
------
- "simulation_success" when the run ended with a success event
- "<event>@step<k>" for failures (e.g. "solver_failure@step2")
- alignment events ("step_mismatch") and caller-supplied events
  (e.g. projection notices) are appended in that order

Degradation tasks use build_degradation_feedback(): the residuals compare
the capacity-fade curves and the selected cycles get their own
sub-packages, keyed by cycle index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from modules.core.models import CycleSeries, SimulationTrace
from modules.core.types import JSONDict, StrPath
from modules.infra.logging import get_logger

from .alignment import POINTS_PER_STEP, align_traces
from .cycles import select_cycle_indices
from .features import FeatureSet, extract_features
from .metrics import mape
from .plotting import render_capacity_curves, render_overlay
from .residuals import LossConfig, ResidualSet, compute_residuals

_log = get_logger(__name__)

SIMULATION_SUCCESS = "simulation_success"

__all__ = [
      "FeedbackPackage"
    , "build_feedback"
    , "build_degradation_feedback"
    , "trace_events"
    , "SIMULATION_SUCCESS"
]


@dataclass
class FeedbackPackage:
    residuals: ResidualSet
    features: FeatureSet
    events: List[str]
    visual: Optional[str] = None
    round: Optional[int] = None
    protocol: str = ""
    cycles: Dict[int, "FeedbackPackage"] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def succeeded(self) -> bool:
        return SIMULATION_SUCCESS in self.events

    def to_dict(self) -> JSONDict:
        out: JSONDict = {
              "residuals": self.residuals.to_dict()
            , "features": self.features.to_dict()
            , "visual": self.visual
            , "events": list(self.events)
            , "round": self.round
            , "protocol": self.protocol
            , "meta": dict(self.meta)
        }
        if self.cycles:
            out["cycles"] = {str(k): v.to_dict() for k, v in sorted(self.cycles.items())}
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "FeedbackPackage":
        return cls(
              residuals=ResidualSet.from_dict(raw.get("residuals", {}))
            , features=FeatureSet.from_dict(raw.get("features", {}))
            , events=[str(e) for e in raw.get("events", [])]
            , visual=raw.get("visual")
            , round=raw.get("round")
            , protocol=str(raw.get("protocol", ""))
            , cycles={int(k): cls.from_dict(v) for k, v in raw.get("cycles", {}).items()}
            , meta=dict(raw.get("meta", {}))
        )

    def summary_line(self) -> str:
        r = self.residuals
        total = "n/a" if r.total_mape is None else f"{r.total_mape:.4f}%"
        return f"total_mape={total} events={','.join(self.events)}"


def trace_events(trace: SimulationTrace) -> List[str]:
    if trace.is_success:
        return [SIMULATION_SUCCESS]
    where = f"@step{trace.failed_step}" if trace.failed_step is not None else ""
    return [f"{trace.event.value}{where}"]


def _visual_path(path_prefix: Optional[StrPath]) -> Optional[Path]:
    if path_prefix is None:
        return None
    p = Path(path_prefix)
    return p if p.suffix == ".svg" else p.with_name(p.name + ".svg")


def build_feedback(
      sim: SimulationTrace
    , target: SimulationTrace
    , events: Optional[Sequence[str]] = None
    , cfg: Optional[LossConfig] = None
    , round_index: Optional[int] = None
    , path_prefix: Optional[StrPath] = None
    , *
    , protocol_id: str = ""
    , title: Optional[str] = None
) -> FeedbackPackage:
    """
    Compose the feedback package for one (simulated, target) trace pair.

    A truncated simulation still gets residuals over the overlapping time
    span; only I/O errors from rendering propagate.
    """
    cfg = cfg or LossConfig()
    pair = align_traces(sim, target)
    residuals = compute_residuals(pair, cfg)
    features = extract_features(pair)

    all_events = trace_events(sim) + list(pair.events) + list(events or [])
    visual = None
    vpath = _visual_path(path_prefix)
    if vpath is not None:
        visual = str(render_overlay(pair, vpath, title=title))

    pkg = FeedbackPackage(
          residuals=residuals
        , features=features
        , events=all_events
        , visual=visual
        , round=round_index
        , protocol=protocol_id
        , meta={"alignment": pair.mode, "points_per_step": POINTS_PER_STEP, "mape_mask_rel": cfg.mask_rel}
    )
    _log.debug("build_feedback round=%s protocol=%s: %s", round_index, protocol_id, pkg.summary_line())
    return pkg


def build_degradation_feedback(
      sim: CycleSeries
    , target: CycleSeries
    , k: int
    , cfg: Optional[LossConfig] = None
    , round_index: Optional[int] = None
    , path_prefix: Optional[StrPath] = None
    , *
    , protocol_id: str = ""
    , events: Optional[Sequence[str]] = None
) -> FeedbackPackage:
    """
    Capacity-fade feedback with per-cycle sub-packages.

    Residuals: capacity_mape is the MAPE of the discharge-capacity curve over
    the cycles both series reached; the voltage/current fields average the
    selected cycles' residuals; total_mape = curve MAPE + mean of the
    selected cycles' total_mape.
    """
    cfg = cfg or LossConfig()
    if len(target) == 0:
        raise ValueError("target cycle series is empty")
    selected = select_cycle_indices(target, k)

    cycles: Dict[int, FeedbackPackage] = {}
    for idx in selected:
        sim_trace = sim.get(idx).trace if idx <= len(sim) else SimulationTrace.empty()
        cycles[idx] = build_feedback(sim_trace, target.get(idx).trace, cfg=cfg, round_index=round_index, protocol_id=f"cycle{idx}")

    n = min(len(sim), len(target))
    curve = mape(sim.capacities()[:n], target.capacities()[:n], mask_rel=cfg.mask_rel) if n else None
    sub = [c.residuals for c in cycles.values()]

    def _mean(attr: str) -> Optional[float]:
        vals = [getattr(r, attr) for r in sub if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else None

    sub_total = _mean("total_mape")
    total = None if curve is None or sub_total is None else float(curve + sub_total)
    if len(sim) < len(target):
        total = None
    residuals = ResidualSet(
          capacity_mape=curve
        , voltage_rmse=_mean("voltage_rmse")
        , voltage_mape=_mean("voltage_mape")
        , current_mape=_mean("current_mape")
        , total_mape=total
    )

    base_events = [SIMULATION_SUCCESS] if sim.event.is_success and len(sim) == len(target) else [
        f"{sim.event.value}@cycle{len(sim)}"
    ]
    visual = None
    vpath = _visual_path(path_prefix)
    if vpath is not None:
        visual = str(render_capacity_curves(sim.capacities(), target.capacities(), vpath, selected=selected))

    q_s = sim.capacities()
    q_t = target.capacities()
    fade_s = float(1.0 - q_s[-1] / q_s[0]) if len(q_s) and q_s[0] > 0 else None
    fade_t = float(1.0 - q_t[-1] / q_t[0]) if q_t[0] > 0 else None
    return FeedbackPackage(
          residuals=residuals
        , features=FeatureSet(
              capacity_delta_pct=cycles[selected[-1]].features.capacity_delta_pct
          )
        , events=base_events + list(events or [])
        , visual=visual
        , round=round_index
        , protocol=protocol_id
        , cycles=cycles
        , meta={
              "selected_cycles": selected
            , "n_cycles_sim": len(sim)
            , "n_cycles_target": len(target)
            , "fade_sim": fade_s
            , "fade_target": fade_t
          }
    )
