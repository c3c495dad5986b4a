# modules/feedback/plotting.py
# -*- coding: utf-8 -*-
"""
SVG overlays of simulated vs target curves.

Uses the object-oriented `matplotlib.figure.Figure` API (no pyplot state, so
concurrent runs can render in parallel threads). Output bytes are stable for
identical inputs: fixed hash salt, no creation date, text kept as <text>.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib
from matplotlib.figure import Figure

from modules.core.types import StrPath
from modules.infra.logging import get_logger

from .alignment import AlignedPair

_log = get_logger(__name__)

_RC = {
      "svg.hashsalt": "battery-calibration"
    , "svg.fonttype": "none"
    , "path.simplify": False
}
_TARGET_STYLE = dict(color="black", linewidth=1.4, label="target")
_SIM_STYLE = dict(color="tab:red", linewidth=1.2, linestyle="--", label="simulated")

__all__ = ["render_overlay", "render_capacity_curves"]


def _save(fig: Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    _log.debug("render: %s", path)
    return path


def render_overlay(pair: AlignedPair, path: StrPath, *, title: Optional[str] = None) -> Path:
    """
    Two stacked panels: current vs time and voltage vs time.

    The target is always drawn; an empty simulation adds an annotation
    instead of a curve, and a failed one is annotated with its event.
    """
    path = Path(path)
    sim, target = pair.sim_trace, pair.target_trace
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(7.0, 5.5))
        ax_i, ax_v = fig.subplots(2, 1, sharex=True)

        t_h = target.time / 3600.0
        ax_i.plot(t_h, target.current, **_TARGET_STYLE)
        ax_v.plot(t_h, target.voltage, **_TARGET_STYLE)

        if sim.n_samples:
            s_h = sim.time / 3600.0
            ax_i.plot(s_h, sim.current, **_SIM_STYLE)
            ax_v.plot(s_h, sim.voltage, **_SIM_STYLE)
        note = None
        if sim.n_samples == 0:
            note = "simulation produced no samples"
        elif not sim.is_success:
            note = f"simulation stopped: {sim.event.value}"
        if note:
            ax_v.annotate(note, xy=(0.02, 0.05), xycoords="axes fraction", color="tab:red")

        ax_i.set_ylabel("Current [A]")
        ax_v.set_ylabel("Voltage [V]")
        ax_v.set_xlabel("Time [h]")
        ax_i.legend(loc="best")
        if title:
            ax_i.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def render_capacity_curves(
      sim_capacity: Sequence[float]
    , target_capacity: Sequence[float]
    , path: StrPath
    , *
    , selected: Sequence[int] = ()
    , title: Optional[str] = None
) -> Path:
    """Discharge capacity vs cycle index, selected cycles marked on the target."""
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(7.0, 3.5))
        ax = fig.subplots()
        ax.plot(range(1, len(target_capacity) + 1), list(target_capacity), **_TARGET_STYLE)
        if len(sim_capacity):
            ax.plot(range(1, len(sim_capacity) + 1), list(sim_capacity), **_SIM_STYLE)
        if selected:
            ax.plot(list(selected), [target_capacity[k - 1] for k in selected], "o", color="tab:blue", label="selected cycles")
        ax.set_xlabel("Cycle")
        ax.set_ylabel("Discharge capacity [Ah]")
        ax.legend(loc="best")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
