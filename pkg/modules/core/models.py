# modules/core/models.py
# -*- coding: utf-8 -*-

"""
Core domain models shared across the simulator, feedback, eval and dataio.

    - TerminationEvent: how a trace (or a protocol step) ended
    - CellState: discretized electrochemical state carried between steps/cycles
    - SimulationTrace: sampled time series of one protocol run
    - CycleEntry / CycleSeries: per-cycle traces and discharge capacities

This module deliberately has no simulator, plotting or HTTP imports.
Traces convert to/from pandas frames and CSV with the fixed header
`time_s,voltage_v,current_a,capacity_ah,step_index`.

Sign convention: current > 0 is discharge; capacity is the cumulative
trapezoidal integral of current in ampere-hours.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid

from modules.core.types import FloatArray, StrPath

CSV_COLUMNS = ("time_s", "voltage_v", "current_a", "capacity_ah", "step_index")


# ────────────────────────────────────────────────────────────────────────────────
# Termination events
# ────────────────────────────────────────────────────────────────────────────────

class TerminationEvent(str, Enum):
    COMPLETED = "completed"
    VOLTAGE_CUTOFF = "voltage_cutoff"
    CURRENT_CUTOFF = "current_cutoff"
    SOLVER_FAILURE = "solver_failure"
    CONCENTRATION_BOUND_VIOLATION = "concentration_bound_violation"

    @property
    def is_success(self) -> bool:
        return self in (
              TerminationEvent.COMPLETED
            , TerminationEvent.VOLTAGE_CUTOFF
            , TerminationEvent.CURRENT_CUTOFF
        )


# ────────────────────────────────────────────────────────────────────────────────
# Cell state
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class CellState:
    """
    Discretized cell state.

    Attributes
    ----------
    c_neg, c_pos : FloatArray
        Shell-averaged particle concentrations [mol m^-3], centre → surface.
    sei_thickness_m : float
        Current SEI film thickness.
    inventory_loss_mol : float
        Cumulative lithium consumed by side reactions.
    elapsed_s : float
        Simulated time since the state was created.
    """

    c_neg: FloatArray
    c_pos: FloatArray
    sei_thickness_m: float = 0.0
    inventory_loss_mol: float = 0.0
    elapsed_s: float = 0.0

    def copy(self) -> "CellState":
        return replace(self, c_neg=self.c_neg.copy(), c_pos=self.c_pos.copy())


# ────────────────────────────────────────────────────────────────────────────────
# Simulation trace
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class SimulationTrace:
    """
    Sampled output of one protocol run.

    `step_durations`, `step_kinds` and `step_events` have one entry per
    protocol step that was started; a truncated trace (solver failure) has
    fewer entries than the protocol has steps. `event` is the event that
    ended the last step run: a cutoff or "completed" (max duration reached)
    for a full run, the failure event for a truncated one.
    """

    time: FloatArray
    voltage: FloatArray
    current: FloatArray
    capacity: FloatArray
    step_index: np.ndarray
    event: TerminationEvent = TerminationEvent.COMPLETED
    step_durations: List[float] = field(default_factory=list)
    step_kinds: List[str] = field(default_factory=list)
    step_events: List[str] = field(default_factory=list)
    failed_step: Optional[int] = None
    final_state: Optional[CellState] = field(default=None, repr=False, compare=False)

    # ── constructors ────────────────────────────────────────────────────────

    @classmethod
    def from_samples(
          cls
        , time: Sequence[float]
        , voltage: Sequence[float]
        , current: Sequence[float]
        , step_index: Sequence[int]
        , **kwargs
    ) -> "SimulationTrace":
        """Build a trace; capacity is the cumulative trapezoid of current."""
        t = np.asarray(time, dtype=float)
        i = np.asarray(current, dtype=float)
        if t.size:
            cap = cumulative_trapezoid(i, t, initial=0.0) / 3600.0
        else:
            cap = np.zeros(0)
        return cls(
              time=t
            , voltage=np.asarray(voltage, dtype=float)
            , current=i
            , capacity=cap
            , step_index=np.asarray(step_index, dtype=int)
            , **kwargs
        )

    @classmethod
    def empty(cls, event: TerminationEvent = TerminationEvent.SOLVER_FAILURE) -> "SimulationTrace":
        return cls.from_samples([], [], [], [], event=event)

    # ── queries ─────────────────────────────────────────────────────────────

    @property
    def n_samples(self) -> int:
        return int(self.time.size)

    @property
    def is_success(self) -> bool:
        return self.event.is_success

    def steps_present(self) -> List[int]:
        """Sorted unique step indices that have at least one sample."""
        return sorted(int(k) for k in np.unique(self.step_index))

    def step_mask(self, step: int) -> np.ndarray:
        return self.step_index == step

    def discharge_capacity(self) -> float:
        """Charge delivered while current > 0 [Ah] (trapezoid of clipped current)."""
        if self.n_samples < 2:
            return 0.0
        d = np.clip(self.current, 0.0, None)
        return float(trapezoid(d, self.time) / 3600.0)

    def step_duration(self, kind: str) -> Optional[float]:
        """Duration of the first step of the given kind, None when absent."""
        for k, name in enumerate(self.step_kinds):
            if name == kind and k < len(self.step_durations) and k in self.steps_present():
                return float(self.step_durations[k])
        return None

    def first_step_of(self, kind: str) -> Optional[int]:
        for k, name in enumerate(self.step_kinds):
            if name == kind and k in self.steps_present():
                return k
        return None

    # ── pandas / CSV ────────────────────────────────────────────────────────

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                  "time_s": self.time
                , "voltage_v": self.voltage
                , "current_a": self.current
                , "capacity_ah": self.capacity
                , "step_index": self.step_index
            }
        )

    def to_csv(self, path: StrPath) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_frame(
          cls
        , df: pd.DataFrame
        , *
        , step_kinds: Optional[Sequence[str]] = None
        , event: TerminationEvent = TerminationEvent.COMPLETED
    ) -> "SimulationTrace":
        """
        Rebuild a trace from the CSV columns. Step durations are recovered
        from step end times (steps are contiguous and the first starts at t = 0).
        """
        missing = [c for c in CSV_COLUMNS if c not in df.columns]
        if missing:
            raise ValueError(f"trace frame lacks columns {missing}")

        t = df["time_s"].to_numpy(dtype=float)
        steps = df["step_index"].to_numpy(dtype=int)
        n_steps = int(steps.max()) + 1 if steps.size else 0
        ends = []
        prev_end = float(t[0]) if t.size else 0.0
        for k in range(n_steps):
            sel = t[steps == k]
            end = float(sel[-1]) if sel.size else prev_end
            ends.append(end)
            prev_end = end
        starts = [float(t[0]) if t.size else 0.0] + ends[:-1]
        durations = [e - s for s, e in zip(starts, ends)]

        trace = cls(
              time=t
            , voltage=df["voltage_v"].to_numpy(dtype=float)
            , current=df["current_a"].to_numpy(dtype=float)
            , capacity=df["capacity_ah"].to_numpy(dtype=float)
            , step_index=steps
            , event=TerminationEvent(event)
            , step_durations=durations
            , step_kinds=list(step_kinds) if step_kinds is not None else ["unknown"] * n_steps
            , step_events=["completed"] * n_steps
        )
        return trace

    @classmethod
    def from_csv(
          cls
        , path: StrPath
        , *
        , step_kinds: Optional[Sequence[str]] = None
        , event: TerminationEvent = TerminationEvent.COMPLETED
    ) -> "SimulationTrace":
        df = pd.read_csv(path, float_precision="round_trip")
        return cls.from_frame(df, step_kinds=step_kinds, event=event)


# ────────────────────────────────────────────────────────────────────────────────
# Cycle series
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class CycleEntry:
    cycle_index: int
    trace: SimulationTrace
    discharge_capacity_ah: float


@dataclass
class CycleSeries:
    """
    Ordered cycles, indices contiguous from 1. `event` is the termination
    event of the last cycle (a failure truncates the series there).
    """

    entries: List[CycleEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        for pos, entry in enumerate(self.entries, start=1):
            if entry.cycle_index != pos:
                raise ValueError(
                    f"cycle indices must be contiguous from 1; got {entry.cycle_index} at position {pos}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[CycleEntry]:
        return iter(self.entries)

    def append(self, trace: SimulationTrace, capacity_ah: float) -> None:
        self.entries.append(CycleEntry(len(self.entries) + 1, trace, float(capacity_ah)))

    @property
    def event(self) -> TerminationEvent:
        if not self.entries:
            return TerminationEvent.SOLVER_FAILURE
        return self.entries[-1].trace.event

    def capacities(self) -> FloatArray:
        return np.array([e.discharge_capacity_ah for e in self.entries], dtype=float)

    def indices(self) -> List[int]:
        return [e.cycle_index for e in self.entries]

    def get(self, cycle_index: int) -> CycleEntry:
        return self.entries[cycle_index - 1]

    # ── pandas / CSV ────────────────────────────────────────────────────────

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for e in self.entries:
            df = e.trace.to_frame()
            df.insert(0, "cycle_index", e.cycle_index)
            frames.append(df)
        if not frames:
            return pd.DataFrame(columns=["cycle_index", *CSV_COLUMNS])
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path: StrPath) -> Path:
        """Long format: the trace columns prefixed by `cycle_index`."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path: StrPath, *, step_kinds: Optional[Sequence[str]] = None) -> "CycleSeries":
        df = pd.read_csv(path, float_precision="round_trip")
        if "cycle_index" not in df.columns:
            raise ValueError(f"{path}: cycle series CSV lacks a cycle_index column")
        series = cls()
        for _, group in df.groupby("cycle_index", sort=True):
            trace = SimulationTrace.from_frame(group.drop(columns="cycle_index").reset_index(drop=True), step_kinds=step_kinds)
            series.append(trace, trace.discharge_capacity())
        return series
