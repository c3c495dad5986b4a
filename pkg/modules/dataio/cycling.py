# modules/dataio/cycling.py
# -*- coding: utf-8 -*-
"""
Cycling-data ingestion (CALCE-style CSV exports)
================================================

Main entry points
-----------------
- load_cycling_csv(path, column_map=None) -> List[CyclingRecord]
- segment_cycles(records) -> CycleSeries
- load_cycling_target(path, column_map, cycle_range) -> SimulationTrace | CycleSeries

Column map
----------
Canonical field → column name, or → {"column": name, "unit": unit, "invert": bool}:

    {
        "time":    {"column": "Test_Time(s)", "unit": "s"},
        "current": {"column": "Current(A)", "unit": "A"},
        "voltage": "Voltage(V)",
        "cycle":   "Cycle_Index"
    }

Required fields: time, current, voltage. Optional: cycle, step.
Units: time s|min|h, current A|mA, voltage V|mV. `invert` flips the sign
of a channel (files that log discharge as positive current).

Sign convention of the records: discharge current is negative, as in the
cycler exports. Traces built from them use the simulator convention
(discharge positive).

Files ending in .gz are decompressed transparently by pandas.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import medfilt

from modules.core.errors import EmptySeriesError, SchemaError
from modules.core.models import CycleSeries, SimulationTrace
from modules.core.types import StrPath
from modules.infra.logging import get_logger

_log = get_logger(__name__)

ColumnSpec = Union[str, Mapping[str, Any]]

DEFAULT_COLUMN_MAP: Dict[str, ColumnSpec] = {
      "time": "time_s"
    , "current": "current_a"
    , "voltage": "voltage_v"
}
REQUIRED_FIELDS = ("time", "current", "voltage")
OPTIONAL_FIELDS = ("cycle", "step")

_UNIT_SCALE: Dict[str, Dict[str, float]] = {
      "time": {"s": 1.0, "min": 60.0, "h": 3600.0}
    , "current": {"a": 1.0, "ma": 1e-3}
    , "voltage": {"v": 1.0, "mv": 1e-3}
}

MEDIAN_KERNEL = 5

__all__ = [
      "CyclingRecord"
    , "load_cycling_csv"
    , "segment_cycles"
    , "cycles_in_range"
    , "load_cycling_target"
    , "DEFAULT_COLUMN_MAP"
]


@dataclass(frozen=True)
class CyclingRecord:
    time_s: float
    current_a: float
    voltage_v: float
    cycle_index: Optional[int] = None
    step: Optional[str] = None


# ────────────────────────────────────────────────────────────────────────────────
# Loading
# ────────────────────────────────────────────────────────────────────────────────

def _resolve(field: str, spec: ColumnSpec) -> Tuple[str, float]:
    if isinstance(spec, str):
        return spec, 1.0
    column = spec.get("column")
    if not column:
        raise SchemaError(f"column map entry for {field!r} needs a 'column'")
    scale = 1.0
    unit = spec.get("unit")
    if unit is not None and field in _UNIT_SCALE:
        try:
            scale = _UNIT_SCALE[field][str(unit).strip().lower()]
        except KeyError:
            known = ", ".join(_UNIT_SCALE[field])
            raise SchemaError(f"unknown unit {unit!r} for {field!r} (known: {known})") from None
    if spec.get("invert"):
        scale = -scale
    return str(column), scale


def _numeric(df: pd.DataFrame, column: str, field: str, path: Path) -> np.ndarray:
    raw = df[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna()
    if bad.any():
        pos = int(np.flatnonzero(bad.to_numpy())[0])
        # header is line 1
        raise SchemaError(f"{path}: line {pos + 2}: unparseable {field} value {raw.iloc[pos]!r} in column {column!r}")
    return values.to_numpy(dtype=float)


def load_cycling_csv(path: StrPath, column_map: Optional[Mapping[str, ColumnSpec]] = None) -> List[CyclingRecord]:
    """
    Parse a cycling export into records (file order kept).

    Raises
    ------
    FileNotFoundError
    SchemaError
        A mapped column is missing, a value does not parse (message carries
        the line number), or time decreases within a cycle.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"cycling file not found: {path}")
    cmap = dict(column_map or DEFAULT_COLUMN_MAP)
    missing_fields = [f for f in REQUIRED_FIELDS if f not in cmap]
    if missing_fields:
        raise SchemaError(f"column map lacks required field(s) {missing_fields}")

    df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    resolved = {f: _resolve(f, spec) for f, spec in cmap.items() if f in REQUIRED_FIELDS + OPTIONAL_FIELDS}
    for field, (column, _) in resolved.items():
        if column not in df.columns:
            raise SchemaError(f"{path}: column {column!r} (mapped to {field}) not found; have {list(df.columns)}")

    channels = {
        f: _numeric(df, resolved[f][0], f, path) * resolved[f][1]
        for f in REQUIRED_FIELDS
    }
    cycles: Optional[np.ndarray] = None
    if "cycle" in resolved:
        cycles = _numeric(df, resolved["cycle"][0], "cycle", path).astype(int)
    steps: Optional[List[str]] = None
    if "step" in resolved:
        steps = df[resolved["step"][0]].fillna("").astype(str).str.strip().tolist()

    t = channels["time"]
    group = cycles if cycles is not None else np.zeros(t.size, dtype=int)
    for i in range(1, t.size):
        if group[i] == group[i - 1] and t[i] < t[i - 1]:
            raise SchemaError(f"{path}: line {i + 2}: time decreases within a cycle ({t[i - 1]} → {t[i]})")

    records = [
        CyclingRecord(
              time_s=float(t[i])
            , current_a=float(channels["current"][i])
            , voltage_v=float(channels["voltage"][i])
            , cycle_index=None if cycles is None else int(cycles[i])
            , step=None if steps is None else steps[i]
        )
        for i in range(t.size)
    ]
    _log.info("load_cycling_csv: %d records from '%s'", len(records), path)
    return records


# ────────────────────────────────────────────────────────────────────────────────
# Segmentation
# ────────────────────────────────────────────────────────────────────────────────

def _sign(x: np.ndarray, tol: float) -> np.ndarray:
    return np.where(x > tol, 1, np.where(x < -tol, -1, 0))


def _boundaries_from_sign(current: np.ndarray, tol: float) -> List[int]:
    """Start of the data plus every charge → discharge transition."""
    kernel = MEDIAN_KERNEL if current.size >= MEDIAN_KERNEL else 1
    smooth = medfilt(current, kernel_size=kernel) if kernel > 1 else current
    sign = _sign(smooth, tol)
    starts = [0]
    last = 0
    for i, s in enumerate(sign):
        if s == -1 and last == 1:
            starts.append(i)
        if s != 0:
            last = int(s)
    return starts


def _step_labels(current: np.ndarray, steps: Optional[Sequence[str]], tol: float) -> Tuple[np.ndarray, List[str]]:
    """Step index per sample: explicit step labels when given, else runs of current sign."""
    labelled = steps is not None and any(steps)
    keys: List[Any] = list(steps) if labelled else [int(s) for s in _sign(current, tol)]  # type: ignore[arg-type]
    index = np.zeros(len(keys), dtype=int)
    kinds: List[str] = []
    for i, key in enumerate(keys):
        if i == 0 or key != keys[i - 1]:
            kinds.append(str(key) if labelled else _kind_for_sign(key))
        index[i] = len(kinds) - 1
    return index, kinds


def _kind_for_sign(sign: int) -> str:
    return {1: "cc_discharge", -1: "cc_charge"}.get(sign, "rest")


def _trace(time: np.ndarray, current: np.ndarray, voltage: np.ndarray, steps: Optional[Sequence[str]], tol: float) -> SimulationTrace:
    i_sim = -current
    index, kinds = _step_labels(i_sim, steps, tol)
    durations = [float(np.ptp(time[index == k])) if np.any(index == k) else 0.0 for k in range(len(kinds))]
    return SimulationTrace.from_samples(
          time - time[0]
        , voltage
        , i_sim
        , index
        , step_kinds=kinds
        , step_durations=durations
        , step_events=["completed"] * len(kinds)
    )


def segment_cycles(records: Sequence[CyclingRecord], *, rest_tol_a: float = 1e-3) -> CycleSeries:
    """
    Split records into cycles.

    With cycle indices present the records are grouped by them (in order of
    appearance); otherwise a cycle starts at every charge → discharge
    transition of the 5-sample median-filtered current. Segments without
    any discharge are dropped. Each cycle's trace also carries the sample
    just before it, so per-cycle discharge capacities sum to the whole
    file's integrated discharge.

    Raises
    ------
    EmptySeriesError
        No records, or no segment with a discharge.
    """
    if not records:
        raise EmptySeriesError("no cycling records")
    t = np.array([r.time_s for r in records], dtype=float)
    i = np.array([r.current_a for r in records], dtype=float)
    v = np.array([r.voltage_v for r in records], dtype=float)
    labels = [r.step for r in records]
    has_steps = any(lbl for lbl in labels)

    if all(r.cycle_index is not None for r in records):
        idx = [r.cycle_index for r in records]
        starts = [0] + [k for k in range(1, len(idx)) if idx[k] != idx[k - 1]]
    else:
        starts = _boundaries_from_sign(i, rest_tol_a)
    ends = starts[1:] + [len(records)]

    series = CycleSeries()
    for s, e in zip(starts, ends):
        if not np.any(i[s:e] < -rest_tol_a):
            continue
        lo = max(s - 1, 0)
        tr = _trace(t[lo:e], i[lo:e], v[lo:e], labels[lo:e] if has_steps else None, rest_tol_a)
        series.append(tr, tr.discharge_capacity())
    if len(series) == 0:
        raise EmptySeriesError("no complete cycle (no discharge) detected in cycling records")
    _log.info("segment_cycles: %d cycles from %d records", len(series), len(records))
    return series


def cycles_in_range(series: CycleSeries, cycle_range: Tuple[int, int]) -> CycleSeries:
    """Cycles first..last (1-based, inclusive), renumbered from 1."""
    first, last = int(cycle_range[0]), int(cycle_range[1])
    if first < 1 or last < first:
        raise ValueError(f"invalid cycle range {cycle_range}")
    if last > len(series):
        raise EmptySeriesError(f"cycle range {cycle_range} exceeds the {len(series)} cycles in the data")
    out = CycleSeries()
    for entry in series.entries[first - 1:last]:
        out.append(entry.trace, entry.discharge_capacity_ah)
    return out


def load_cycling_target(
      path: StrPath
    , column_map: Optional[Mapping[str, ColumnSpec]] = None
    , cycle_range: Tuple[int, int] = (1, 1)
) -> Union[SimulationTrace, CycleSeries]:
    """
    Fitting target from a cycling file: a single-cycle range gives that
    cycle's trace (first-cycle tasks), a longer range a CycleSeries.
    """
    selected = cycles_in_range(segment_cycles(load_cycling_csv(path, column_map)), cycle_range)
    if len(selected) == 1:
        return selected.get(1).trace
    return selected


if __name__ == "__main__":
    import sys

    recs = load_cycling_csv(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[2] / "data" / "fixtures" / "calce_sample.csv")
    print(len(recs), recs[0])
