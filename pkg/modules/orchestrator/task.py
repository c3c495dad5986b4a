# modules/orchestrator/task.py
# -*- coding: utf-8 -*-
"""
Calibration tasks
=================

A CalibrationTask is what one run fits: the starting parameters θ_init,
the search keys, and one or more (protocol, target) pairs.

Kinds
-----
- first_cycle : θ is a PhysicalParameterSet; every target is a single
                SimulationTrace.
- degradation : θ is a DegradationParameterSet applied to a fixed `cell`;
                every target is a CycleSeries of `n_cycles` cycles.

Task files (JSON)
-----------------
Written by `gen-bench` (tasks/<id>.json) or by hand for real data. Paths
are relative to the task file:

    {
      "id": "...", "kind": "first_cycle", "seed": 7,
      "search_keys": ["Electrode width [m]"],
      "theta_init": {<parameter-set file contents>},
      "protocols": [
        {"id": "1C", "protocol": {...}, "target_trace": "../targets/x.csv"},
        {"id": "cell1", "protocol": {...},
         "target_data": {"path": "cell1.csv", "column_map": {...}, "cycle_range": [1, 1]}}
      ]
    }

Degradation files add "cell" (optional, default cell), "n_cycles",
"cycle_subset_k" and use "target_cycles" (cycle-series CSV) or
"target_data" with a multi-cycle range.

θ* never appears in a task file; benchmark tasks carry it separately
(`theta_star`) for evaluation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from modules.bench.manifest import BenchmarkTask, task_seed
from modules.core.config import get_run_defaults
from modules.core.errors import ConfigurationError
from modules.core.models import CycleSeries, SimulationTrace
from modules.core.types import JSONDict, ParamValues, StrPath
from modules.dataio.cycling import load_cycling_target
from modules.infra.jsonl import read_json, write_json
from modules.infra.logging import get_logger
from modules.sim.degradation import run_cycles
from modules.sim.parameters import (
      DegradationParameterSet
    , ParameterSet
    , PhysicalParameterSet
    , load_default_cell
    , parameter_set_from_dict
)
from modules.sim.protocol import Protocol

_log = get_logger(__name__)

FIRST_CYCLE = "first_cycle"
DEGRADATION = "degradation"
TASK_KINDS = (FIRST_CYCLE, DEGRADATION)

Target = Union[SimulationTrace, CycleSeries]

__all__ = [
      "TaskProtocol"
    , "CalibrationTask"
    , "check_search_keys"
    , "task_from_benchmark"
    , "load_task_file"
    , "write_task_file"
    , "synthetic_degradation_task"
    , "FIRST_CYCLE"
    , "DEGRADATION"
]


def check_search_keys(task_id: str, keys: Sequence[str], *parameter_sets: ParameterSet) -> None:
    """Raise ConfigurationError unless `keys` is nonempty and names parameters of every set."""
    if not keys:
        raise ConfigurationError(f"task {task_id}: search keys must be nonempty")
    for params in parameter_sets:
        missing = [k for k in keys if k not in params]
        if missing:
            raise ConfigurationError(f"task {task_id}: search keys {missing} not in {params.name!r}")


@dataclass
class TaskProtocol:
    id: str
    protocol: Protocol
    target: Target = field(repr=False)
    source: str = ""


@dataclass
class CalibrationTask:
    """
    Attributes
    ----------
    id : str
    kind : str
        "first_cycle" or "degradation".
    theta_init : ParameterSet
        Starting parameters; bounds come from its entries.
    search_keys : tuple of str
    protocols : list of TaskProtocol
    cell : PhysicalParameterSet | None
        Fixed cell the degradation parameters act on.
    n_cycles : int
        Cycles simulated per evaluation (degradation only).
    cycle_subset_k : int
    seed : int
    meta : dict
        Free-form labels (mode, base, c_rate) carried into results.
    theta_star : dict | None
        Ground truth for evaluation; never shown to a proposer.
    """

    id: str
    kind: str
    theta_init: ParameterSet
    search_keys: Tuple[str, ...]
    protocols: List[TaskProtocol]
    cell: Optional[PhysicalParameterSet] = None
    n_cycles: int = 0
    cycle_subset_k: int = field(default_factory=lambda: get_run_defaults().cycle_subset_k)
    seed: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)
    theta_star: Optional[ParamValues] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.search_keys = tuple(self.search_keys)
        if self.kind not in TASK_KINDS:
            raise ConfigurationError(f"task {self.id}: unknown kind {self.kind!r}")
        check_search_keys(self.id, self.search_keys, self.theta_init)
        if not self.protocols:
            raise ConfigurationError(f"task {self.id}: at least one protocol is required")
        ids = [p.id for p in self.protocols]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"task {self.id}: duplicate protocol ids {ids}")

        if self.kind == DEGRADATION:
            if not isinstance(self.theta_init, DegradationParameterSet):
                raise ConfigurationError(f"task {self.id}: degradation tasks fit a degradation parameter set")
            if self.cell is None:
                self.cell = load_default_cell()
            for p in self.protocols:
                if not isinstance(p.target, CycleSeries):
                    raise ConfigurationError(f"task {self.id}/{p.id}: degradation target must be a cycle series")
            if self.n_cycles < 1:
                self.n_cycles = max(len(p.target) for p in self.protocols)  # type: ignore[arg-type]
        else:
            if not isinstance(self.theta_init, PhysicalParameterSet):
                raise ConfigurationError(f"task {self.id}: first-cycle tasks fit a physical parameter set")
            for p in self.protocols:
                if not isinstance(p.target, SimulationTrace):
                    raise ConfigurationError(f"task {self.id}/{p.id}: first-cycle target must be a single trace")

    def summary(self) -> JSONDict:
        """What run.json records about the task (no ground truth)."""
        out: JSONDict = {
              "id": self.id
            , "kind": self.kind
            , "parameter_set": self.theta_init.name
            , "search_keys": list(self.search_keys)
            , "theta_init": self.theta_init.subset_values(self.search_keys)
            , "protocols": [{"id": p.id, "name": p.protocol.name, "source": p.source} for p in self.protocols]
            , "seed": self.seed
            , "meta": dict(self.meta)
        }
        if self.kind == DEGRADATION:
            out["n_cycles"] = self.n_cycles
            out["cycle_subset_k"] = self.cycle_subset_k
        return out


# ────────────────────────────────────────────────────────────────────────────────
# Builders
# ────────────────────────────────────────────────────────────────────────────────

def task_from_benchmark(task: BenchmarkTask, root: StrPath) -> CalibrationTask:
    """Calibration task for one manifest entry (target read from `root` when written)."""
    check_search_keys(task.id, task.search_keys, task.theta_init, task.theta_star)
    on_disk = (Path(root) / task.target_trace).is_file()
    trace = task.load_target(root) if on_disk or task.trace is None else task.trace
    return CalibrationTask(
          id=task.id
        , kind=FIRST_CYCLE
        , theta_init=task.theta_init
        , search_keys=task.search_keys
        , protocols=[TaskProtocol(f"{task.c_rate:g}C", task.protocol, trace, source=task.target_trace)]
        , seed=task.seed
        , meta={"mode": task.mode, "base": task.base, "c_rate": task.c_rate, "rule_id": task.rule_id}
        , theta_star=task.theta_star.subset_values(task.search_keys)
    )


def _load_target(raw: Mapping[str, Any], protocol: Protocol, base: Path, kind: str) -> Tuple[Target, str]:
    if "target_trace" in raw:
        path = base / str(raw["target_trace"])
        return SimulationTrace.from_csv(path, step_kinds=protocol.step_kinds()), str(raw["target_trace"])
    if "target_cycles" in raw:
        path = base / str(raw["target_cycles"])
        return CycleSeries.from_csv(path, step_kinds=protocol.step_kinds()), str(raw["target_cycles"])
    if "target_data" in raw:
        spec = raw["target_data"]
        rng = spec.get("cycle_range", [1, 1])
        target = load_cycling_target(base / str(spec["path"]), spec.get("column_map"), (int(rng[0]), int(rng[1])))
        if kind == DEGRADATION and isinstance(target, SimulationTrace):
            series = CycleSeries()
            series.append(target, target.discharge_capacity())
            target = series
        return target, str(spec["path"])
    raise ConfigurationError("protocol entry needs target_trace, target_cycles or target_data")


def load_task_file(path: StrPath, *, suite_seed: Optional[int] = None) -> CalibrationTask:
    """
    Read a task file. Without a "seed" field the task seed is derived from
    `suite_seed` (or 0) and the task id.

    Raises
    ------
    ConfigurationError
        Malformed task (unknown kind, missing target, bad search keys).
    FileNotFoundError, SchemaError
        Target files.
    """
    path = Path(path)
    raw = read_json(path)
    base = path.parent
    kind = str(raw.get("kind", FIRST_CYCLE))
    task_id = str(raw.get("id", path.stem))
    try:
        theta_init = parameter_set_from_dict(raw["theta_init"])
        entries = raw["protocols"]
    except KeyError as e:
        raise ConfigurationError(f"{path}: task file lacks {e.args[0]!r}") from e

    protocols: List[TaskProtocol] = []
    for k, item in enumerate(entries):
        protocol = Protocol.from_dict(item["protocol"])
        target, source = _load_target(item, protocol, base, kind)
        protocols.append(TaskProtocol(str(item.get("id", f"p{k}")), protocol, target, source))

    cell = None
    if kind == DEGRADATION and raw.get("cell") is not None:
        cell_set = parameter_set_from_dict(raw["cell"])
        if not isinstance(cell_set, PhysicalParameterSet):
            raise ConfigurationError(f"{path}: 'cell' must be a physical parameter set")
        cell = cell_set

    seed = raw.get("seed")
    task = CalibrationTask(
          id=task_id
        , kind=kind
        , theta_init=theta_init
        , search_keys=tuple(raw.get("search_keys", ()))
        , protocols=protocols
        , cell=cell
        , n_cycles=int(raw.get("n_cycles", 0))
        , cycle_subset_k=int(raw.get("cycle_subset_k", get_run_defaults().cycle_subset_k))
        , seed=int(seed) if seed is not None else task_seed(suite_seed or 0, task_id)
        , meta={k: raw[k] for k in ("mode", "base", "c_rate", "rule_id") if k in raw}
    )
    _log.info("load_task_file: %s (%s, %d protocol(s), keys=%s)", task.id, task.kind, len(protocols), list(task.search_keys))
    return task


def write_task_file(task: CalibrationTask, out_dir: StrPath, *, name: Optional[str] = None) -> Path:
    """
    Write `<out_dir>/<name or id>.json` plus target CSVs under `<out_dir>/targets/`
    (ground truth is not written).
    """
    out = Path(out_dir)
    protocols = []
    for p in task.protocols:
        rel = f"targets/{task.id}_{p.id}.csv"
        p.target.to_csv(out / rel)
        key = "target_cycles" if isinstance(p.target, CycleSeries) else "target_trace"
        protocols.append({"id": p.id, "protocol": p.protocol.to_dict(), key: rel})
    raw: JSONDict = {
          "id": task.id
        , "kind": task.kind
        , "seed": task.seed
        , "search_keys": list(task.search_keys)
        , "theta_init": task.theta_init.to_dict()
        , "protocols": protocols
        , **task.meta
    }
    if task.kind == DEGRADATION:
        assert task.cell is not None
        raw["cell"] = task.cell.to_dict()
        raw["n_cycles"] = task.n_cycles
        raw["cycle_subset_k"] = task.cycle_subset_k
    return write_json(out / f"{name or task.id}.json", raw)


def synthetic_degradation_task(
      task_id: str
    , theta_init: DegradationParameterSet
    , theta_star: Mapping[str, float]
    , protocol: Protocol
    , n_cycles: int
    , *
    , search_keys: Sequence[str]
    , cell: Optional[PhysicalParameterSet] = None
    , cycle_subset_k: Optional[int] = None
    , seed: int = 0
) -> CalibrationTask:
    """
    Degradation task whose target is simulated from θ* = θ_init with the
    `theta_star` values.

    Raises
    ------
    ConfigurationError
        The ground-truth run does not complete all `n_cycles` cycles.
    """
    check_search_keys(task_id, tuple(search_keys), theta_init)
    cell = cell or load_default_cell()
    star = theta_init.with_values(theta_star)
    assert isinstance(star, DegradationParameterSet)
    target = run_cycles(cell, star, protocol, n_cycles)
    if len(target) < n_cycles or not target.event.is_success:
        raise ConfigurationError(
            f"ground-truth degradation run stopped at cycle {len(target)} of {n_cycles} ({target.event.value})"
        )
    return CalibrationTask(
          id=task_id
        , kind=DEGRADATION
        , theta_init=theta_init
        , search_keys=tuple(search_keys)
        , protocols=[TaskProtocol("cycling", protocol, target, source="synthetic")]
        , cell=cell
        , n_cycles=n_cycles
        , cycle_subset_k=cycle_subset_k or get_run_defaults().cycle_subset_k
        , seed=seed
        , theta_star=star.subset_values(search_keys)
    )


if __name__ == "__main__":
    import sys

    from modules.infra.logging import init_logging

    init_logging("INFO")
    t = load_task_file(sys.argv[1])
    print(t.summary())
