# modules/bench/manifest.py
# -*- coding: utf-8 -*-
"""
Benchmark manifest: base × C-rate × rule → filtered, seeded task suite
======================================================================

Pipeline
--------
1) Enumerate every (base set, C-rate, perturbation rule) candidate.
2) Apply the rule (invalid results are stability rejections).
3) Simulate the standard cycle at the candidate's C-rate; keep candidates
   that terminate successfully and move discharge capacity by ≥ 1%.
4) Per mode, keep the `n_per_mode` candidates with the smallest seeded
   priority. The priority of a candidate depends only on (suite seed,
   task id), so adding bases or rates never reshuffles existing tasks.

On disk
-------
    <out>/manifest.json       suite_seed, generation_counts, filter_stats, tasks
    <out>/targets/<id>.csv    target trace simulated from θ*
    <out>/tasks/<id>.json     proposer-facing task file (θ_init, bounds,
                              protocol, target path; never θ*)

θ* lives only under each manifest task's `eval_only` object.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from modules.core.errors import CalibrationError, ParameterValidationError
from modules.core.models import SimulationTrace
from modules.core.types import JSONDict, StrPath
from modules.infra.jsonl import read_json, write_json
from modules.infra.logging import get_logger
from modules.sim.parameters import PhysicalParameterSet
from modules.sim.protocol import Protocol, standard_protocol
from modules.sim.solver import run_protocol

from .filters import SENSITIVITY, STABILITY, FilterOutcome, screen_candidate
from .perturbations import KEY_PARAMETERS, MODES, PerturbationRule, all_rules, apply_perturbation

_log = get_logger(__name__)

DEFAULT_C_RATES: Tuple[float, ...] = (0.2, 1.0, 2.0)
MANIFEST_NAME = "manifest.json"
_U64 = (1 << 64) - 1
_SEED_MASK = (1 << 63) - 1

SearchKeyPolicy = Union[str, Sequence[str]]

__all__ = [
      "BenchmarkTask"
    , "BenchmarkManifest"
    , "generate_manifest"
    , "write_manifest"
    , "load_manifest"
    , "task_seed"
    , "task_id_for"
    , "DEFAULT_C_RATES"
]


# ────────────────────────────────────────────────────────────────────────────────
# Seeding helpers
# ────────────────────────────────────────────────────────────────────────────────

def _hash64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def task_seed(suite_seed: int, task_id: str) -> int:
    """Per-task seed: suite seed XOR a 64-bit hash of the task id (kept < 2**63)."""
    return ((int(suite_seed) & _U64) ^ _hash64(task_id)) & _SEED_MASK


def _priority(suite_seed: int, task_id: str) -> float:
    """Counter-based draw keyed by (seed, task): independent of enumeration order."""
    key = np.array([int(suite_seed) & _U64, _hash64(task_id)], dtype=np.uint64)
    return float(np.random.Generator(np.random.Philox(key=key)).random())


def task_id_for(mode: str, base_name: str, c_rate: float, rule_id: str) -> str:
    return f"{mode}-{base_name}-{c_rate:g}C-{rule_id}"


# ────────────────────────────────────────────────────────────────────────────────
# Types
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class BenchmarkTask:
    id: str
    mode: str
    base: str
    rule_id: str
    c_rate: float
    seed: int
    search_keys: Tuple[str, ...]
    theta_init: PhysicalParameterSet
    theta_star: PhysicalParameterSet
    protocol: Protocol
    target_trace: str
    delta_q: float
    trace: Optional[SimulationTrace] = field(default=None, repr=False, compare=False)

    def task_file_dict(self) -> JSONDict:
        """Proposer-facing view (no ground truth)."""
        return {
              "id": self.id
            , "kind": "first_cycle"
            , "mode": self.mode
            , "base": self.base
            , "c_rate": self.c_rate
            , "seed": self.seed
            , "search_keys": list(self.search_keys)
            , "theta_init": self.theta_init.to_dict()
            , "protocols": [{"id": f"{self.c_rate:g}C", "protocol": self.protocol.to_dict(), "target_trace": f"../{self.target_trace}"}]
        }

    def to_dict(self) -> JSONDict:
        return {
              "id": self.id
            , "mode": self.mode
            , "base": self.base
            , "rule_id": self.rule_id
            , "c_rate": self.c_rate
            , "seed": self.seed
            , "search_keys": list(self.search_keys)
            , "theta_init": self.theta_init.to_dict()
            , "protocol": self.protocol.to_dict()
            , "target_trace": self.target_trace
            , "eval_only": {
                  "theta_star": self.theta_star.values()
                , "delta_q": self.delta_q
              }
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "BenchmarkTask":
        theta_init = PhysicalParameterSet.from_dict(raw["theta_init"])
        ev = raw.get("eval_only", {})
        theta_star = theta_init.with_values(ev.get("theta_star", {}))
        return cls(
              id=str(raw["id"])
            , mode=str(raw["mode"])
            , base=str(raw["base"])
            , rule_id=str(raw["rule_id"])
            , c_rate=float(raw["c_rate"])
            , seed=int(raw["seed"])
            , search_keys=tuple(raw["search_keys"])
            , theta_init=theta_init
            , theta_star=theta_star  # type: ignore[arg-type]
            , protocol=Protocol.from_dict(raw["protocol"])
            , target_trace=str(raw["target_trace"])
            , delta_q=float(ev.get("delta_q", float("nan")))
        )

    def load_target(self, root: StrPath) -> SimulationTrace:
        return SimulationTrace.from_csv(Path(root) / self.target_trace, step_kinds=self.protocol.step_kinds())


@dataclass
class BenchmarkManifest:
    suite_seed: int
    tasks: List[BenchmarkTask]
    generation_counts: Dict[str, Dict[str, int]]
    filter_stats: Dict[str, Any]
    bases: List[str] = field(default_factory=list)
    c_rates: List[float] = field(default_factory=list)
    modes: List[str] = field(default_factory=list)
    root: Optional[Path] = field(default=None, compare=False)

    @property
    def shortfall(self) -> bool:
        return any(c["selected"] < c["requested"] for c in self.generation_counts.values())

    def task(self, task_id: str) -> BenchmarkTask:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)

    def to_dict(self) -> JSONDict:
        return {
              "suite_seed": self.suite_seed
            , "bases": list(self.bases)
            , "c_rates": list(self.c_rates)
            , "modes": list(self.modes)
            , "generation_counts": self.generation_counts
            , "shortfall": self.shortfall
            , "filter_stats": self.filter_stats
            , "tasks": [t.to_dict() for t in self.tasks]
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], root: Optional[Path] = None) -> "BenchmarkManifest":
        return cls(
              suite_seed=int(raw["suite_seed"])
            , tasks=[BenchmarkTask.from_dict(t) for t in raw.get("tasks", [])]
            , generation_counts={k: dict(v) for k, v in raw.get("generation_counts", {}).items()}
            , filter_stats=dict(raw.get("filter_stats", {}))
            , bases=list(raw.get("bases", []))
            , c_rates=[float(c) for c in raw.get("c_rates", [])]
            , modes=list(raw.get("modes", []))
            , root=root
        )


# ────────────────────────────────────────────────────────────────────────────────
# Generation
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class _Candidate:
    index: int
    task_id: str
    base: PhysicalParameterSet
    c_rate: float
    rule: PerturbationRule


def _search_keys(policy: SearchKeyPolicy, rule: PerturbationRule) -> Tuple[str, ...]:
    if isinstance(policy, str):
        if policy == "all":
            return KEY_PARAMETERS
        if policy == "touched":
            return tuple(rule.touched())
        raise ValueError(f"unknown search-key policy {policy!r} (use 'all', 'touched' or a list)")
    return tuple(policy)


def _screen(
      cand: _Candidate
    , base_caps: Mapping[Tuple[str, float], Optional[float]]
    , protocol: Protocol
) -> Tuple[Optional[PhysicalParameterSet], FilterOutcome]:
    q0 = base_caps[(cand.base.name, cand.c_rate)]
    if q0 is None:
        return None, FilterOutcome(False, STABILITY, "base parameter set fails this protocol")
    try:
        perturbed = apply_perturbation(cand.base, cand.rule)
    except ParameterValidationError as e:
        return None, FilterOutcome(False, STABILITY, f"invalid: {e}")
    return perturbed, screen_candidate(q0, perturbed, protocol)


def _base_capacity(base: PhysicalParameterSet, protocol: Protocol) -> Optional[float]:
    try:
        trace = run_protocol(base, protocol)
    except (CalibrationError, ValueError) as e:
        _log.warning("base %s rejected at %s: %s", base.name, protocol.name, e)
        return None
    if not trace.is_success:
        _log.warning("base %s fails %s (%s)", base.name, protocol.name, trace.event.value)
        return None
    return trace.discharge_capacity()


def generate_manifest(
      bases: Sequence[PhysicalParameterSet]
    , c_rates: Sequence[float] = DEFAULT_C_RATES
    , modes: Sequence[str] = MODES
    , n_per_mode: int = 100
    , seed: int = 1234
    , *
    , rules: Optional[Sequence[PerturbationRule]] = None
    , search_keys: SearchKeyPolicy = "all"
    , sample_interval_s: Optional[float] = None
    , parallelism: int = 1
) -> BenchmarkManifest:
    """
    Build a benchmark suite.

    Parameters
    ----------
    bases : Sequence[PhysicalParameterSet]
        Base chemistries (names must be unique).
    c_rates, modes : Sequence
        Suite dimensions.
    n_per_mode : int
        Tasks sampled per mode (without replacement).
    seed : int
        Suite seed (u64).
    rules : Sequence[PerturbationRule] | None
        Restrict the rule tables (default: every rule of the requested modes).
    search_keys : "all" | "touched" | list
        Search keys written into each task.
    sample_interval_s : float | None
        Protocol sample-interval override (coarser = faster generation).
    parallelism : int
        Worker threads used for candidate screening.

    Raises
    ------
    ValueError
        n_per_mode < 1, unknown mode or duplicate base names.
    """
    if n_per_mode < 1:
        raise ValueError(f"n_per_mode must be ≥ 1 (got {n_per_mode})")
    unknown_modes = [m for m in modes if m not in MODES]
    if unknown_modes:
        raise ValueError(f"unknown modes {unknown_modes}")
    names = [b.name for b in bases]
    if len(set(names)) != len(names):
        raise ValueError(f"base parameter-set names must be unique: {names}")

    rule_list = [r for r in (rules if rules is not None else all_rules(modes)) if r.mode in modes]
    protocols = {c: standard_protocol(c, sample_interval_s=sample_interval_s) for c in c_rates}

    candidates: List[_Candidate] = []
    for base in bases:
        for c in c_rates:
            for rule in rule_list:
                candidates.append(
                    _Candidate(len(candidates), task_id_for(rule.mode, base.name, c, rule.id), base, float(c), rule)
                )
    _log.info(
          "generate_manifest: %d candidates (%d bases × %d rates × %d rules), seed=%d"
        , len(candidates), len(bases), len(c_rates), len(rule_list), seed
    )

    base_caps = {(b.name, float(c)): _base_capacity(b, protocols[c]) for b in bases for c in c_rates}

    workers = max(1, int(parallelism))
    if workers == 1:
        outcomes = [_screen(cand, base_caps, protocols[cand.c_rate]) for cand in candidates]
    else:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="bench") as pool:
            outcomes = list(pool.map(lambda cand: _screen(cand, base_caps, protocols[cand.c_rate]), candidates))

    rejected: List[JSONDict] = []
    valid: Dict[str, List[Tuple[_Candidate, PhysicalParameterSet, FilterOutcome]]] = {m: [] for m in modes}
    stability = sensitivity = 0
    for cand, (perturbed, outcome) in zip(candidates, outcomes):
        if outcome.accepted and perturbed is not None:
            valid[cand.rule.mode].append((cand, perturbed, outcome))
            continue
        if outcome.stage == SENSITIVITY:
            sensitivity += 1
        else:
            stability += 1
        rejected.append({"task": cand.task_id, "stage": outcome.stage, "reason": outcome.reason})

    tasks: List[BenchmarkTask] = []
    counts: Dict[str, Dict[str, int]] = {}
    for mode in modes:
        pool_ = valid[mode]
        ranked = sorted(pool_, key=lambda item: (_priority(seed, item[0].task_id), item[0].task_id))
        chosen = sorted(ranked[:n_per_mode], key=lambda item: item[0].index)
        counts[mode] = {
              "candidates": sum(1 for c in candidates if c.rule.mode == mode)
            , "valid": len(pool_)
            , "requested": int(n_per_mode)
            , "selected": len(chosen)
        }
        if len(chosen) < n_per_mode:
            _log.warning("generate_manifest: mode %s has %d valid tasks < %d requested", mode, len(pool_), n_per_mode)
        for cand, perturbed, outcome in chosen:
            tasks.append(
                BenchmarkTask(
                      id=cand.task_id
                    , mode=mode
                    , base=cand.base.name
                    , rule_id=cand.rule.id
                    , c_rate=cand.c_rate
                    , seed=task_seed(seed, cand.task_id)
                    , search_keys=_search_keys(search_keys, cand.rule)
                    , theta_init=cand.base
                    , theta_star=perturbed
                    , protocol=protocols[cand.c_rate]
                    , target_trace=f"targets/{cand.task_id}.csv"
                    , delta_q=float(outcome.delta_q if outcome.delta_q is not None else float("nan"))
                    , trace=outcome.trace
                )
            )

    filter_stats = {
          "candidates": len(candidates)
        , "stability_rejections": stability
        , "sensitivity_rejections": sensitivity
        , "accepted": sum(len(v) for v in valid.values())
        , "rejected": rejected
    }
    manifest = BenchmarkManifest(
          suite_seed=int(seed)
        , tasks=tasks
        , generation_counts=counts
        , filter_stats=filter_stats
        , bases=names
        , c_rates=[float(c) for c in c_rates]
        , modes=list(modes)
    )
    _log.info(
          "generate_manifest: %d tasks (stability rejections=%d, sensitivity rejections=%d, shortfall=%s)"
        , len(tasks), stability, sensitivity, manifest.shortfall
    )
    return manifest


# ────────────────────────────────────────────────────────────────────────────────
# Persistence
# ────────────────────────────────────────────────────────────────────────────────

def write_manifest(manifest: BenchmarkManifest, out_dir: StrPath) -> Path:
    """Write manifest.json, target CSVs and proposer-facing task files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in manifest.tasks:
        target = out / t.target_trace
        if t.trace is not None:
            t.trace.to_csv(target)
        elif not target.is_file():
            _log.warning("write_manifest: no target trace for %s", t.id)
        write_json(out / "tasks" / f"{t.id}.json", t.task_file_dict())
    path = write_json(out / MANIFEST_NAME, manifest.to_dict())
    manifest.root = out
    _log.info("write_manifest: %s (%d tasks)", path, len(manifest.tasks))
    return path


def load_manifest(path: StrPath) -> BenchmarkManifest:
    """Load a manifest file (or a directory containing manifest.json)."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return BenchmarkManifest.from_dict(read_json(path), root=path.parent)


if __name__ == "__main__":
    import tempfile

    from modules.infra.logging import init_logging
    from modules.sim.parameters import load_default_cell

    init_logging("INFO")
    m = generate_manifest([load_default_cell()], (1.0,), ("extreme",), 5, seed=7, sample_interval_s=30.0)
    with tempfile.TemporaryDirectory() as tmp:
        p = write_manifest(m, tmp)
        print(p, [t.id for t in m.tasks], m.filter_stats["stability_rejections"], m.filter_stats["sensitivity_rejections"])
