# modules/orchestrator/replay.py
# -*- coding: utf-8 -*-
"""
Log replay: re-derive best-so-far from rounds.jsonl and compare it with the
run's best.json (byte for byte) and with the rounds kept in memory.jsonl.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from modules.core.types import JSONDict, StrPath
from modules.infra.jsonl import read_json, read_jsonl
from modules.infra.logging import get_logger
from modules.memory.store import BestSoFar, MemoryStore, RoundRecord

from .loop import RunPaths, render_best

_log = get_logger(__name__)

__all__ = ["ReplayReport", "replay_run"]


@dataclass
class ReplayReport:
    run_dir: Path
    n_rounds: int
    best: Optional[BestSoFar]
    expected: str
    recorded: Optional[str]
    mismatches: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_dict(self) -> JSONDict:
        return {
              "run_dir": str(self.run_dir)
            , "n_rounds": self.n_rounds
            , "best": None if self.best is None else self.best.to_dict()
            , "ok": self.ok
            , "mismatches": list(self.mismatches)
        }


def replay_run(run_dir: StrPath) -> ReplayReport:
    """
    Raises
    ------
    FileNotFoundError
        run.json or rounds.jsonl missing.
    ScheduleError
        rounds.jsonl is out of sequence.
    """
    paths = RunPaths(Path(run_dir))
    if not paths.run_json.is_file() or not paths.rounds.is_file():
        raise FileNotFoundError(f"{paths.root} is not a run directory (run.json / rounds.jsonl missing)")
    task_id = str((read_json(paths.run_json).get("task") or {}).get("id", paths.root.name))

    store = MemoryStore()
    for raw in read_jsonl(paths.rounds):
        store.record(RoundRecord.from_dict(raw))
    expected = render_best(task_id, store.best)
    recorded = paths.best.read_text(encoding="utf-8") if paths.best.is_file() else None

    mismatches: List[str] = []
    if recorded is None:
        mismatches.append("best.json missing")
    elif recorded != expected:
        mismatches.append("best.json differs from the best re-derived from rounds.jsonl")

    if paths.memory.is_file():
        kept = MemoryStore.load(paths.memory, attach=False)
        if [r.to_dict() for r in kept.rounds] != [r.to_dict() for r in store.rounds]:
            mismatches.append("memory.jsonl rounds differ from rounds.jsonl")

    if paths.result.is_file():
        result = read_json(paths.result)
        best_total = None if store.best is None else store.best.total_mape
        if result.get("best_total_mape") != best_total or result.get("n_rounds") != len(store.rounds):
            mismatches.append("result.json disagrees with rounds.jsonl")

    report = ReplayReport(paths.root, len(store.rounds), store.best, expected, recorded, mismatches)
    if report.ok:
        _log.info("replay %s: %d rounds, best reproduced exactly", paths.root, report.n_rounds)
    else:
        _log.error("replay %s: %s", paths.root, "; ".join(mismatches))
    return report
