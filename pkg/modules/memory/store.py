# modules/memory/store.py
# -*- coding: utf-8 -*-
"""
Run memory
==========

MemoryStore keeps what a proposer may read between rounds:

- knowledge entries: injected domain rules and learned sensitivity rules
- warm-up records (Phase 1; never change θ)
- round records (Phase 2) and the best-so-far round

Persistence
-----------
JSONL, one object per line, tagged by "type" ∈ {knowledge, warmup, round}.
With `path` set, every addition is appended (and fsynced) as it happens, so
a crashed run leaves a readable prefix. `MemoryStore.load()` rebuilds the
store, recomputing best-so-far from the round records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

from modules.core.config import DEGRADATION_KNOWLEDGE_FILE, FIRST_CYCLE_KNOWLEDGE_FILE
from modules.core.errors import ScheduleError
from modules.core.types import JSONDict, StrPath
from modules.feedback.features import FeatureSet
from modules.feedback.residuals import ResidualSet
from modules.infra.jsonl import append_jsonl, read_jsonl, write_jsonl
from modules.infra.logging import get_logger

_log = get_logger(__name__)

INJECTED = "injected"
LEARNED = "learned_sensitivity"
ROUND_RECORD = "round_record"
KINDS = (INJECTED, LEARNED, ROUND_RECORD)

WARMUP = "warmup"
OPTIMIZE = "optimize"

__all__ = [
      "KnowledgeEntry"
    , "RoundRecord"
    , "BestSoFar"
    , "MemoryStore"
    , "init_with_knowledge"
    , "record_round"
    , "load_knowledge_corpus"
    , "default_corpus"
    , "INJECTED"
    , "LEARNED"
]


# ────────────────────────────────────────────────────────────────────────────────
# Entries
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class KnowledgeEntry:
    kind: str
    text: str
    source: str = ""
    round: Optional[int] = None
    salience: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown knowledge kind {self.kind!r}")
        if not self.text.strip():
            raise ValueError("knowledge text must be nonempty")
        if self.salience < 0.0:
            raise ValueError("salience must be ≥ 0")

    def to_dict(self) -> JSONDict:
        return {
              "kind": self.kind
            , "text": self.text
            , "provenance": {"source": self.source, "round": self.round}
            , "salience": self.salience
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "KnowledgeEntry":
        prov = raw.get("provenance", {})
        return cls(
              kind=str(raw["kind"])
            , text=str(raw["text"])
            , source=str(prov.get("source", ""))
            , round=prov.get("round")
            , salience=float(raw.get("salience", 1.0))
        )


@dataclass
class RoundRecord:
    """
    One evaluated parameter vector.

    Attributes
    ----------
    round : int
        1-based index within its phase.
    params : Dict[str, float]
        Search-key values that were simulated this round.
    total_mape : float | None
        Composite loss of `params` (None when nothing was comparable).
    success : bool
        Every protocol simulated to a success event.
    residuals, features : Dict[str, ...]
        Per protocol id.
    events : List[str]
    update : JSONDict | None
        Proposal made after this evaluation (directive form).
    applied : Dict[str, float] | None
        Search-key values after projection (next round's θ).
    rationale : str
    phase : str
        "warmup" or "optimize".
    perturbation : Dict[str, float] | None
        Warm-up only: relative change per perturbed key (0.1 = +10%).
    effects : Dict[str, float] | None
        Warm-up only: capacity change [%] and CC-charge time change [s]
        against the unperturbed simulation.
    step_size : float | None
        η used to apply `update`.
    timings : Dict[str, float]
        Wall-clock seconds ("simulator_s", "proposer_s").
    """

    round: int
    params: Dict[str, float]
    total_mape: Optional[float]
    success: bool
    residuals: Dict[str, ResidualSet] = field(default_factory=dict)
    features: Dict[str, FeatureSet] = field(default_factory=dict)
    events: List[str] = field(default_factory=list)
    update: Optional[JSONDict] = None
    applied: Optional[Dict[str, float]] = None
    rationale: str = ""
    phase: str = OPTIMIZE
    perturbation: Optional[Dict[str, float]] = None
    effects: Optional[Dict[str, float]] = None
    step_size: Optional[float] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def comparable(self) -> bool:
        return self.success and self.total_mape is not None and math.isfinite(self.total_mape)

    def to_dict(self) -> JSONDict:
        return {
              "round": self.round
            , "phase": self.phase
            , "params": dict(self.params)
            , "total_mape": self.total_mape
            , "success": self.success
            , "residuals": {k: v.to_dict() for k, v in self.residuals.items()}
            , "features": {k: v.to_dict() for k, v in self.features.items()}
            , "events": list(self.events)
            , "update": self.update
            , "applied": self.applied
            , "rationale": self.rationale
            , "perturbation": self.perturbation
            , "effects": self.effects
            , "step_size": self.step_size
            , "timings": dict(self.timings)
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RoundRecord":
        total = raw.get("total_mape")
        return cls(
              round=int(raw["round"])
            , params={k: float(v) for k, v in raw.get("params", {}).items()}
            , total_mape=None if total is None else float(total)
            , success=bool(raw.get("success", False))
            , residuals={k: ResidualSet.from_dict(v) for k, v in raw.get("residuals", {}).items()}
            , features={k: FeatureSet.from_dict(v) for k, v in raw.get("features", {}).items()}
            , events=[str(e) for e in raw.get("events", [])]
            , update=raw.get("update")
            , applied=None if raw.get("applied") is None else {k: float(v) for k, v in raw["applied"].items()}
            , rationale=str(raw.get("rationale", ""))
            , phase=str(raw.get("phase", OPTIMIZE))
            , perturbation=raw.get("perturbation")
            , effects=raw.get("effects")
            , step_size=raw.get("step_size")
            , timings={k: float(v) for k, v in raw.get("timings", {}).items()}
        )


@dataclass(frozen=True)
class BestSoFar:
    round: int
    total_mape: float
    params: Dict[str, float]

    def to_dict(self) -> JSONDict:
        return {"round": self.round, "total_mape": self.total_mape, "params": dict(self.params)}


# ────────────────────────────────────────────────────────────────────────────────
# Store
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class MemoryStore:
    knowledge: List[KnowledgeEntry] = field(default_factory=list)
    warmup: List[RoundRecord] = field(default_factory=list)
    rounds: List[RoundRecord] = field(default_factory=list)
    best: Optional[BestSoFar] = None
    path: Optional[Path] = field(default=None, compare=False)

    # ── knowledge ───────────────────────────────────────────────────────────

    def add_knowledge(self, entries: Iterable[KnowledgeEntry]) -> List[KnowledgeEntry]:
        """Append entries not already present (same kind and text); returns the added ones."""
        seen = {(e.kind, e.text) for e in self.knowledge}
        added: List[KnowledgeEntry] = []
        for e in entries:
            if (e.kind, e.text) in seen:
                continue
            seen.add((e.kind, e.text))
            self.knowledge.append(e)
            added.append(e)
            self._persist("knowledge", e.to_dict())
        return added

    def entries(self, kind: str) -> List[KnowledgeEntry]:
        return [e for e in self.knowledge if e.kind == kind]

    # ── records ─────────────────────────────────────────────────────────────

    def record_warmup(self, record: RoundRecord) -> None:
        expected = len(self.warmup) + 1
        if record.round != expected:
            raise ScheduleError(f"warm-up record {record.round} out of sequence (expected {expected})")
        record.phase = WARMUP
        self.warmup.append(record)
        self._persist(WARMUP, record.to_dict())

    def record(self, record: RoundRecord) -> None:
        expected = len(self.rounds) + 1
        if record.round != expected:
            raise ScheduleError(f"round {record.round} out of sequence (expected {expected})")
        record.phase = OPTIMIZE
        self.rounds.append(record)
        self._update_best(record)
        self._persist("round", record.to_dict())

    def _update_best(self, record: RoundRecord) -> None:
        if not record.comparable:
            return
        assert record.total_mape is not None
        if self.best is None or record.total_mape < self.best.total_mape:
            self.best = BestSoFar(record.round, record.total_mape, dict(record.params))

    # ── persistence ─────────────────────────────────────────────────────────

    def _persist(self, kind: str, obj: JSONDict) -> None:
        if self.path is not None:
            append_jsonl(self.path, {"type": kind, **obj})

    def to_lines(self) -> List[JSONDict]:
        lines: List[JSONDict] = [{"type": "knowledge", **e.to_dict()} for e in self.knowledge]
        lines += [{"type": WARMUP, **r.to_dict()} for r in self.warmup]
        lines += [{"type": "round", **r.to_dict()} for r in self.rounds]
        return lines

    def save(self, path: StrPath) -> Path:
        """Write the whole store and keep appending to `path` afterwards."""
        self.path = write_jsonl(path, self.to_lines())
        return self.path

    @classmethod
    def from_lines(cls, lines: Sequence[Mapping[str, Any]]) -> "MemoryStore":
        store = cls()
        for raw in lines:
            body = {k: v for k, v in raw.items() if k != "type"}
            kind = raw.get("type")
            if kind == "knowledge":
                store.add_knowledge([KnowledgeEntry.from_dict(body)])
            elif kind == WARMUP:
                store.record_warmup(RoundRecord.from_dict(body))
            elif kind == "round":
                store.record(RoundRecord.from_dict(body))
            else:
                raise ValueError(f"unknown memory line type {kind!r}")
        return store

    @classmethod
    def load(cls, path: StrPath, *, attach: bool = True) -> "MemoryStore":
        store = cls.from_lines(read_jsonl(path))
        if attach:
            store.path = Path(path)
        _log.debug(
              "MemoryStore.load(%s): %d knowledge, %d warm-up, %d rounds"
            , path, len(store.knowledge), len(store.warmup), len(store.rounds)
        )
        return store


# ────────────────────────────────────────────────────────────────────────────────
# Operations
# ────────────────────────────────────────────────────────────────────────────────

def load_knowledge_corpus(path: StrPath) -> List[str]:
    """One rule per line; blank lines and '#' comments skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def default_corpus(kind: str = "first_cycle") -> List[str]:
    path = DEGRADATION_KNOWLEDGE_FILE if kind == "degradation" else FIRST_CYCLE_KNOWLEDGE_FILE
    return load_knowledge_corpus(path)


def init_with_knowledge(
      rule_texts: Iterable[str]
    , *
    , source: str = "domain_knowledge"
    , path: Optional[StrPath] = None
) -> MemoryStore:
    """
    New store holding one injected entry per distinct rule text.

    With `path`, the store is written there first and then appended to.
    """
    store = MemoryStore()
    if path is not None:
        store.save(path)
    texts = [t.strip() for t in rule_texts if t and t.strip()]
    store.add_knowledge(KnowledgeEntry(INJECTED, t, source=source) for t in texts)
    _log.info("init_with_knowledge: %d injected rules", len(store.knowledge))
    return store


def record_round(store: MemoryStore, record: RoundRecord) -> MemoryStore:
    """Append an optimization round; best-so-far moves only on a strict improvement."""
    store.record(record)
    return store


if __name__ == "__main__":
    mem = init_with_knowledge(default_corpus())
    record_round(mem, RoundRecord(1, {"Electrode width [m]": 1.58}, 12.6, True))
    print(len(mem.knowledge), mem.best)
