# modules/memory/summarize.py
# -*- coding: utf-8 -*-
"""
Warm-up summarization into learned sensitivity rules.

An optional summarizer (the LLM client) turns the warm-up outcomes into
rule strings. Without one, or when it fails, a deterministic heuristic
writes one rule per warm-up record:

    perturbing <p> by <±x%> increased capacity moderately (+1.23%)
    and lengthened the CC charge time

Capacity effects are classed by magnitude: below 0.1% negligible, below 1%
slightly, below 5% moderately, otherwise strongly. Failed simulations
produce "causes simulation failure" rules.
"""

from __future__ import annotations

from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, runtime_checkable

from modules.core.errors import CalibrationError
from modules.core.types import JSONDict
from modules.infra.logging import get_logger

from .store import LEARNED, KnowledgeEntry, MemoryStore, RoundRecord

_log = get_logger(__name__)

NEGLIGIBLE_PCT = 0.1
SLIGHT_PCT = 1.0
MODERATE_PCT = 5.0

CAPACITY_CHANGE = "capacity_change_pct"
CHARGE_TIME_CHANGE = "cc_charge_time_change_s"

__all__ = [
      "WarmupSummarizer"
    , "summarize_warmup"
    , "heuristic_rules"
    , "warmup_payload"
    , "magnitude_class"
]


@runtime_checkable
class WarmupSummarizer(Protocol):
    def summarize(self, outcomes: Sequence[JSONDict]) -> List[str]:
        ...


def magnitude_class(change_pct: float) -> str:
    a = abs(change_pct)
    if a < NEGLIGIBLE_PCT:
        return "negligibly"
    if a < SLIGHT_PCT:
        return "slightly"
    if a < MODERATE_PCT:
        return "moderately"
    return "strongly"


def _describe_perturbation(perturbation: Dict[str, float]) -> str:
    parts = [f"{name} by {100.0 * rel:+.1f}%" for name, rel in perturbation.items()]
    return " and ".join(parts) if parts else "nothing"


def _charge_time_phrase(change_s: Optional[float]) -> str:
    if change_s is None:
        return "left the CC charge time unknown"
    if abs(change_s) < 1.0:
        return "left the CC charge time unchanged"
    return "lengthened the CC charge time" if change_s > 0 else "shortened the CC charge time"


def _rule_for(record: RoundRecord) -> KnowledgeEntry:
    what = _describe_perturbation(record.perturbation or {})
    if not record.success:
        failures = [e for e in record.events if "simulation_success" not in e]
        text = f"perturbing {what} causes simulation failure ({', '.join(failures) or 'no trace'})"
        return KnowledgeEntry(LEARNED, text, source="heuristic", round=record.round, salience=1.0)

    effects = record.effects or {}
    dq = effects.get(CAPACITY_CHANGE)
    dt = effects.get(CHARGE_TIME_CHANGE)
    if dq is None:
        text = f"perturbing {what} gave no comparable capacity; {_charge_time_phrase(dt)}"
        return KnowledgeEntry(LEARNED, text, source="heuristic", round=record.round, salience=0.5)

    cls = magnitude_class(dq)
    if cls == "negligibly":
        text = (
            f"perturbing {what} had a negligible effect on capacity ({dq:+.3f}% < {NEGLIGIBLE_PCT}%) "
            f"and {_charge_time_phrase(dt)}"
        )
        salience = 0.25
    else:
        direction = "increased" if dq > 0 else "decreased"
        text = f"perturbing {what} {direction} capacity {cls} ({dq:+.2f}%) and {_charge_time_phrase(dt)}"
        salience = min(1.0, abs(dq) / MODERATE_PCT + 0.25)
    return KnowledgeEntry(LEARNED, text, source="heuristic", round=record.round, salience=salience)


def heuristic_rules(records: Sequence[RoundRecord]) -> List[KnowledgeEntry]:
    return [_rule_for(r) for r in records]


def warmup_payload(records: Sequence[RoundRecord]) -> List[JSONDict]:
    """What an external summarizer gets to see about each warm-up round."""
    return [
        {
              "round": r.round
            , "perturbation": r.perturbation or {}
            , "success": r.success
            , "events": list(r.events)
            , "effects": r.effects or {}
            , "total_mape": r.total_mape
        }
        for r in records
    ]


def summarize_warmup(
      store: MemoryStore
    , warmup_records: Sequence[RoundRecord]
    , summarizer: Optional[WarmupSummarizer] = None
) -> List[KnowledgeEntry]:
    """
    Turn warm-up outcomes into learned_sensitivity entries and add them to
    `store`. Returns the entries that were new to the store.

    Raises
    ------
    ValueError
        No warm-up records.
    """
    if not warmup_records:
        raise ValueError("summarize_warmup needs at least one warm-up record")

    entries: List[KnowledgeEntry] = []
    if summarizer is not None:
        try:
            texts = summarizer.summarize(warmup_payload(warmup_records))
            entries = [KnowledgeEntry(LEARNED, t.strip(), source="llm_summary") for t in texts if t and t.strip()]
            if not entries:
                raise CalibrationError("summarizer returned no rules")
        except (CalibrationError, ValueError, TypeError) as e:
            _log.warning("summarize_warmup: summarizer failed (%s); using heuristic rules", e)
            entries = []
    if not entries:
        entries = heuristic_rules(warmup_records)

    added = store.add_knowledge(entries)
    _log.info("summarize_warmup: %d learned rules (%d new)", len(entries), len(added))
    return added
