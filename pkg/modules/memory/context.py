# modules/memory/context.py
# -*- coding: utf-8 -*-
"""
Memory → prompt context.

Section order: injected knowledge, learned rules, best-so-far, recent
rounds (newest last). The budget is approximate (4 characters per token).
When the text is too long, items are dropped in this order: oldest rounds,
then learned rules (oldest first), then injected rules (oldest first). The
best-so-far line is never dropped.
"""

from __future__ import annotations

from typing import List, Optional

from modules.infra.jsonl import dumps_stable

from .store import INJECTED, LEARNED, MemoryStore, RoundRecord

CHARS_PER_TOKEN = 4
_RATIONALE_CHARS = 240

__all__ = ["render_context", "CHARS_PER_TOKEN"]


def _fmt_mape(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}%"


def _round_line(r: RoundRecord) -> str:
    parts = [f"round {r.round}: total_mape={_fmt_mape(r.total_mape)}", f"events={','.join(r.events)}"]
    if r.update:
        parts.append(f"update={dumps_stable(r.update)}")
    if r.step_size is not None:
        parts.append(f"eta={r.step_size:g}")
    if r.rationale:
        text = " ".join(r.rationale.split())
        parts.append(f"rationale={text[:_RATIONALE_CHARS]}")
    return "- " + "; ".join(parts)


def _best_line(store: MemoryStore) -> str:
    if store.best is None:
        return "BEST SO FAR: none yet"
    b = store.best
    return f"BEST SO FAR: round {b.round}, total_mape={_fmt_mape(b.total_mape)}, params={dumps_stable(b.params)}"


def _assemble(injected: List[str], learned: List[str], best: str, rounds: List[str]) -> str:
    blocks: List[str] = []
    if injected:
        blocks.append("TEXT KNOWLEDGE\n" + "\n".join(f"- {t}" for t in injected))
    if learned:
        blocks.append("LEARNED SENSITIVITY RULES\n" + "\n".join(f"- {t}" for t in learned))
    blocks.append(best)
    if rounds:
        blocks.append("RECENT ROUNDS\n" + "\n".join(rounds))
    return "\n\n".join(blocks)


def render_context(store: MemoryStore, token_budget: int) -> str:
    """
    Deterministic, budget-bounded text view of `store`.

    Raises
    ------
    ValueError
        token_budget ≤ 0.
    """
    if token_budget <= 0:
        raise ValueError("token_budget must be positive")
    limit = token_budget * CHARS_PER_TOKEN

    injected = [e.text for e in store.entries(INJECTED)]
    learned = [e.text for e in store.entries(LEARNED)]
    rounds = [_round_line(r) for r in store.rounds]
    best = _best_line(store)

    text = _assemble(injected, learned, best, rounds)
    while len(text) > limit:
        if rounds:
            rounds.pop(0)
        elif learned:
            learned.pop(0)
        elif injected:
            injected.pop(0)
        else:
            break
        text = _assemble(injected, learned, best, rounds)
    return text
