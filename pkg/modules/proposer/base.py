# modules/proposer/base.py
# -*- coding: utf-8 -*-
"""
Proposer interface
==================

Every proposer turns a ProposalRequest (round index, current θ, latest
feedback, memory context, evaluation history) into a ProposalResult holding
an optional ParameterUpdate. `update is None` means a no-op round.

SearchSpace maps search-key values to the unit cube and back. Keys whose
lower bound is positive are scaled logarithmically; the others linearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from modules.core.errors import ConfigurationError
from modules.core.types import FloatArray, JSONDict, ParamValues
from modules.feedback.package import FeedbackPackage
from modules.sim.parameters import ParameterSet

from .llm_common import ChatExchange
from .updates import ParameterUpdate

__all__ = ["ProposalRequest", "ProposalResult", "Proposer", "SearchSpace", "Evaluation"]

Evaluation = Tuple[ParamValues, Optional[float]]
"""(search-key values, total_mape or None when not comparable)."""


@dataclass(frozen=True)
class ProposalRequest:
    round: int
    theta: ParameterSet
    search_keys: Tuple[str, ...]
    feedback: Mapping[str, FeedbackPackage] = field(default_factory=dict)
    total_mape: Optional[float] = None
    context: str = ""
    history: Sequence[Evaluation] = ()
    visual: Optional[str] = None
    scalar_only: bool = False

    @property
    def current(self) -> ParamValues:
        return self.theta.subset_values(self.search_keys)


@dataclass
class ProposalResult:
    update: Optional[ParameterUpdate]
    exchange: Optional[ChatExchange] = None
    note: str = ""

    @property
    def is_noop(self) -> bool:
        return self.update is None


class Proposer:
    """
    Base class. Subclasses implement `propose()`; the LLM proposer also
    offers a warm-up batch and a warm-up summarizer.

    Attributes
    ----------
    kind : str
    uses_step_size : bool
        Whether the orchestrator damps this proposer's updates with η_t.
    """

    kind: str = "base"
    uses_step_size: bool = False

    def propose(self, request: ProposalRequest) -> ProposalResult:
        raise NotImplementedError

    def warmup_batch(self, theta: ParameterSet, search_keys: Sequence[str], n_groups: int) -> Optional[List[ParameterUpdate]]:
        """Proposer-chosen warm-up perturbations; None selects the fixed strategy."""
        return None

    def summarizer(self):  # -> Optional[WarmupSummarizer]
        return None

    def describe(self) -> JSONDict:
        return {"kind": self.kind}

    def close(self) -> None:
        pass


# ────────────────────────────────────────────────────────────────────────────────
# Search space
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SearchSpace:
    keys: Tuple[str, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    log: Tuple[bool, ...]

    @classmethod
    def from_parameters(
          cls
        , theta: ParameterSet
        , keys: Sequence[str]
        , bounds: Optional[Mapping[str, Tuple[float, float]]] = None
    ) -> "SearchSpace":
        if not keys:
            raise ConfigurationError("search keys must be nonempty")
        lo: List[float] = []
        hi: List[float] = []
        for k in keys:
            if k not in theta:
                raise ConfigurationError(f"search key {k!r} is not a parameter of {theta.name!r}")
            a, b = (bounds or {}).get(k, theta.bounds(k))
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise ConfigurationError(f"search key {k!r} needs finite bounds (got [{a}, {b}])")
            lo.append(float(a))
            hi.append(float(b))
        return cls(tuple(keys), tuple(lo), tuple(hi), tuple(a > 0.0 for a in lo))

    @property
    def dim(self) -> int:
        return len(self.keys)

    def to_unit(self, values: Mapping[str, float]) -> FloatArray:
        u = np.empty(self.dim)
        for i, k in enumerate(self.keys):
            a, b, v = self.lower[i], self.upper[i], float(values[k])
            if b == a:
                u[i] = 0.0
            elif self.log[i]:
                u[i] = (math.log(v) - math.log(a)) / (math.log(b) - math.log(a))
            else:
                u[i] = (v - a) / (b - a)
        return np.clip(u, 0.0, 1.0)

    def from_unit(self, u: Sequence[float]) -> ParamValues:
        out: ParamValues = {}
        for i, k in enumerate(self.keys):
            a, b = self.lower[i], self.upper[i]
            x = min(max(float(u[i]), 0.0), 1.0)
            if b == a:
                v = a
            elif self.log[i]:
                v = math.exp(math.log(a) + x * (math.log(b) - math.log(a)))
            else:
                v = a + x * (b - a)
            out[k] = min(max(v, a), b)
        return out
