# modules/eval/metrics.py
# -*- coding: utf-8 -*-
"""
Evaluation metrics
==================

- mape / rmse            : the same functions the feedback residuals use
- parameter_error        : log-scaled RMS distance between two parameter
                           sets over the search keys (unit-invariant)
- within_case_correlation: Pearson r and Spearman ρ between a run's per-round
                           total MAPE and its parameter error, plus a
                           co-monotonicity flag on the best-so-far path

Undefined correlations (constant input) are reported as None.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from modules.core.errors import DomainError
from modules.core.types import JSONDict
from modules.feedback.metrics import mape, rmse
from modules.infra.logging import get_logger

_log = get_logger(__name__)

MIN_CORRELATION_ROUNDS = 3

__all__ = [
      "mape"
    , "rmse"
    , "ParameterError"
    , "parameter_error"
    , "CaseCorrelation"
    , "within_case_correlation"
    , "mean_defined"
    , "MIN_CORRELATION_ROUNDS"
]


# ────────────────────────────────────────────────────────────────────────────────
# Parameter-space error
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ParameterError:
    """
    Attributes
    ----------
    distance : float
        sqrt(mean over keys of log(θ̂_i / θ*_i)²).
    log_ratios : Dict[str, float]
        Signed log(θ̂_i / θ*_i) per search key.
    """

    distance: float
    log_ratios: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> JSONDict:
        return {"distance": self.distance, "log_ratios": dict(self.log_ratios)}


def parameter_error(
      theta_hat: Mapping[str, float]
    , theta_star: Mapping[str, float]
    , search_keys: Sequence[str]
) -> ParameterError:
    """
    Raises
    ------
    KeyError
        A search key is missing from either set.
    DomainError
        A value is ≤ 0 or not finite (the log ratio is undefined).
    ValueError
        No search keys.
    """
    if not search_keys:
        raise ValueError("parameter_error needs at least one search key")
    ratios: Dict[str, float] = {}
    for k in search_keys:
        a, b = float(theta_hat[k]), float(theta_star[k])
        if not (a > 0.0 and b > 0.0 and math.isfinite(a) and math.isfinite(b)):
            raise DomainError(f"parameter_error needs positive finite values; {k}: {a!r} vs {b!r}")
        ratios[k] = math.log(a) - math.log(b)
    distance = math.sqrt(sum(r * r for r in ratios.values()) / len(ratios))
    return ParameterError(distance=distance, log_ratios=ratios)


# ────────────────────────────────────────────────────────────────────────────────
# Within-case correlation
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class CaseCorrelation:
    pearson: Optional[float]
    spearman: Optional[float]
    monotone: bool
    n_rounds: int

    def to_dict(self) -> JSONDict:
        return {
              "pearson": self.pearson
            , "spearman": self.spearman
            , "monotone": self.monotone
            , "n_rounds": self.n_rounds
        }


def _coefficient(fn, x: np.ndarray, y: np.ndarray) -> Optional[float]:
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return None
    value = float(fn(x, y)[0])
    if not math.isfinite(value):
        return None
    return max(-1.0, min(1.0, value))


def _co_monotone(losses: np.ndarray, errors: np.ndarray) -> bool:
    """Every strict improvement of the best loss comes with a strict drop of the parameter error."""
    best_i = 0
    improved = False
    for i in range(1, losses.size):
        if losses[i] < losses[best_i]:
            if not errors[i] < errors[best_i]:
                return False
            best_i = i
            improved = True
    return improved


def within_case_correlation(rounds: Sequence[Tuple[float, float]]) -> CaseCorrelation:
    """
    Parameters
    ----------
    rounds : sequence of (total_mape, parameter error distance)
        Successful rounds in round order.

    Raises
    ------
    ValueError
        Fewer than MIN_CORRELATION_ROUNDS rounds.
    """
    if len(rounds) < MIN_CORRELATION_ROUNDS:
        raise ValueError(f"correlation needs ≥ {MIN_CORRELATION_ROUNDS} successful rounds (got {len(rounds)})")
    losses = np.array([float(r[0]) for r in rounds])
    errors = np.array([float(r[1]) for r in rounds])
    out = CaseCorrelation(
          pearson=_coefficient(stats.pearsonr, losses, errors)
        , spearman=_coefficient(stats.spearmanr, losses, errors)
        , monotone=_co_monotone(losses, errors)
        , n_rounds=len(rounds)
    )
    _log.debug("within_case_correlation: n=%d r=%s ρ=%s monotone=%s", out.n_rounds, out.pearson, out.spearman, out.monotone)
    return out


def mean_defined(values: Sequence[Optional[float]]) -> Optional[float]:
    """Mean of the non-None entries, None if there are none."""
    kept: List[float] = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


if __name__ == "__main__":
    print(parameter_error({"a": 2.0}, {"a": 1.0}, ["a"]).to_dict())
    print(within_case_correlation([(5.0, 1.0), (3.0, 0.6), (1.0, 0.1)]).to_dict())
