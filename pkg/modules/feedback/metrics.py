# modules/feedback/metrics.py
# -*- coding: utf-8 -*-
"""
Error metrics shared by the feedback residuals and the evaluation reports.

MAPE ignores samples whose observed magnitude is below
`mask_rel × max |observed|` (the current channel crosses zero at every
phase transition); RMSE always uses every sample.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np

from modules.core.errors import ContractError

MAPE_MASK_REL = 1e-3

ArrayLike = Union[Sequence[float], np.ndarray]

__all__ = ["mape", "rmse", "near_zero_mask", "MAPE_MASK_REL"]


def _pair(sim: ArrayLike, obs: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(sim, dtype=float)
    o = np.asarray(obs, dtype=float)
    if s.shape != o.shape:
        raise ContractError(f"series lengths differ: {s.shape} vs {o.shape}")
    if s.size < 1:
        raise ContractError("series must contain at least one sample")
    return s, o


def near_zero_mask(obs: ArrayLike, mask_rel: float = MAPE_MASK_REL) -> np.ndarray:
    """True where |obs| is large enough to divide by."""
    o = np.abs(np.asarray(obs, dtype=float))
    if o.size == 0:
        return np.zeros(0, dtype=bool)
    scale = float(o.max())
    return o > mask_rel * scale


def mape(sim: ArrayLike, obs: ArrayLike, *, mask_rel: float = MAPE_MASK_REL) -> Optional[float]:
    """
    Mean absolute percentage error [%] of `sim` against `obs`.

    Returns None when every sample is masked.

    Raises
    ------
    ContractError
        Different lengths or empty series.
    """
    s, o = _pair(sim, obs)
    keep = near_zero_mask(o, mask_rel)
    if not keep.any():
        return None
    return float(100.0 * np.mean(np.abs(s[keep] - o[keep]) / np.abs(o[keep])))


def rmse(sim: ArrayLike, obs: ArrayLike) -> float:
    """Root mean squared error in channel units."""
    s, o = _pair(sim, obs)
    return float(np.sqrt(np.mean((s - o) ** 2)))
