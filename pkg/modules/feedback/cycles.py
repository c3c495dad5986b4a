# modules/feedback/cycles.py
# -*- coding: utf-8 -*-
"""Informative-cycle selection for long-horizon (degradation) feedback."""

from __future__ import annotations

from typing import List, Sequence, Union

import numpy as np

from modules.core.models import CycleSeries

__all__ = ["select_cycle_indices"]


def select_cycle_indices(series: Union[CycleSeries, Sequence[float]], k: int) -> List[int]:
    """
    Pick `k` cycle indices (1-based): first, last, and the k − 2 cycles
    with the largest |second difference| of discharge capacity.

    Ties go to the lower index. When k ≥ len(series) every index is returned.

    Raises
    ------
    ValueError
        k < 2 or an empty series.
    """
    caps = series.capacities() if isinstance(series, CycleSeries) else np.asarray(series, dtype=float)
    n = int(caps.size)
    if k < 2:
        raise ValueError(f"k must be ≥ 2 (got {k})")
    if n == 0:
        raise ValueError("cannot select cycles from an empty series")
    if k >= n:
        return list(range(1, n + 1))

    # curvature[j] belongs to cycle j + 2 (1-based interior cycles 2..n-1)
    curvature = np.abs(np.diff(caps, n=2))
    order = sorted(range(curvature.size), key=lambda j: (-curvature[j], j))
    interior = [j + 2 for j in order[: k - 2]]
    return sorted({1, n, *interior})
