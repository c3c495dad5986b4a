# modules/core/types.py
# -*- coding: utf-8 -*-

"""
Shared type aliases.

Importable from anywhere without creating circular dependencies.

Contents
--------
- StrPath: str or pathlib.Path
- JSON* aliases: JSONScalar, JSONValue, JSONList, JSONDict
- FloatArray: 1-D float64 numpy array (sample channels, radial profiles)
- ParamValues: parameter name → value mapping
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Union

import numpy as np
from numpy.typing import NDArray


# ────────────────────────────────────────────────────────────────────────────────
# Path-like
# ────────────────────────────────────────────────────────────────────────────────

StrPath = Union[str, Path]
"""Path representation accepted by IO helpers (string or Path)."""


# ────────────────────────────────────────────────────────────────────────────────
# JSON-like structures
# ────────────────────────────────────────────────────────────────────────────────

JSONScalar = Union[str, int, float, bool, None]
JSONValue = Union["JSONScalar", "JSONList", "JSONDict"]
JSONList = List[JSONValue]
JSONDict = Dict[str, JSONValue]


# ────────────────────────────────────────────────────────────────────────────────
# Numeric helpers
# ────────────────────────────────────────────────────────────────────────────────

Number = Union[int, float]

FloatArray = NDArray[np.float64]
"""One-dimensional float64 array."""

ParamValues = Dict[str, float]
"""Parameter name (bracketed-unit convention) → value."""
