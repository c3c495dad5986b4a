# modules/sim/ocp.py
# -*- coding: utf-8 -*-
"""
Open-circuit potential curves
=============================

Two fixed analytic forms whose coefficients ship in the parameter file
under `constants.ocp`:

- graphite (negative):
    U(x) = offset + A·exp(−r·x) − Σ a_k·tanh(b_k·(x − x_k))
- layered oxide (positive):
    U(x) = offset − slope·x − Σ a_k·tanh(b_k·(x − x_k)) − A·exp(r·(x − 1))

Both are nonincreasing in stoichiometry on [0, 1] for nonnegative
coefficients. Stoichiometry outside [0, 1] raises DomainError.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Mapping, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike

from modules.core.config import DEFAULT_PARAMETER_FILE
from modules.core.errors import DomainError
from modules.infra.jsonl import read_json

__all__ = [
      "OcpCurve"
    , "ocp_negative"
    , "ocp_positive"
    , "default_curves"
]


@dataclass(frozen=True)
class OcpCurve:
    form: str
    offset: float
    exp_amplitude: float
    exp_rate: float
    tanh_terms: Tuple[Tuple[float, float, float], ...]
    slope: float = 0.0
    value_at_0: Optional[float] = None
    value_at_1: Optional[float] = None

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "OcpCurve":
        form = str(raw["form"])
        if form not in ("graphite", "layered_oxide"):
            raise DomainError(f"unknown OCP form {form!r}")
        return cls(
              form=form
            , offset=float(raw["offset"])
            , exp_amplitude=float(raw.get("exp_amplitude", 0.0))
            , exp_rate=float(raw.get("exp_rate", 0.0))
            , tanh_terms=tuple(tuple(float(v) for v in t) for t in raw.get("tanh_terms", ()))
            , slope=float(raw.get("slope", 0.0))
            , value_at_0=raw.get("value_at_0")
            , value_at_1=raw.get("value_at_1")
        )

    def __call__(self, x: ArrayLike) -> Any:
        xs = np.asarray(x, dtype=float)
        if np.any(~np.isfinite(xs)) or np.any(xs < 0.0) or np.any(xs > 1.0):
            raise DomainError(f"stoichiometry outside [0, 1]: {x!r}")

        u = self.offset - self.slope * xs
        for amp, rate, centre in self.tanh_terms:
            u = u - amp * np.tanh(rate * (xs - centre))
        if self.form == "graphite":
            u = u + self.exp_amplitude * np.exp(-self.exp_rate * xs)
        else:
            u = u - self.exp_amplitude * np.exp(self.exp_rate * (xs - 1.0))
        return float(u) if u.ndim == 0 else u


@lru_cache(maxsize=1)
def default_curves() -> Tuple[OcpCurve, OcpCurve]:
    """(negative, positive) curves from the shipped parameter file."""
    raw = read_json(DEFAULT_PARAMETER_FILE)["constants"]["ocp"]
    return OcpCurve.from_dict(raw["negative"]), OcpCurve.from_dict(raw["positive"])


def curves_from_constants(constants: Mapping[str, Any]) -> Tuple[OcpCurve, OcpCurve]:
    """Curves carried by a parameter set; falls back to the shipped ones."""
    raw = constants.get("ocp") if constants else None
    if not raw:
        return default_curves()
    return OcpCurve.from_dict(raw["negative"]), OcpCurve.from_dict(raw["positive"])


def ocp_negative(stoichiometry: ArrayLike, curve: Optional[OcpCurve] = None) -> Any:
    return (curve or default_curves()[0])(stoichiometry)


def ocp_positive(stoichiometry: ArrayLike, curve: Optional[OcpCurve] = None) -> Any:
    return (curve or default_curves()[1])(stoichiometry)


if __name__ == "__main__":
    xs = np.linspace(0.0, 1.0, 11)
    for x, un, up in zip(xs, ocp_negative(xs), ocp_positive(xs)):
        print(f"x={x:.1f}  U_neg={un:.4f} V  U_pos={up:.4f} V")
