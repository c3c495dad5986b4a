# modules/proposer/updates.py
# -*- coding: utf-8 -*-
"""
Parameter updates: parsing, serialization, projection and damping
=================================================================

Every proposer ends in a ParameterUpdate; only `apply_update()` turns an
update into a new parameter set, so bounds and physical invariants are
enforced at a single place.

Wire format
-----------
    {"updated_params": {"Positive electrode reaction rate [s^-1]": "*1.2",
                        "Negative electrode porosity": 0.35},
     "rationale": "..."}

Numbers are absolute values; strings "*x" are multiplicative factors. A
bare object without "updated_params" is accepted as the parameter map.

Projection
----------
For each directive the candidate v' is damped to θ_i + η·(v' − θ_i) and
clamped to [lower, upper]. Keys are then applied one at a time; when a key
breaks a cross-parameter invariant (e.g. c0 < c_max) its move is shortened
by bisection to the farthest feasible point and a "projected:<key>" event
is emitted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from modules.core.config import StepSizeDefaults, get_step_size_defaults
from modules.core.errors import ParameterValidationError, ParseError, RejectedKeyError
from modules.core.types import JSONDict
from modules.infra.jsonl import dumps_stable
from modules.infra.logging import get_logger
from modules.sim.parameters import ParameterSet

_log = get_logger(__name__)

ABSOLUTE = "absolute"
MULTIPLICATIVE = "multiplicative"

_BISECT_ITERS = 60

__all__ = [
      "Directive"
    , "ParameterUpdate"
    , "parse_update"
    , "extract_json_values"
    , "apply_update"
    , "StepSizeSchedule"
    , "ABSOLUTE"
    , "MULTIPLICATIVE"
]


# ────────────────────────────────────────────────────────────────────────────────
# Types
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Directive:
    kind: str
    value: float

    def __post_init__(self) -> None:
        if self.kind not in (ABSOLUTE, MULTIPLICATIVE):
            raise ValueError(f"unknown directive kind {self.kind!r}")
        if not math.isfinite(self.value):
            raise ParameterValidationError(f"directive value {self.value} is not finite")
        if self.kind == MULTIPLICATIVE and self.value <= 0.0:
            raise ParameterValidationError(f"multiplicative factor must be > 0 (got {self.value})")

    def target(self, current: float) -> float:
        return self.value if self.kind == ABSOLUTE else current * self.value

    def to_wire(self) -> Any:
        return self.value if self.kind == ABSOLUTE else f"*{self.value!r}"

    @classmethod
    def from_wire(cls, raw: Any, *, name: str = "") -> "Directive":
        if isinstance(raw, bool) or raw is None:
            raise ParseError(f"directive for {name!r} is not a number: {raw!r}")
        if isinstance(raw, (int, float)):
            return cls(ABSOLUTE, float(raw))
        if isinstance(raw, str):
            text = raw.strip()
            kind = MULTIPLICATIVE if text.startswith("*") else ABSOLUTE
            try:
                value = float(text[1:].strip() if kind == MULTIPLICATIVE else text)
            except ValueError as e:
                raise ParseError(f"directive for {name!r} unreadable: {raw!r}") from e
            return cls(kind, value)
        raise ParseError(f"directive for {name!r} has unsupported type {type(raw).__name__}")


@dataclass(frozen=True)
class ParameterUpdate:
    """Map parameter name → Directive, plus optional rationale text."""

    directives: Dict[str, Directive]
    rationale: str = ""

    def __post_init__(self) -> None:
        if not self.directives:
            raise ParameterValidationError("a parameter update needs at least one directive")

    def keys(self) -> List[str]:
        return list(self.directives)

    def to_dict(self) -> JSONDict:
        out: JSONDict = {"updated_params": {k: d.to_wire() for k, d in self.directives.items()}}
        if self.rationale:
            out["rationale"] = self.rationale
        return out

    def serialize(self) -> str:
        return dumps_stable(self.to_dict())

    @classmethod
    def absolute(cls, values: Mapping[str, float], rationale: str = "") -> "ParameterUpdate":
        return cls({k: Directive(ABSOLUTE, float(v)) for k, v in values.items()}, rationale)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], search_keys: Optional[Iterable[str]] = None) -> "ParameterUpdate":
        return _update_from_object(raw, search_keys)


# ────────────────────────────────────────────────────────────────────────────────
# Parsing
# ────────────────────────────────────────────────────────────────────────────────

def extract_json_values(text: str) -> List[Any]:
    """
    Top-level JSON objects and arrays embedded in free text, in order of
    appearance. Nested values are returned as part of their parent only.
    """
    decoder = json.JSONDecoder()
    found: List[Any] = []
    i, n = 0, len(text)
    while i < n:
        if text[i] in "{[":
            try:
                obj, end = decoder.raw_decode(text, i)
            except json.JSONDecodeError:
                i += 1
                continue
            found.append(obj)
            i = end
        else:
            i += 1
    return found


def _update_from_object(obj: Mapping[str, Any], search_keys: Optional[Iterable[str]]) -> ParameterUpdate:
    body = obj.get("updated_params")
    if isinstance(body, Mapping):
        params = dict(body)
    else:
        params = {k: v for k, v in obj.items() if k not in ("rationale", "updated_params")}
    if not params:
        raise ParseError("JSON object carries no parameter directives")

    if search_keys is not None:
        allowed = set(search_keys)
        offenders = [k for k in params if k not in allowed]
        if offenders:
            raise RejectedKeyError(offenders)

    directives = {str(k): Directive.from_wire(v, name=str(k)) for k, v in params.items()}
    rationale = obj.get("rationale", "")
    return ParameterUpdate(directives, rationale if isinstance(rationale, str) else dumps_stable(rationale))


def parse_update(text: str, search_keys: Optional[Iterable[str]] = None) -> ParameterUpdate:
    """
    Extract the last well-formed JSON object from `text` as a ParameterUpdate.

    Raises
    ------
    ParseError
        No JSON object, or one without usable directives.
    RejectedKeyError
        Names outside `search_keys` (when given).
    ParameterValidationError
        Nonpositive factor or non-finite value.
    """
    objects = [v for v in extract_json_values(text or "") if isinstance(v, dict)]
    if not objects:
        raise ParseError("no JSON object found in proposer text")
    return _update_from_object(objects[-1], search_keys)


# ────────────────────────────────────────────────────────────────────────────────
# Projection
# ────────────────────────────────────────────────────────────────────────────────

def _farthest_feasible(params: ParameterSet, key: str, target: float) -> float:
    """Largest move from params[key] toward target keeping params valid (params itself valid)."""
    start = params[key]
    lo, hi = 0.0, 1.0
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if params.with_values({key: start + mid * (target - start)}, validate=False).is_valid():
            lo = mid
        else:
            hi = mid
    return start + lo * (target - start)


def apply_update(
      theta: ParameterSet
    , update: ParameterUpdate
    , eta: float = 1.0
    , *
    , events: Optional[List[str]] = None
) -> ParameterSet:
    """
    Damped, projected application of `update` to `theta`.

    Parameters
    ----------
    theta : ParameterSet
        Current parameters (physical or degradation).
    update : ParameterUpdate
    eta : float
        Step size in (0, 1].
    events : list | None
        Receives "clamped:<key>", "projected:<key>" and "nonfinite:<key>".

    Raises
    ------
    ValueError
        eta outside (0, 1].
    RejectedKeyError
        Update names a parameter theta does not have.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"step size must be in (0, 1] (got {eta})")
    unknown = [k for k in update.directives if k not in theta]
    if unknown:
        raise RejectedKeyError(unknown)
    sink: List[str] = [] if events is None else events

    targets: List[Tuple[str, float]] = []
    for key, directive in update.directives.items():
        current = theta[key]
        candidate = directive.target(current)
        value = candidate if eta == 1.0 else current + eta * (candidate - current)
        if not math.isfinite(value):
            sink.append(f"nonfinite:{key}")
            continue
        lower, upper = theta.bounds(key)
        clamped = min(max(value, lower), upper)
        if clamped != value:
            sink.append(f"clamped:{key}")
        targets.append((key, clamped))

    start_valid = theta.is_valid()
    params = theta
    for key, value in targets:
        trial = params.with_values({key: value}, validate=False)
        if not start_valid or trial.is_valid():
            params = trial
            continue
        feasible = _farthest_feasible(params, key, value)
        params = params.with_values({key: feasible}, validate=False)
        sink.append(f"projected:{key}")

    if sink:
        _log.warning("apply_update: %s", ", ".join(sink))
    _log.debug("apply_update(eta=%.3g): %s", eta, params.subset_values(k for k, _ in targets))
    return params


# ────────────────────────────────────────────────────────────────────────────────
# Step size
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class StepSizeSchedule:
    """
    η_t: starts at `start`; halves (floor `floor`) after a failed round or one
    whose loss worsened by more than `worsen_ratio` relative to the previous
    comparable round; doubles toward `start` after `grow_after` consecutive
    improvements.
    """

    defaults: StepSizeDefaults = field(default_factory=get_step_size_defaults)
    eta: float = field(init=False)
    _streak: int = field(default=0, init=False, repr=False)
    _last: Optional[float] = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self.eta = self.defaults.start

    def _shrink(self) -> None:
        self.eta = max(self.defaults.floor, 0.5 * self.eta)
        self._streak = 0

    def observe(self, total_mape: Optional[float], success: bool) -> float:
        """Update η from the loss of the round just evaluated; returns the new η."""
        if not success or total_mape is None or not math.isfinite(total_mape):
            self._shrink()
            return self.eta
        last = self._last
        if last is not None:
            if total_mape > last * (1.0 + self.defaults.worsen_ratio):
                self._shrink()
            elif total_mape < last:
                self._streak += 1
                if self._streak >= self.defaults.grow_after:
                    self.eta = min(self.defaults.start, 2.0 * self.eta)
                    self._streak = 0
            else:
                self._streak = 0
        self._last = total_mape
        return self.eta

    def state(self) -> JSONDict:
        return {"eta": self.eta, "streak": self._streak, "last": self._last}


if __name__ == "__main__":
    from modules.sim.parameters import WIDTH, load_default_cell

    u = parse_update('reasoning... {"updated_params": {"Electrode width [m]": "*1.2"}, "rationale": "more capacity"}')
    print(u.serialize())
    print(apply_update(load_default_cell(), u, 0.5)[WIDTH])
