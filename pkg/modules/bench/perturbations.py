# modules/bench/perturbations.py
# -*- coding: utf-8 -*-
"""
Perturbation rules for synthetic benchmark targets
==================================================

Two families turn a base parameter set θ_init into a hidden ground truth θ*:

- extreme mode: one parameter, large single-factor changes (20 rules)
- regular mode: predefined multi-parameter combinations (12 rules)

Each rule is a list of overrides; an override is one of

    multiply(factor) · add(delta) · set(value)

applied to the named parameter. `apply_perturbation` re-validates the result,
so physically impossible targets surface as ParameterValidationError (the
stability filter counts them as rejections).

Rule ids are stable: E01..E20 (extreme) and R01..R12 (regular).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Sequence, Tuple

from modules.core.errors import ParameterValidationError
from modules.core.types import JSONDict
from modules.infra.logging import get_logger
from modules.sim import parameters as P
from modules.sim.parameters import PhysicalParameterSet

_log = get_logger(__name__)

EXTREME = "extreme"
REGULAR = "regular"
MODES = (EXTREME, REGULAR)

MULTIPLY = "multiply"
ADD = "add"
SET = "set"
_OPS = (MULTIPLY, ADD, SET)

# Parameters the extreme-mode table perturbs; also the default search keys.
KEY_PARAMETERS: Tuple[str, ...] = (
      P.NEG_RADIUS
    , P.POS_RADIUS
    , P.NEG_THICKNESS
    , P.POS_THICKNESS
    , P.NEG_POROSITY
    , P.POS_POROSITY
    , P.NEG_BRUGGEMAN
    , P.POS_BRUGGEMAN
    , P.SEP_THICKNESS
)

__all__ = [
      "Override"
    , "PerturbationRule"
    , "extreme_rules"
    , "regular_combos"
    , "all_rules"
    , "rule_by_id"
    , "apply_perturbation"
    , "KEY_PARAMETERS"
    , "EXTREME"
    , "REGULAR"
    , "MODES"
]


# ────────────────────────────────────────────────────────────────────────────────
# Types
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class Override:
    name: str
    op: str
    value: float

    def __post_init__(self) -> None:
        if self.op not in _OPS:
            raise ValueError(f"unknown override op {self.op!r}")

    def apply(self, current: float) -> float:
        if self.op == MULTIPLY:
            return current * self.value
        if self.op == ADD:
            return current + self.value
        return float(self.value)

    def describe(self) -> str:
        if self.op == MULTIPLY:
            return f"{self.name} ×{self.value:g}"
        if self.op == ADD:
            return f"{self.name} {self.value:+g}"
        return f"{self.name} → {self.value:g}"

    def to_dict(self) -> JSONDict:
        return {"name": self.name, "op": self.op, "value": self.value}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Override":
        return cls(str(raw["name"]), str(raw["op"]), float(raw["value"]))


@dataclass(frozen=True)
class PerturbationRule:
    """
    Named set of overrides.

    Extreme-mode rules touch exactly one parameter, regular-mode rules at
    least two (checked on construction). A rule without overrides is the
    identity.
    """

    id: str
    mode: str
    description: str
    overrides: Tuple[Override, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        touched = self.touched()
        if not touched:
            return  # identity rule
        if self.mode == EXTREME and len(touched) != 1:
            raise ValueError(f"extreme rule {self.id} must touch exactly one parameter (got {touched})")
        if self.mode == REGULAR and len(touched) < 2:
            raise ValueError(f"regular rule {self.id} must touch at least two parameters (got {touched})")

    def touched(self) -> List[str]:
        seen: List[str] = []
        for o in self.overrides:
            if o.name not in seen:
                seen.append(o.name)
        return seen

    def to_dict(self) -> JSONDict:
        return {
              "id": self.id
            , "mode": self.mode
            , "description": self.description
            , "overrides": [o.to_dict() for o in self.overrides]
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "PerturbationRule":
        return cls(
              id=str(raw["id"])
            , mode=str(raw["mode"])
            , description=str(raw.get("description", ""))
            , overrides=tuple(Override.from_dict(o) for o in raw.get("overrides", []))
        )


def _mul(name: str, factor: float) -> Override:
    return Override(name, MULTIPLY, factor)


def _add(name: str, delta: float) -> Override:
    return Override(name, ADD, delta)


def _set(name: str, value: float) -> Override:
    return Override(name, SET, value)


# ────────────────────────────────────────────────────────────────────────────────
# Rule tables
# ────────────────────────────────────────────────────────────────────────────────

_EXTREME_TABLE: Tuple[Tuple[str, str, Sequence[float]], ...] = (
      (P.NEG_RADIUS, MULTIPLY, (0.5, 2.0))
    , (P.POS_RADIUS, MULTIPLY, (0.5, 2.0))
    , (P.NEG_THICKNESS, MULTIPLY, (0.75, 1.5))
    , (P.POS_THICKNESS, MULTIPLY, (0.75, 1.5))
    , (P.NEG_POROSITY, ADD, (-0.05, 0.05))
    , (P.POS_POROSITY, ADD, (-0.05, 0.05))
    , (P.NEG_BRUGGEMAN, SET, (1.5, 2.0, 2.5))
    , (P.POS_BRUGGEMAN, SET, (1.3, 1.8, 2.3))
    , (P.SEP_THICKNESS, MULTIPLY, (0.7, 1.3))
)


def extreme_rules() -> List[PerturbationRule]:
    """The 20 single-parameter rules, in table order."""
    rules: List[PerturbationRule] = []
    for name, op, values in _EXTREME_TABLE:
        for v in values:
            o = Override(name, op, v)
            rules.append(
                PerturbationRule(
                      id=f"E{len(rules) + 1:02d}"
                    , mode=EXTREME
                    , description=o.describe()
                    , overrides=(o,)
                )
            )
    return rules


def regular_combos() -> List[PerturbationRule]:
    """The 12 predefined multi-parameter combinations."""
    table: List[Tuple[str, Tuple[Override, ...]]] = [
          ("Max-power, manufacturing-plausible", (
              _mul(P.NEG_RADIUS, 0.7), _mul(P.POS_RADIUS, 0.7)
            , _mul(P.NEG_THICKNESS, 0.85), _mul(P.POS_THICKNESS, 0.9)
          ))
        , ("Energy-leaning but realistic", (
              _mul(P.NEG_THICKNESS, 1.10), _mul(P.POS_THICKNESS, 1.25)
            , _add(P.NEG_POROSITY, -0.02), _add(P.POS_POROSITY, -0.03)
          ))
        , ("Electrolyte-limited cathode", (
              _mul(P.POS_THICKNESS, 1.25), _add(P.POS_POROSITY, -0.05), _set(P.POS_BRUGGEMAN, 2.0)
          ))
        , ("Solid-diffusion-limited (both electrodes)", (
              _mul(P.NEG_RADIUS, 1.5), _mul(P.POS_RADIUS, 1.5)
          ))
        , ("Anode-biased diffusion limit", (
              _mul(P.NEG_RADIUS, 1.8), _mul(P.NEG_THICKNESS, 1.15)
          ))
        , ("Cathode-biased diffusion limit", (
              _mul(P.POS_RADIUS, 1.8), _mul(P.POS_THICKNESS, 1.15)
          ))
        , ("High porosity / low tortuosity", (
              _add(P.NEG_POROSITY, 0.06), _add(P.POS_POROSITY, 0.06)
            , _set(P.NEG_BRUGGEMAN, 1.5), _set(P.POS_BRUGGEMAN, 1.5)
          ))
        , ("Low porosity / high tortuosity", (
              _add(P.NEG_POROSITY, -0.06), _add(P.POS_POROSITY, -0.06)
            , _set(P.NEG_BRUGGEMAN, 2.0), _set(P.POS_BRUGGEMAN, 2.0)
          ))
        , ("Asymmetric particles (fast anode / slow cathode)", (
              _mul(P.NEG_RADIUS, 0.7), _mul(P.POS_RADIUS, 1.4)
          ))
        , ("Asymmetric particles (slow anode / fast cathode)", (
              _mul(P.NEG_RADIUS, 1.4), _mul(P.POS_RADIUS, 0.7)
          ))
        , ("Thin separator + thick electrodes", (
              _mul(P.SEP_THICKNESS, 0.85), _mul(P.NEG_THICKNESS, 1.20), _mul(P.POS_THICKNESS, 1.25)
          ))
        , ("Thick separator + low porosity", (
              _mul(P.SEP_THICKNESS, 1.5), _add(P.NEG_POROSITY, -0.04), _add(P.POS_POROSITY, -0.04)
          ))
    ]
    return [
        PerturbationRule(id=f"R{k:02d}", mode=REGULAR, description=desc, overrides=ovr)
        for k, (desc, ovr) in enumerate(table, start=1)
    ]


def all_rules(modes: Sequence[str] = MODES) -> List[PerturbationRule]:
    out: List[PerturbationRule] = []
    if EXTREME in modes:
        out.extend(extreme_rules())
    if REGULAR in modes:
        out.extend(regular_combos())
    return out


def rule_by_id(rule_id: str) -> PerturbationRule:
    for rule in all_rules():
        if rule.id == rule_id:
            return rule
    raise KeyError(f"no perturbation rule {rule_id!r}")


# ────────────────────────────────────────────────────────────────────────────────
# Application
# ────────────────────────────────────────────────────────────────────────────────

def apply_perturbation(base: PhysicalParameterSet, rule: PerturbationRule) -> PhysicalParameterSet:
    """
    Apply `rule` to `base` and re-validate.

    Raises
    ------
    ParameterValidationError
        Unknown parameter name, or a result violating bounds / invariants.
    """
    unknown = [o.name for o in rule.overrides if o.name not in base]
    if unknown:
        raise ParameterValidationError(f"rule {rule.id} names unknown parameters {unknown}")
    if not rule.overrides:
        return base

    updates: Dict[str, float] = {}
    for o in rule.overrides:
        updates[o.name] = o.apply(updates.get(o.name, base[o.name]))
    out = base.with_values(updates)
    _log.debug("apply_perturbation %s: %s", rule.id, updates)
    return out  # type: ignore[return-value]


if __name__ == "__main__":
    from modules.sim.parameters import load_default_cell

    cell = load_default_cell()
    for r in all_rules():
        try:
            apply_perturbation(cell, r)
            status = "ok"
        except ParameterValidationError as e:
            status = f"invalid ({e})"
        print(f"{r.id}  {r.mode:<8} {r.description:<60} {status}")
