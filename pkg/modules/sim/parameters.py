# modules/sim/parameters.py
# -*- coding: utf-8 -*-
"""
Parameter sets (physical cell parameters and SEI degradation parameters)
=======================================================================

Purpose
-------
Named, unit-annotated parameters with bounds, loaded from and written to
human-editable JSON files:

    {
      "name": "default_cell",
      "parameters": {
        "Negative particle radius [m]": {"value": 5.86e-06, "unit": "m",
                                         "lower": 1e-06, "upper": 3e-05},
        ...
      },
      "constants": { ...curve coefficients, stoichiometry windows... }
    }

Names follow the bracketed-unit convention used throughout prompts and
update directives (e.g. "Negative particle radius [m]").

Public API
----------
- ParameterEntry (frozen dataclass)
- ParameterSet: generic container (bounds checks, updates, JSON io)
- PhysicalParameterSet: adds electrochemical invariants
- DegradationParameterSet: adds SEI invariants
- load_parameter_set(path) / load_default_cell() / load_default_degradation()
- module-level name constants (NEG_RADIUS, WIDTH, SEI_RATE, ...)

Design notes
------------
- Sets are immutable: `with_values()` returns a new set and re-validates.
- Validation raises ParameterValidationError listing *every* violation.
- `constants` holds fixed, non-searchable data (OCP coefficients, usable
  stoichiometry windows) and travels with the set.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, ClassVar, Dict, Iterable, List, Mapping, Optional, Tuple

from modules.core.config import DEFAULT_DEGRADATION_FILE, DEFAULT_PARAMETER_FILE
from modules.core.errors import ParameterValidationError
from modules.core.types import JSONDict, ParamValues, StrPath
from modules.infra.jsonl import read_json, write_json
from modules.infra.logging import get_logger

_log = get_logger(__name__)


# ────────────────────────────────────────────────────────────────────────────────
# Parameter names
# ────────────────────────────────────────────────────────────────────────────────

NEG_RADIUS = "Negative particle radius [m]"
POS_RADIUS = "Positive particle radius [m]"
NEG_THICKNESS = "Negative electrode thickness [m]"
POS_THICKNESS = "Positive electrode thickness [m]"
SEP_THICKNESS = "Separator thickness [m]"
NEG_POROSITY = "Negative electrode porosity"
POS_POROSITY = "Positive electrode porosity"
SEP_POROSITY = "Separator porosity"
NEG_BRUGGEMAN = "Negative electrode Bruggeman coefficient"
POS_BRUGGEMAN = "Positive electrode Bruggeman coefficient"
SEP_BRUGGEMAN = "Separator Bruggeman coefficient"
WIDTH = "Electrode width [m]"
HEIGHT = "Electrode height [m]"
NEG_ACTIVE = "Negative electrode active material volume fraction"
POS_ACTIVE = "Positive electrode active material volume fraction"
NEG_CMAX = "Maximum concentration in negative electrode [mol.m-3]"
POS_CMAX = "Maximum concentration in positive electrode [mol.m-3]"
NEG_C0 = "Initial concentration in negative electrode [mol.m-3]"
POS_C0 = "Initial concentration in positive electrode [mol.m-3]"
NEG_RATE = "Negative electrode reaction rate [s^-1]"
POS_RATE = "Positive electrode reaction rate [s^-1]"
NEG_DIFFUSIVITY = "Negative particle diffusivity [m2.s-1]"
POS_DIFFUSIVITY = "Positive particle diffusivity [m2.s-1]"
CONDUCTIVITY = "Electrolyte conductivity [S.m-1]"
ELECTROLYTE_CONC = "Initial concentration in electrolyte [mol.m-3]"
TEMPERATURE = "Ambient temperature [K]"
LOWER_CUTOFF = "Lower voltage cut-off [V]"
UPPER_CUTOFF = "Upper voltage cut-off [V]"
NOMINAL_CAPACITY = "Nominal cell capacity [A.h]"

PHYSICAL_NAMES: Tuple[str, ...] = (
      NEG_RADIUS, POS_RADIUS
    , NEG_THICKNESS, POS_THICKNESS, SEP_THICKNESS
    , NEG_POROSITY, POS_POROSITY, SEP_POROSITY
    , NEG_BRUGGEMAN, POS_BRUGGEMAN, SEP_BRUGGEMAN
    , WIDTH, HEIGHT
    , NEG_ACTIVE, POS_ACTIVE
    , NEG_CMAX, POS_CMAX, NEG_C0, POS_C0
    , NEG_RATE, POS_RATE, NEG_DIFFUSIVITY, POS_DIFFUSIVITY
    , CONDUCTIVITY, ELECTROLYTE_CONC, TEMPERATURE
    , LOWER_CUTOFF, UPPER_CUTOFF, NOMINAL_CAPACITY
)

_LENGTHS = (NEG_RADIUS, POS_RADIUS, NEG_THICKNESS, POS_THICKNESS, SEP_THICKNESS, WIDTH, HEIGHT)
_STRICTLY_POSITIVE = (
      NEG_CMAX, POS_CMAX, NEG_RATE, POS_RATE, NEG_DIFFUSIVITY, POS_DIFFUSIVITY
    , CONDUCTIVITY, ELECTROLYTE_CONC, TEMPERATURE, NOMINAL_CAPACITY
)

SEI_RATE = "SEI kinetic rate constant [m.s-1]"
BULK_SOLVENT = "Bulk solvent concentration [mol.m-3]"
EC_INITIAL = "EC initial concentration in electrolyte [mol.m-3]"
SEI_SOLVENT_DIFFUSIVITY = "SEI solvent diffusivity [m2.s-1]"
EC_DIFFUSIVITY = "EC diffusivity [m2.s-1]"
SEI_INITIAL_THICKNESS = "Initial SEI thickness [m]"
SEI_MOLAR_VOLUME = "SEI partial molar volume [m3.mol-1]"
LI_PER_SEI = "Ratio of lithium moles to SEI moles"

DEGRADATION_NAMES: Tuple[str, ...] = (
      SEI_RATE, BULK_SOLVENT, EC_INITIAL, SEI_SOLVENT_DIFFUSIVITY
    , EC_DIFFUSIVITY, SEI_INITIAL_THICKNESS, SEI_MOLAR_VOLUME, LI_PER_SEI
)


__all__ = [
      "ParameterEntry"
    , "ParameterSet"
    , "PhysicalParameterSet"
    , "DegradationParameterSet"
    , "load_parameter_set"
    , "load_default_cell"
    , "load_default_degradation"
    , "PHYSICAL_NAMES"
    , "DEGRADATION_NAMES"
]


# ────────────────────────────────────────────────────────────────────────────────
# Entries and the generic container
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ParameterEntry:
    name: str
    value: float
    unit: str = ""
    lower: float = -math.inf
    upper: float = math.inf

    def to_dict(self) -> JSONDict:
        return {"value": self.value, "unit": self.unit, "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, name: str, raw: Mapping[str, Any]) -> "ParameterEntry":
        return cls(
              name=name
            , value=float(raw["value"])
            , unit=str(raw.get("unit", ""))
            , lower=float(raw.get("lower", -math.inf))
            , upper=float(raw.get("upper", math.inf))
        )


@dataclass(frozen=True)
class ParameterSet:
    """
    Ordered, immutable collection of bounded parameters.

    Subclasses extend `_violations()` with their physical invariants and
    list their mandatory names in `REQUIRED`.
    """

    entries: Dict[str, ParameterEntry]
    name: str = "unnamed"
    constants: Dict[str, Any] = field(default_factory=dict)

    REQUIRED: ClassVar[Tuple[str, ...]] = ()
    KIND: ClassVar[str] = "generic"

    # ── mapping-like access ─────────────────────────────────────────────────

    def __getitem__(self, key: str) -> float:
        return self.entries[key].value

    def __contains__(self, key: object) -> bool:
        return key in self.entries

    def keys(self) -> List[str]:
        return list(self.entries)

    def values(self) -> ParamValues:
        return {k: e.value for k, e in self.entries.items()}

    def bounds(self, key: str) -> Tuple[float, float]:
        e = self.entries[key]
        return e.lower, e.upper

    def unit(self, key: str) -> str:
        return self.entries[key].unit

    # ── validation ──────────────────────────────────────────────────────────

    def _violations(self, **_: Any) -> List[str]:
        out: List[str] = []
        for key in self.REQUIRED:
            if key not in self.entries:
                out.append(f"missing parameter {key!r}")
        for key, e in self.entries.items():
            if not math.isfinite(e.value):
                out.append(f"{key!r} is not finite ({e.value})")
            elif e.value < e.lower or e.value > e.upper:
                out.append(f"{key!r}={e.value:.6g} outside [{e.lower:.6g}, {e.upper:.6g}]")
        return out

    def violations(self, **kwargs: Any) -> List[str]:
        """All invariant violations (empty when valid)."""
        return self._violations(**kwargs)

    def validate(self, **kwargs: Any) -> "ParameterSet":
        problems = self._violations(**kwargs)
        if problems:
            _log.debug("validate(%s) failed: %s", self.name, problems)
            raise ParameterValidationError(
                f"parameter set {self.name!r} invalid: " + "; ".join(problems)
            )
        return self

    def is_valid(self, **kwargs: Any) -> bool:
        return not self._violations(**kwargs)

    # ── updates ─────────────────────────────────────────────────────────────

    def with_values(
          self
        , updates: Mapping[str, float]
        , *
        , validate: bool = True
    ) -> "ParameterSet":
        """Return a copy with new values (names must already exist)."""
        unknown = [k for k in updates if k not in self.entries]
        if unknown:
            raise ParameterValidationError(f"unknown parameter(s): {unknown}")
        entries = dict(self.entries)
        for key, value in updates.items():
            entries[key] = replace(entries[key], value=float(value))
        out = replace(self, entries=entries)
        if validate:
            out.validate()
        return out

    def with_entry(
          self
        , key: str
        , *
        , value: Optional[float] = None
        , lower: Optional[float] = None
        , upper: Optional[float] = None
    ) -> "ParameterSet":
        """Copy with one entry's value and/or bounds replaced (no validation)."""
        e = self.entries[key]
        entries = dict(self.entries)
        entries[key] = replace(
              e
            , value=e.value if value is None else float(value)
            , lower=e.lower if lower is None else float(lower)
            , upper=e.upper if upper is None else float(upper)
        )
        return replace(self, entries=entries)

    def subset_values(self, keys: Iterable[str]) -> ParamValues:
        return {k: self.entries[k].value for k in keys}

    # ── serialization ───────────────────────────────────────────────────────

    def to_dict(self) -> JSONDict:
        return {
              "kind": self.KIND
            , "name": self.name
            , "parameters": {k: e.to_dict() for k, e in self.entries.items()}
            , "constants": copy.deepcopy(self.constants)
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ParameterSet":
        params = raw.get("parameters")
        if not isinstance(params, Mapping):
            raise ParameterValidationError("parameter file lacks a 'parameters' object")
        entries = {k: ParameterEntry.from_dict(k, v) for k, v in params.items()}
        return cls(
              entries=entries
            , name=str(raw.get("name", "unnamed"))
            , constants=copy.deepcopy(dict(raw.get("constants", {})))
        )

    def to_json(self, path: StrPath) -> Path:
        return write_json(path, self.to_dict())



# ────────────────────────────────────────────────────────────────────────────────
# Physical cell parameters
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PhysicalParameterSet(ParameterSet):
    """
    Cell parameters for the single-particle model.

    Invariants: bounds; initial < maximum concentration per electrode;
    porosity and active-material fraction in (0, 1) with their sum ≤ 1;
    lengths > 0; lower cut-off < upper cut-off.
    """

    REQUIRED: ClassVar[Tuple[str, ...]] = PHYSICAL_NAMES
    KIND: ClassVar[str] = "physical"

    def _violations(self, *, allow_zero_active_material: bool = False, **kw: Any) -> List[str]:
        out = super()._violations(**kw)
        if any(msg.startswith("missing") for msg in out):
            return out
        v = self.values()

        for c0, cmax in ((NEG_C0, NEG_CMAX), (POS_C0, POS_CMAX)):
            if not v[c0] < v[cmax]:
                out.append(f"maximum concentration must be greater than the initial concentration ({c0!r})")
            if v[c0] < 0.0:
                out.append(f"{c0!r} negative")

        for por in (NEG_POROSITY, POS_POROSITY, SEP_POROSITY):
            if not 0.0 < v[por] < 1.0:
                out.append(f"{por!r}={v[por]:.4g} not in (0, 1)")

        for act, por in ((NEG_ACTIVE, NEG_POROSITY), (POS_ACTIVE, POS_POROSITY)):
            lo_ok = v[act] >= 0.0 if allow_zero_active_material else v[act] > 0.0
            if not (lo_ok and v[act] < 1.0):
                out.append(f"{act!r}={v[act]:.4g} not in (0, 1)")
            if v[act] + v[por] > 1.0 + 1e-12:
                out.append(f"{act!r} + {por!r} exceeds 1")

        for b in (NEG_BRUGGEMAN, POS_BRUGGEMAN, SEP_BRUGGEMAN):
            if v[b] < 1.0:
                out.append(f"{b!r} below 1")

        for key in _LENGTHS + _STRICTLY_POSITIVE:
            if not v[key] > 0.0:
                out.append(f"{key!r} must be strictly positive")

        if not v[LOWER_CUTOFF] < v[UPPER_CUTOFF]:
            out.append("lower voltage cut-off must be below the upper cut-off")
        return out

    # convenience for the simulator
    def electrode_area(self) -> float:
        return self[WIDTH] * self[HEIGHT]

    def one_c_current(self) -> float:
        """Current [A] that discharges the nominal capacity in one hour."""
        return self[NOMINAL_CAPACITY]


# ────────────────────────────────────────────────────────────────────────────────
# Degradation parameters
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class DegradationParameterSet(ParameterSet):
    """SEI parameters; all nonnegative, initial thickness and Li/SEI ratio > 0."""

    REQUIRED: ClassVar[Tuple[str, ...]] = DEGRADATION_NAMES
    KIND: ClassVar[str] = "degradation"

    def _violations(self, **kw: Any) -> List[str]:
        out = super()._violations(**kw)
        if any(msg.startswith("missing") for msg in out):
            return out
        v = self.values()
        for key in DEGRADATION_NAMES:
            if v[key] < 0.0:
                out.append(f"{key!r} negative")
        if not v[SEI_INITIAL_THICKNESS] > 0.0:
            out.append(f"{SEI_INITIAL_THICKNESS!r} must be > 0")
        if not v[LI_PER_SEI] > 0.0:
            out.append(f"{LI_PER_SEI!r} must be > 0")
        return out


# ────────────────────────────────────────────────────────────────────────────────
# Loading
# ────────────────────────────────────────────────────────────────────────────────

_KINDS = {
      "physical": PhysicalParameterSet
    , "degradation": DegradationParameterSet
    , "generic": ParameterSet
}


def parameter_set_from_dict(raw: Mapping[str, Any]) -> ParameterSet:
    """Dispatch on the `kind` field (defaults to physical)."""
    kind = str(raw.get("kind", "physical"))
    try:
        cls = _KINDS[kind]
    except KeyError as e:
        raise ParameterValidationError(f"unknown parameter-set kind {kind!r}") from e
    return cls.from_dict(raw)


def load_parameter_set(path: StrPath, *, validate: bool = True) -> ParameterSet:
    raw = read_json(path)
    pset = parameter_set_from_dict(raw)
    if validate:
        pset.validate()
    _log.debug("load_parameter_set(%s) → %s (%d entries)", path, pset.name, len(pset.entries))
    return pset


@lru_cache(maxsize=4)
def _cached(path: str) -> ParameterSet:
    return load_parameter_set(path)


def load_default_cell() -> PhysicalParameterSet:
    pset = _cached(str(DEFAULT_PARAMETER_FILE))
    assert isinstance(pset, PhysicalParameterSet)
    return pset


def load_default_degradation() -> DegradationParameterSet:
    pset = _cached(str(DEFAULT_DEGRADATION_FILE))
    assert isinstance(pset, DegradationParameterSet)
    return pset
