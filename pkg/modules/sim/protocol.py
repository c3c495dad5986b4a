# modules/sim/protocol.py
# -*- coding: utf-8 -*-
"""
Cycling protocols
=================

A Protocol is an ordered tuple of steps:

- ConstantCurrent(c_rate, direction, voltage_cutoff=None)
- ConstantVoltage(hold_voltage, current_cutoff=0.05)
- Rest(duration_s)

Unset cutoffs fall back to the parameter set's voltage window. Unset step
durations and sample intervals are derived from SimulationDefaults:

    CC max duration  = cc_duration_factor · 3600 · capacity_ratio / c_rate
                       (capacity_ratio = step capacity bound / nominal capacity)
    CV max duration  = cv_max_duration_s
    sample interval  = nominal step max duration / samples_per_step

Protocols serialize to small JSON documents:

    {"name": "standard_1C", "steps": [{"type": "cc", "c_rate": 1.0,
     "direction": "discharge"}, {"type": "rest", "duration_s": 600}, ...]}
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from modules.core.config import SimulationDefaults, get_simulation_defaults
from modules.core.errors import ProtocolValidationError
from modules.core.types import JSONDict, StrPath
from modules.infra.jsonl import read_json, write_json
from modules.sim import parameters as P
from modules.sim.parameters import PhysicalParameterSet

CC_DISCHARGE = "cc_discharge"
CC_CHARGE = "cc_charge"
CV = "cv"
REST = "rest"

__all__ = [
      "ConstantCurrent"
    , "ConstantVoltage"
    , "Rest"
    , "Step"
    , "Protocol"
    , "standard_protocol"
    , "capacity_check_protocol"
    , "CC_DISCHARGE"
    , "CC_CHARGE"
    , "CV"
    , "REST"
]


@dataclass(frozen=True)
class ConstantCurrent:
    c_rate: float
    direction: str = "discharge"
    voltage_cutoff: Optional[float] = None
    max_duration_s: Optional[float] = None
    sample_interval_s: Optional[float] = None

    @property
    def kind(self) -> str:
        return CC_DISCHARGE if self.direction == "discharge" else CC_CHARGE

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "discharge" else -1.0


@dataclass(frozen=True)
class ConstantVoltage:
    hold_voltage: Optional[float] = None
    current_cutoff: float = 0.05
    max_duration_s: Optional[float] = None
    sample_interval_s: Optional[float] = None

    @property
    def kind(self) -> str:
        return CV


@dataclass(frozen=True)
class Rest:
    duration_s: float
    sample_interval_s: Optional[float] = None

    @property
    def kind(self) -> str:
        return REST


Step = Union[ConstantCurrent, ConstantVoltage, Rest]

_TYPE_TAGS = {ConstantCurrent: "cc", ConstantVoltage: "cv", Rest: "rest"}
_TAG_TYPES = {v: k for k, v in _TYPE_TAGS.items()}


def _positive(value: Optional[float]) -> bool:
    return value is None or (math.isfinite(value) and value > 0.0)


@dataclass(frozen=True)
class Protocol:
    """
    Ordered steps plus optional protocol-wide duration / sampling overrides.
    """

    steps: Tuple[Step, ...]
    name: str = "protocol"
    max_step_duration_s: Optional[float] = None
    sample_interval_s: Optional[float] = None
    defaults: SimulationDefaults = field(default_factory=get_simulation_defaults, compare=False, repr=False)

    # ── derived timing ──────────────────────────────────────────────────────

    def step_max_duration(self, step: Step, capacity_ratio: float = 1.0) -> float:
        if isinstance(step, Rest):
            return float(step.duration_s)
        if step.max_duration_s is not None:
            return float(step.max_duration_s)
        if self.max_step_duration_s is not None:
            return float(self.max_step_duration_s)
        if isinstance(step, ConstantCurrent):
            return self.defaults.cc_duration_factor * 3600.0 * max(1.0, capacity_ratio) / step.c_rate
        return self.defaults.cv_max_duration_s

    def step_sample_interval(self, step: Step) -> float:
        if step.sample_interval_s is not None:
            return float(step.sample_interval_s)
        if self.sample_interval_s is not None:
            return float(self.sample_interval_s)
        return self.step_max_duration(step) / self.defaults.samples_per_step

    def step_kinds(self) -> List[str]:
        return [s.kind for s in self.steps]

    def voltage_cutoff(self, step: ConstantCurrent, params: PhysicalParameterSet) -> float:
        if step.voltage_cutoff is not None:
            return float(step.voltage_cutoff)
        return params[P.LOWER_CUTOFF] if step.direction == "discharge" else params[P.UPPER_CUTOFF]

    def hold_voltage(self, step: ConstantVoltage, params: PhysicalParameterSet) -> float:
        return params[P.UPPER_CUTOFF] if step.hold_voltage is None else float(step.hold_voltage)

    # ── validation ──────────────────────────────────────────────────────────

    def validate(self, params: Optional[PhysicalParameterSet] = None) -> "Protocol":
        """
        Raise ProtocolValidationError on an empty protocol, nonpositive
        rates or durations, or cutoffs outside the cell's voltage window.
        """
        problems: List[str] = []
        if not self.steps:
            problems.append("protocol has no steps")
        if not (_positive(self.max_step_duration_s) and _positive(self.sample_interval_s)):
            problems.append("protocol-level duration and sample interval must be > 0")

        lo = params[P.LOWER_CUTOFF] if params is not None else -math.inf
        hi = params[P.UPPER_CUTOFF] if params is not None else math.inf

        for k, step in enumerate(self.steps):
            where = f"step {k} ({type(step).__name__})"
            if isinstance(step, ConstantCurrent):
                if not (math.isfinite(step.c_rate) and step.c_rate > 0.0):
                    problems.append(f"{where}: c_rate must be > 0")
                if step.direction not in ("charge", "discharge"):
                    problems.append(f"{where}: direction must be 'charge' or 'discharge'")
                if step.voltage_cutoff is not None and not lo <= step.voltage_cutoff <= hi:
                    problems.append(f"{where}: cutoff {step.voltage_cutoff} outside [{lo}, {hi}]")
                if not (_positive(step.max_duration_s) and _positive(step.sample_interval_s)):
                    problems.append(f"{where}: durations must be > 0")
            elif isinstance(step, ConstantVoltage):
                if step.hold_voltage is not None and not lo <= step.hold_voltage <= hi:
                    problems.append(f"{where}: hold voltage {step.hold_voltage} outside [{lo}, {hi}]")
                if not step.current_cutoff > 0.0:
                    problems.append(f"{where}: current cutoff must be > 0")
                if not (_positive(step.max_duration_s) and _positive(step.sample_interval_s)):
                    problems.append(f"{where}: durations must be > 0")
            elif isinstance(step, Rest):
                if not (_positive(step.duration_s) and _positive(step.sample_interval_s)):
                    problems.append(f"{where}: duration must be > 0")
            else:
                problems.append(f"{where}: unknown step type")

        if problems:
            raise ProtocolValidationError(f"protocol {self.name!r} invalid: " + "; ".join(problems))
        return self

    # ── serialization ───────────────────────────────────────────────────────

    def to_dict(self) -> JSONDict:
        steps = []
        for s in self.steps:
            raw = {k: v for k, v in asdict(s).items() if v is not None}
            raw["type"] = _TYPE_TAGS[type(s)]
            steps.append(raw)
        out: Dict[str, Any] = {"name": self.name, "steps": steps}
        if self.max_step_duration_s is not None:
            out["max_step_duration_s"] = self.max_step_duration_s
        if self.sample_interval_s is not None:
            out["sample_interval_s"] = self.sample_interval_s
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Protocol":
        steps: List[Step] = []
        for item in raw.get("steps", []):
            item = dict(item)
            tag = item.pop("type", None)
            try:
                steps.append(_TAG_TYPES[tag](**item))
            except (KeyError, TypeError) as e:
                raise ProtocolValidationError(f"bad protocol step {item!r} (type={tag!r})") from e
        return cls(
              steps=tuple(steps)
            , name=str(raw.get("name", "protocol"))
            , max_step_duration_s=raw.get("max_step_duration_s")
            , sample_interval_s=raw.get("sample_interval_s")
        )

    def to_json(self, path: StrPath) -> Path:
        return write_json(path, self.to_dict())

    @classmethod
    def from_json(cls, path: StrPath) -> "Protocol":
        return cls.from_dict(read_json(path))


# ────────────────────────────────────────────────────────────────────────────────
# Builders
# ────────────────────────────────────────────────────────────────────────────────

def _rate_label(c_rate: float) -> str:
    return f"{c_rate:g}C"


def standard_protocol(
      c_rate: float
    , *
    , rest_s: Optional[float] = None
    , cv_cutoff: Optional[float] = None
    , sample_interval_s: Optional[float] = None
) -> Protocol:
    """CC discharge → rest → CC charge → CV hold at the upper cutoff to C/20."""
    d = get_simulation_defaults()
    return Protocol(
          steps=(
              ConstantCurrent(c_rate, "discharge")
            , Rest(d.rest_duration_s if rest_s is None else rest_s)
            , ConstantCurrent(c_rate, "charge")
            , ConstantVoltage(current_cutoff=d.cv_cutoff_c if cv_cutoff is None else cv_cutoff)
          )
        , name=f"standard_{_rate_label(c_rate)}"
        , sample_interval_s=sample_interval_s
    )


def capacity_check_protocol(c_rate: float, *, sample_interval_s: Optional[float] = None) -> Protocol:
    """Single CC discharge to the lower cutoff."""
    return Protocol(
          steps=(ConstantCurrent(c_rate, "discharge"),)
        , name=f"capacity_check_{_rate_label(c_rate)}"
        , sample_interval_s=sample_interval_s
    )

