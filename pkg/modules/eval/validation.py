# modules/eval/validation.py
# -*- coding: utf-8 -*-
"""
Held-out protocol validation: simulate the calibrated and the true
parameters on protocols that were not used for fitting and report the
voltage-trace MAPE between the two simulations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from modules.core.errors import ParameterValidationError, ProtocolValidationError
from modules.core.types import JSONDict
from modules.feedback.alignment import align_traces
from modules.infra.logging import get_logger
from modules.sim.parameters import PhysicalParameterSet
from modules.sim.protocol import Protocol, standard_protocol
from modules.sim.solver import run_protocol

from .metrics import mape

_log = get_logger(__name__)

DEFAULT_HELD_OUT_RATES = (0.2, 1.0, 2.0)

__all__ = ["HeldOutEntry", "held_out_validation", "held_out_protocols", "held_out_frame", "DEFAULT_HELD_OUT_RATES"]


@dataclass(frozen=True)
class HeldOutEntry:
    protocol: str
    voltage_mape: Optional[float]
    failed: bool = False
    reason: str = ""

    def to_dict(self) -> JSONDict:
        return {"protocol": self.protocol, "voltage_mape": self.voltage_mape, "failed": self.failed, "reason": self.reason}


def held_out_protocols(c_rates: Iterable[float] = DEFAULT_HELD_OUT_RATES, *, sample_interval_s: Optional[float] = None) -> List[Protocol]:
    return [standard_protocol(float(c), sample_interval_s=sample_interval_s) for c in c_rates]


def _simulate(theta: PhysicalParameterSet, protocol: Protocol):
    try:
        return run_protocol(theta, protocol), ""
    except (ParameterValidationError, ProtocolValidationError) as e:
        return None, f"invalid input: {e}"


def held_out_validation(
      theta_hat: PhysicalParameterSet
    , protocols: Sequence[Protocol]
    , theta_star: PhysicalParameterSet
) -> List[HeldOutEntry]:
    """
    One entry per protocol; an entry is marked failed when either
    simulation does not complete (no MAPE is reported for it).
    """
    out: List[HeldOutEntry] = []
    for protocol in protocols:
        name = protocol.name or f"protocol_{len(out) + 1}"
        truth, why = _simulate(theta_star, protocol)
        if truth is None or not truth.is_success or truth.n_samples == 0:
            out.append(HeldOutEntry(name, None, True, why or f"reference run ended with {truth.event.value}"))
            continue
        fitted, why = _simulate(theta_hat, protocol)
        if fitted is None or not fitted.is_success:
            reason = why or f"fitted run ended with {fitted.event.value}"
            _log.warning("held-out %s: %s", name, reason)
            out.append(HeldOutEntry(name, None, True, reason))
            continue
        pair = align_traces(fitted, truth)
        value = mape(pair.sim["voltage"], pair.target["voltage"])
        out.append(HeldOutEntry(name, value, value is None, "" if value is not None else "no comparable samples"))
        _log.debug("held-out %s: voltage MAPE %s", name, value)
    return out


def held_out_frame(rows: Mapping[str, Sequence[HeldOutEntry]]) -> pd.DataFrame:
    """Long table (task, protocol, voltage_mape, failed) from per-task entries."""
    records = [
        {"task": task, **e.to_dict()}
        for task in sorted(rows)
        for e in rows[task]
    ]
    return pd.DataFrame.from_records(records, columns=["task", "protocol", "voltage_mape", "failed", "reason"])


if __name__ == "__main__":
    from modules.sim.parameters import WIDTH, load_default_cell

    base = load_default_cell()
    for e in held_out_validation(base.with_values({WIDTH: base[WIDTH] * 1.05}), held_out_protocols(), base):
        print(e.to_dict())
