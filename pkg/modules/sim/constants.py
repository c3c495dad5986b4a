# modules/sim/constants.py
# -*- coding: utf-8 -*-
"""Physical constants used by the simulator (CODATA values via scipy)."""

from __future__ import annotations

from scipy.constants import R, physical_constants

FARADAY: float = float(physical_constants["Faraday constant"][0])  # C mol^-1
GAS_CONSTANT: float = float(R)  # J mol^-1 K^-1
SECONDS_PER_HOUR: float = 3600.0

__all__ = ["FARADAY", "GAS_CONSTANT", "SECONDS_PER_HOUR", "thermal_voltage"]


def thermal_voltage(temperature_k: float) -> float:
    """RT/F in volts."""
    return GAS_CONSTANT * temperature_k / FARADAY
