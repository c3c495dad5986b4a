# modules/sim/kinetics.py
# -*- coding: utf-8 -*-
"""
Interfacial kinetics and the lumped electrolyte resistance.

    j0 = F · k · c_e^0.5 · c_s^0.5 · (c_max − c_s)^0.5
    η  = (2RT/F) · asinh(j / (2·j0))
    R_e = (1 / (κ·A)) · Σ_region L / ε^b     (negative, separator, positive)
"""

from __future__ import annotations

import math

from modules.core.errors import ConcentrationBoundError, KineticsError, ParameterValidationError
from modules.sim import parameters as P
from modules.sim.constants import FARADAY, thermal_voltage
from modules.sim.parameters import PhysicalParameterSet

__all__ = [
      "exchange_current_density"
    , "butler_volmer_overpotential"
    , "electrolyte_resistance"
]


def exchange_current_density(c_surf: float, c_max: float, c_e: float, k: float) -> float:
    """Exchange current density [A m^-2]; zero at both stoichiometric limits."""
    if not (c_e > 0.0 and k > 0.0 and c_max > 0.0):
        raise KineticsError(f"exchange current needs c_e, k, c_max > 0 (got {c_e}, {k}, {c_max})")
    if not 0.0 <= c_surf <= c_max:
        raise ConcentrationBoundError(f"surface concentration {c_surf:.6g} outside [0, {c_max:.6g}]")
    return FARADAY * k * math.sqrt(c_e) * math.sqrt(c_surf) * math.sqrt(c_max - c_surf)


def butler_volmer_overpotential(j: float, j0: float, temperature_k: float = 298.15) -> float:
    """Symmetric inverse Butler-Volmer overpotential [V]."""
    if not j0 > 0.0:
        raise KineticsError(f"exchange current density must be > 0 (got {j0})")
    return 2.0 * thermal_voltage(temperature_k) * math.asinh(j / (2.0 * j0))


def electrolyte_resistance(params: PhysicalParameterSet) -> float:
    """Lumped ionic resistance of the three regions [ohm]."""
    kappa = params[P.CONDUCTIVITY]
    area = params.electrode_area()
    if not (kappa > 0.0 and area > 0.0):
        raise ParameterValidationError("electrolyte conductivity and electrode area must be > 0")

    total = 0.0
    for length, porosity, brugg in (
          (P.NEG_THICKNESS, P.NEG_POROSITY, P.NEG_BRUGGEMAN)
        , (P.SEP_THICKNESS, P.SEP_POROSITY, P.SEP_BRUGGEMAN)
        , (P.POS_THICKNESS, P.POS_POROSITY, P.POS_BRUGGEMAN)
    ):
        eps = params[porosity]
        if not 0.0 < eps <= 1.0:
            raise ParameterValidationError(f"{porosity!r}={eps} outside (0, 1]")
        total += params[length] / eps ** params[brugg]
    return total / (kappa * area)
