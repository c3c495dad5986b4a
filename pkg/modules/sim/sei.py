# modules/sim/sei.py
# -*- coding: utf-8 -*-
"""
Reaction-limited SEI growth on the negative electrode.

    c_sol   = c_bulk·exp(−L/ℓ_sol) + c_EC·exp(−L/ℓ_EC),   ℓ = sqrt(D · t_ref)
    n_sei   = k_sei · c_sol · exp(−0.5·F·η_neg / (R·T))     [mol m^-2 s^-1]
    dL/dt   = V̄_sei · n_sei
    lithium consumed per unit area = ratio · n_sei

The film resistance R_sei = L / (κ_sei · S_neg) is part of the cell model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from modules.sim import parameters as P
from modules.sim.constants import thermal_voltage
from modules.sim.parameters import DegradationParameterSet

DEFAULT_REFERENCE_TIME_S = 36000.0

__all__ = ["SeiModel"]


@dataclass(frozen=True)
class SeiModel:
    rate: float
    bulk_solvent: float
    ec_initial: float
    solvent_diffusivity: float
    ec_diffusivity: float
    molar_volume: float
    li_per_sei: float
    reference_time_s: float = DEFAULT_REFERENCE_TIME_S

    @classmethod
    def from_params(cls, degradation: DegradationParameterSet) -> "SeiModel":
        t_ref = float(degradation.constants.get("reference_time_s", DEFAULT_REFERENCE_TIME_S))
        return cls(
              rate=degradation[P.SEI_RATE]
            , bulk_solvent=degradation[P.BULK_SOLVENT]
            , ec_initial=degradation[P.EC_INITIAL]
            , solvent_diffusivity=degradation[P.SEI_SOLVENT_DIFFUSIVITY]
            , ec_diffusivity=degradation[P.EC_DIFFUSIVITY]
            , molar_volume=degradation[P.SEI_MOLAR_VOLUME]
            , li_per_sei=degradation[P.LI_PER_SEI]
            , reference_time_s=t_ref
        )

    def _attenuation(self, thickness_m: float, diffusivity: float) -> float:
        length = math.sqrt(diffusivity * self.reference_time_s)
        if length <= 0.0:
            return 0.0
        return math.exp(-thickness_m / length)

    def solvent_concentration(self, thickness_m: float) -> float:
        """Solvent concentration reaching the reaction plane [mol m^-3]."""
        return (
              self.bulk_solvent * self._attenuation(thickness_m, self.solvent_diffusivity)
            + self.ec_initial * self._attenuation(thickness_m, self.ec_diffusivity)
        )

    def sei_flux(self, thickness_m: float, eta_neg: float, temperature_k: float) -> float:
        """Moles of SEI formed per unit interfacial area per second."""
        if self.rate == 0.0:
            return 0.0
        return (
              self.rate
            * self.solvent_concentration(thickness_m)
            * math.exp(-0.5 * eta_neg / thermal_voltage(temperature_k))
        )

    def lithium_flux(self, thickness_m: float, eta_neg: float, temperature_k: float) -> float:
        return self.li_per_sei * self.sei_flux(thickness_m, eta_neg, temperature_k)

    def growth_rate(self, thickness_m: float, eta_neg: float, temperature_k: float) -> float:
        return self.molar_volume * self.sei_flux(thickness_m, eta_neg, temperature_k)
