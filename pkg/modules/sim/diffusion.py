# modules/sim/diffusion.py
# -*- coding: utf-8 -*-
"""
Spherical particle diffusion
============================

Finite-volume discretization of

    ∂c/∂t = (1/r²) ∂/∂r (D r² ∂c/∂r),   −D ∂c/∂r |_R = j,   ∂c/∂r |_0 = 0

on N uniform shells, advanced with one backward-Euler step. `j` is the
outward molar flux [mol m^-2 s^-1]: positive when lithium leaves the
particle.

The update is affine in the flux,

    c_new = solve(M, V·c_old/dt) + j · solve(M, −A_R·e_N)

so callers that need to search over the current (CV holds, cutoff
location) solve the tridiagonal system once per sample and combine.

Surface concentration is reconstructed from the outer shell average and
the boundary gradient: c_s = c_N − (Δr/2)·j/D. This is second order in
Δr for smooth profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Tuple

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import solve_banded

from modules.core.errors import SolverError
from modules.core.types import FloatArray

__all__ = [
      "ParticleGrid"
    , "particle_grid"
    , "step_particle_diffusion"
]


@dataclass(frozen=True, eq=False)
class ParticleGrid:
    """
    Uniform radial mesh of one representative particle.

    Attributes
    ----------
    radius : float
        Particle radius [m].
    n_shells : int
        Number of finite-volume shells (≥ 3).
    """

    radius: float
    n_shells: int
    dr: float = field(init=False)
    volumes: FloatArray = field(init=False, repr=False)
    face_areas: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n_shells < 3:
            raise ValueError(f"need at least 3 shells (got {self.n_shells})")
        if not self.radius > 0.0:
            raise ValueError(f"radius must be > 0 (got {self.radius})")
        faces = self.radius * np.arange(self.n_shells + 1, dtype=float) / self.n_shells
        object.__setattr__(self, "dr", self.radius / self.n_shells)
        object.__setattr__(self, "volumes", (4.0 * np.pi / 3.0) * np.diff(faces ** 3))
        object.__setattr__(self, "face_areas", 4.0 * np.pi * faces ** 2)

    @property
    def surface_area(self) -> float:
        return float(self.face_areas[-1])

    def total_moles(self, profile: FloatArray) -> float:
        return float(np.dot(self.volumes, profile))

    def surface_concentration(self, profile: FloatArray, flux: float, diffusivity: float) -> float:
        return float(profile[-1] - 0.5 * self.dr * flux / diffusivity)

    def banded(self, diffusivity: float, dt: float) -> np.ndarray:
        """(1, 1)-banded backward-Euler matrix for `solve_banded`."""
        n = self.n_shells
        inner = diffusivity * self.face_areas[1:-1] / self.dr   # interior faces 1..N-1
        ab = np.zeros((3, n))
        ab[1] = self.volumes / dt
        ab[1, :-1] += inner
        ab[1, 1:] += inner
        ab[0, 1:] = -inner
        ab[2, :-1] = -inner
        return ab

    def affine_step(
          self
        , profile: FloatArray
        , diffusivity: float
        , dt: float
        , *
        , ab: np.ndarray | None = None
    ) -> Tuple[FloatArray, FloatArray]:
        """
        Return (base, response) with c_new = base + flux · response.
        """
        if not dt > 0.0:
            raise ValueError(f"dt must be > 0 (got {dt})")
        if profile.shape != (self.n_shells,):
            raise ValueError(f"profile has shape {profile.shape}, expected ({self.n_shells},)")

        rhs = np.zeros((self.n_shells, 2))
        rhs[:, 0] = self.volumes * profile / dt
        rhs[-1, 1] = -self.surface_area
        try:
            sol = solve_banded((1, 1), self.banded(diffusivity, dt) if ab is None else ab, rhs, check_finite=False)
        except (LinAlgError, ValueError) as e:
            raise SolverError(f"particle diffusion solve failed: {e}") from e
        if not np.all(np.isfinite(sol)):
            raise SolverError("particle diffusion produced non-finite concentrations")
        return sol[:, 0], sol[:, 1]

    def step(self, profile: FloatArray, flux: float, diffusivity: float, dt: float) -> FloatArray:
        base, response = self.affine_step(profile, diffusivity, dt)
        return base + flux * response


@lru_cache(maxsize=64)
def particle_grid(radius: float, n_shells: int) -> ParticleGrid:
    return ParticleGrid(radius=float(radius), n_shells=int(n_shells))


def step_particle_diffusion(
      profile: FloatArray
    , surface_flux: float
    , diffusivity: float
    , radius: float
    , dt: float
) -> FloatArray:
    """
    Advance one particle by `dt` seconds under a constant outward surface flux.

    Raises
    ------
    ValueError
        dt ≤ 0 or fewer than 3 shells.
    SolverError
        The tridiagonal solve failed or produced non-finite values.
    """
    c = np.asarray(profile, dtype=float)
    if not diffusivity > 0.0:
        raise ValueError(f"diffusivity must be > 0 (got {diffusivity})")
    grid = particle_grid(radius, c.size)
    return grid.step(c, surface_flux, diffusivity, dt)

