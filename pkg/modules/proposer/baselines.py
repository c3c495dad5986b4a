# modules/proposer/baselines.py
# -*- coding: utf-8 -*-
"""
Baseline proposers
==================

- bo_propose: Gaussian-process Bayesian optimization. The first 2·d rounds
  return scrambled-Sobol points; afterwards a GP (Matérn 5/2 + white noise,
  scikit-learn) is fit on unit-cube coordinates (log-scaled where bounds are
  positive) against standardized log-loss, and log expected improvement is
  maximized by multi-start L-BFGS-B.
- random_propose / sobol_propose: uniform or low-discrepancy points,
  deterministic in (seed, round).
- scripted_propose: replays a fixed list of updates (test double, replay
  files, linear-in-log interpolation toward a known optimum).
- CMAESStubProposer: isotropic Gaussian steps around the best point, no
  covariance adaptation; kept for comparison runs only.

All of them emit absolute directives and are not damped by η.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc
from sklearn.exceptions import ConvergenceWarning
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

from modules.core.config import BODefaults, get_bo_defaults
from modules.core.errors import ConfigurationError, ProposerError
from modules.core.types import FloatArray, JSONDict, ParamValues, StrPath
from modules.infra.jsonl import read_jsonl, write_jsonl
from modules.infra.logging import get_logger

from .base import Evaluation, ProposalRequest, ProposalResult, Proposer, SearchSpace
from .updates import ParameterUpdate

_log = get_logger(__name__)

_LOSS_FLOOR = 1e-12
_N_CANDIDATES = 2048
_Z_MIN = -30.0

__all__ = [
      "bo_propose"
    , "random_propose"
    , "sobol_propose"
    , "sobol_point"
    , "scripted_propose"
    , "interpolation_script"
    , "load_replay"
    , "write_replay"
    , "BOProposer"
    , "RandomProposer"
    , "SobolProposer"
    , "ScriptedProposer"
    , "CMAESStubProposer"
]


# ────────────────────────────────────────────────────────────────────────────────
# Low-discrepancy / uniform points
# ────────────────────────────────────────────────────────────────────────────────

def sobol_point(dim: int, index: int, seed: int) -> FloatArray:
    """index-th (0-based) point of the scrambled Sobol sequence for `seed`."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    if index:
        sampler.fast_forward(index)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # single draws are not powers of two
        return sampler.random(1)[0]


def sobol_propose(space: SearchSpace, round_index: int, seed: int = 1234) -> ParameterUpdate:
    """Round r (1-based) → Sobol point r−1 scaled to bounds."""
    u = sobol_point(space.dim, max(round_index - 1, 0), seed)
    return ParameterUpdate.absolute(space.from_unit(u), rationale=f"sobol point {round_index - 1}")


def random_propose(space: SearchSpace, round_index: int, seed: int = 1234) -> ParameterUpdate:
    rng = np.random.default_rng([seed, round_index])
    return ParameterUpdate.absolute(space.from_unit(rng.random(space.dim)), rationale="uniform random")


# ────────────────────────────────────────────────────────────────────────────────
# Bayesian optimization
# ────────────────────────────────────────────────────────────────────────────────

def _log_expected_improvement(mu: FloatArray, sigma: FloatArray, best: float) -> FloatArray:
    """log EI for minimization, stable for strongly negative z."""
    sigma = np.maximum(sigma, 1e-12)
    z = np.maximum((best - mu) / sigma, _Z_MIN)
    mills = math.sqrt(math.pi / 2.0) * special.erfcx(-z / math.sqrt(2.0))  # Φ(z)/φ(z)
    log_phi = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi)
    return np.log(sigma) + log_phi + np.log(np.maximum(1.0 + z * mills, 1e-300))


def _training_set(space: SearchSpace, history: Sequence[Evaluation]) -> Tuple[FloatArray, FloatArray]:
    finite = [loss for _, loss in history if loss is not None and math.isfinite(loss)]
    worst = max(finite) if finite else None
    xs: List[FloatArray] = []
    ys: List[float] = []
    for values, loss in history:
        if any(k not in values for k in space.keys):
            continue
        if loss is None or not math.isfinite(loss):
            if worst is None:
                continue
            loss = worst  # failed simulations count as the worst observation
        xs.append(space.to_unit(values))
        ys.append(math.log(max(loss, _LOSS_FLOOR)))
    return np.array(xs, dtype=float).reshape(-1, space.dim), np.array(ys, dtype=float)


def _fit_gp(x: FloatArray, y: FloatArray, seed: int, jitter: float) -> GaussianProcessRegressor:
    d = x.shape[1]
    kernel = (
        ConstantKernel(1.0, (1e-3, 1e3))
        * Matern(length_scale=np.full(d, 0.5), length_scale_bounds=(1e-3, 1e3), nu=2.5)
        + WhiteKernel(noise_level=1e-4, noise_level_bounds=(1e-9, 1e-1))
    )
    gp = GaussianProcessRegressor(kernel=kernel, alpha=jitter, normalize_y=False, n_restarts_optimizer=2, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        gp.fit(x, y)
    return gp


def bo_propose(
      space: SearchSpace
    , history: Sequence[Evaluation]
    , round_index: int
    , *
    , defaults: Optional[BODefaults] = None
) -> ParameterUpdate:
    """
    Next BO point as absolute directives.

    Parameters
    ----------
    space : SearchSpace
    history : sequence of (values, total_mape | None)
        Every evaluation so far, in order.
    round_index : int
        1-based proposal index; rounds 1..2d return the Sobol warm-start.

    Raises
    ------
    ConfigurationError
        More search keys than the GP guard allows.
    """
    d = defaults or get_bo_defaults()
    if space.dim > d.max_dim:
        raise ConfigurationError(f"BO supports at most {d.max_dim} search keys (got {space.dim})")
    n_init = 2 * space.dim
    if round_index <= n_init:
        return sobol_propose(space, round_index, d.seed)

    x, y_raw = _training_set(space, history)
    if len(y_raw) < 2:
        _log.warning("bo_propose round %d: %d usable observations; using Sobol point", round_index, len(y_raw))
        return sobol_propose(space, round_index, d.seed)
    std = float(np.std(y_raw))
    y = (y_raw - float(np.mean(y_raw))) / (std if std > 0.0 else 1.0)

    gp: Optional[GaussianProcessRegressor] = None
    for jitter in (d.jitter, d.jitter * 1e3):
        try:
            gp = _fit_gp(x, y, d.seed, jitter)
            break
        except (np.linalg.LinAlgError, ValueError) as e:
            _log.warning("bo_propose round %d: GP fit failed with jitter %.1e (%s)", round_index, jitter, e)
    if gp is None:
        return sobol_propose(space, round_index, d.seed)

    best = float(np.min(y))

    def neg_acq(u: FloatArray) -> float:
        mu, sd = gp.predict(u.reshape(1, -1), return_std=True)
        return -float(_log_expected_improvement(mu, sd, best)[0])

    rng = np.random.default_rng([d.seed, round_index])
    cand = rng.random((_N_CANDIDATES, space.dim))
    mu, sd = gp.predict(cand, return_std=True)
    acq = _log_expected_improvement(mu, sd, best)
    order = np.argsort(-acq, kind="stable")[: d.n_starts - 1]
    starts = np.vstack([x[int(np.argmin(y))], cand[order]])

    best_u, best_val = starts[0], math.inf
    bounds = [(0.0, 1.0)] * space.dim
    for s in starts:
        res = optimize.minimize(neg_acq, s, method="L-BFGS-B", bounds=bounds, options={"maxiter": 50})
        val = float(res.fun) if np.isfinite(res.fun) else math.inf
        if val < best_val:
            best_u, best_val = np.clip(res.x, 0.0, 1.0), val

    _log.debug("bo_propose round %d: logEI=%.4g at %s", round_index, -best_val, np.round(best_u, 4))
    return ParameterUpdate.absolute(space.from_unit(best_u), rationale=f"GP logEI {-best_val:.4g}")


# ────────────────────────────────────────────────────────────────────────────────
# Scripts
# ────────────────────────────────────────────────────────────────────────────────

def scripted_propose(replay: Sequence[ParameterUpdate], round_index: int) -> ParameterUpdate:
    """replay[round_index − 1]; ProposerError once the script is exhausted."""
    if not 1 <= round_index <= len(replay):
        raise ProposerError(f"script exhausted: round {round_index} of {len(replay)}")
    return replay[round_index - 1]


def interpolation_script(
      theta_init: Mapping[str, float]
    , theta_star: Mapping[str, float]
    , keys: Sequence[str]
    , n_rounds: int
) -> List[ParameterUpdate]:
    """
    n_rounds absolute updates walking θ_init → θ* linearly in log space
    (linearly for nonpositive values); the last one is θ* exactly.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be ≥ 1")
    script: List[ParameterUpdate] = []
    for t in range(1, n_rounds + 1):
        frac = t / n_rounds
        values: ParamValues = {}
        for k in keys:
            a, b = float(theta_init[k]), float(theta_star[k])
            if t == n_rounds:
                values[k] = b
            elif a > 0.0 and b > 0.0:
                values[k] = math.exp(math.log(a) + frac * (math.log(b) - math.log(a)))
            else:
                values[k] = a + frac * (b - a)
        script.append(ParameterUpdate.absolute(values, rationale=f"interpolation {t}/{n_rounds}"))
    return script


def load_replay(path: StrPath, search_keys: Optional[Sequence[str]] = None) -> List[ParameterUpdate]:
    """JSONL replay file: one update object per line."""
    return [ParameterUpdate.from_dict(raw, search_keys) for raw in read_jsonl(path)]


def write_replay(path: StrPath, updates: Sequence[ParameterUpdate]) -> None:
    write_jsonl(path, [u.to_dict() for u in updates])


# ────────────────────────────────────────────────────────────────────────────────
# Proposer classes
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class _SpaceProposer(Proposer):
    seed: int = 1234
    bounds: Optional[Mapping[str, Tuple[float, float]]] = None

    def _space(self, request: ProposalRequest) -> SearchSpace:
        return SearchSpace.from_parameters(request.theta, request.search_keys, self.bounds)

    def describe(self) -> JSONDict:
        return {"kind": self.kind, "seed": self.seed}


@dataclass
class BOProposer(_SpaceProposer):
    kind = "bo"
    defaults: BODefaults = field(default_factory=get_bo_defaults)

    def propose(self, request: ProposalRequest) -> ProposalResult:
        d = replace(self.defaults, seed=self.seed)
        return ProposalResult(bo_propose(self._space(request), request.history, request.round, defaults=d))

    def describe(self) -> JSONDict:
        d = self.defaults
        return {
              "kind": self.kind
            , "seed": self.seed
            , "kernel": d.kernel
            , "acquisition": d.acquisition
            , "warm_start": d.warm_start
            , "n_starts": d.n_starts
        }


@dataclass
class RandomProposer(_SpaceProposer):
    kind = "random"

    def propose(self, request: ProposalRequest) -> ProposalResult:
        return ProposalResult(random_propose(self._space(request), request.round, self.seed))


@dataclass
class SobolProposer(_SpaceProposer):
    kind = "sobol"

    def propose(self, request: ProposalRequest) -> ProposalResult:
        return ProposalResult(sobol_propose(self._space(request), request.round, self.seed))


@dataclass
class CMAESStubProposer(_SpaceProposer):
    """Isotropic Gaussian step (σ in unit-cube coordinates) around the best point."""

    kind = "cmaes-stub"
    sigma: float = 0.2

    def propose(self, request: ProposalRequest) -> ProposalResult:
        space = self._space(request)
        scored = [(loss, v) for v, loss in request.history if loss is not None and math.isfinite(loss)]
        centre = min(scored, key=lambda p: p[0])[1] if scored else request.current
        rng = np.random.default_rng([self.seed, request.round])
        u = np.clip(space.to_unit(centre) + self.sigma * rng.standard_normal(space.dim), 0.0, 1.0)
        return ProposalResult(ParameterUpdate.absolute(space.from_unit(u), rationale="gaussian step"))


class ScriptedProposer(Proposer):
    kind = "scripted"

    def __init__(self, script: Sequence[ParameterUpdate], *, source: str = "inline") -> None:
        self.script = list(script)
        self.source = source

    def propose(self, request: ProposalRequest) -> ProposalResult:
        return ProposalResult(scripted_propose(self.script, request.round))

    def describe(self) -> JSONDict:
        return {"kind": self.kind, "source": self.source, "length": len(self.script)}


if __name__ == "__main__":
    from modules.sim.parameters import NEG_RADIUS, WIDTH, load_default_cell

    cell = load_default_cell()
    sp = SearchSpace.from_parameters(cell, [WIDTH, NEG_RADIUS])
    for r in range(1, 4):
        print(sobol_propose(sp, r).serialize())
