# modules/core/config.py
# -*- coding: utf-8 -*-

"""
Core configuration models and globals.

Pure configuration structures, independent of any infrastructure (HTTP
client, plotting, files). Safe to import from anywhere.

Contents
--------
- SimulationDefaults: discretization and protocol-driver knobs
- RunDefaults: warm-up/optimization budgets, convergence, memory budget
- StepSizeDefaults: damping schedule constants for parameter updates
- BODefaults: Gaussian-process proposer knobs
- LLMDefaults: chat-completions client timeouts, retries, env variable names
- Repository asset paths (parameter files, knowledge corpora, fixtures)
- resolve_settings(): flags > environment > config-file precedence
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional


# ────────────────────────────────────────────────────────────────────────────────
# Repository paths
# ────────────────────────────────────────────────────────────────────────────────

REPO_ROOT = Path(__file__).resolve().parents[2]
DATA_DIR = REPO_ROOT / "data"

DEFAULT_PARAMETER_FILE = DATA_DIR / "parameters" / "default_cell.json"
DEFAULT_DEGRADATION_FILE = DATA_DIR / "parameters" / "default_sei.json"
FIRST_CYCLE_KNOWLEDGE_FILE = DATA_DIR / "knowledge" / "first_cycle_rules.txt"
DEGRADATION_KNOWLEDGE_FILE = DATA_DIR / "knowledge" / "degradation_rules.txt"


# ────────────────────────────────────────────────────────────────────────────────
# Simulator defaults
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class SimulationDefaults:
    """
    Discretization and protocol-driver defaults.

    Attributes
    ----------
    n_shells : int
        Radial finite-volume shells per particle.
    samples_per_step : int
        Sample interval = step max duration / samples_per_step.
    cc_duration_factor : float
        CC step max duration = factor × 3600 × max(1, Q_bound / Q_nom) / C-rate
        (Q_bound: `step_capacity_bound`), so a cutoff ends every CC step
        of a valid cell before the duration cap.
    cv_max_duration_s : float
        Max duration of a CV hold.
    rest_duration_s : float
        Rest between discharge and charge in the standard cycle.
    cv_cutoff_c : float
        CV termination current as a fraction of 1C.
    cv_bracket_c : float
        CV current search interval is [−bracket, +bracket] × 1C.
    cv_voltage_tol_v : float
        Accepted |V − V_hold| per CV sample.
    root_maxiter : int
        Iteration cap for bracketed root-finding (CV current, cutoff location).
    """

    n_shells: int = 20
    samples_per_step: int = 500
    cc_duration_factor: float = 1.25
    cv_max_duration_s: float = 3.0 * 3600.0
    rest_duration_s: float = 600.0
    cv_cutoff_c: float = 0.05
    cv_bracket_c: float = 5.0
    cv_voltage_tol_v: float = 1e-4
    root_maxiter: int = 100


# ────────────────────────────────────────────────────────────────────────────────
# Run defaults
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RunDefaults:
    """
    Calibration-loop defaults.

    Attributes
    ----------
    n_warmup : int
        Warm-up perturbation rounds (N_w).
    n_rounds : int
        Optimization budget (T).
    convergence_window : int
        Rounds over which improvement is measured.
    convergence_epsilon : float
        Minimum improvement (percentage points) over the window.
    convergence_floor : float
        total_mape (%) below which a run counts as converged.
    warmup_spread : float
        Half-width of the fixed warm-up perturbation (±20%).
    cycle_subset_k : int
        Cycles fed back per round for degradation tasks.
    token_budget : int
        Approximate memory context budget (4 chars/token).
    degradation_cycles : int
        Default cycle count for degradation tasks.
    """

    n_warmup: int = 20
    n_rounds: int = 80
    convergence_window: int = 10
    convergence_epsilon: float = 0.1
    convergence_floor: float = 0.01
    warmup_spread: float = 0.20
    cycle_subset_k: int = 5
    token_budget: int = 6000
    degradation_cycles: int = 200


@dataclass(frozen=True)
class StepSizeDefaults:
    """Damping schedule constants (η starts at `start`, never below `floor`)."""

    start: float = 1.0
    floor: float = 0.125
    worsen_ratio: float = 0.5
    grow_after: int = 2


@dataclass(frozen=True)
class BODefaults:
    """Gaussian-process proposer knobs (names echo the Ax provenance)."""

    seed: int = 1234
    n_starts: int = 64
    max_dim: int = 20
    kernel: str = "matern52"
    acquisition: str = "log_ei"
    warm_start: str = "sobol"
    jitter: float = 1e-6


@dataclass(frozen=True)
class LLMDefaults:
    """
    Chat-completions client defaults.

    Attributes
    ----------
    base_url_env, api_key_env : str
        Environment variables holding the endpoint base URL and bearer token.
    path : str
        Appended to the base URL.
    model : str
        Sent as "model"; many local endpoints ignore it.
    connect_timeout_s, read_timeout_s : float
        requests timeout tuple.
    max_retries : int
        Extra attempts after the first one (timeouts, 429 and 5xx).
    backoff_s : float
        Exponential backoff base: backoff_s × 2^attempt.
    max_in_flight : int
        Concurrent requests per client across runs.
    max_tokens : int | None
        Completion cap; None leaves it to the endpoint.
    """

    base_url_env: str = "BATTERY_LLM_BASE_URL"
    api_key_env: str = "BATTERY_LLM_API_KEY"
    path: str = "/v1/chat/completions"
    model: str = "default"
    connect_timeout_s: float = 5.0
    read_timeout_s: float = 120.0
    max_retries: int = 2
    backoff_s: float = 0.5
    max_in_flight: int = 4
    max_tokens: Optional[int] = None


# ────────────────────────────────────────────────────────────────────────────────
# Singleton-style instances
# ────────────────────────────────────────────────────────────────────────────────

SIMULATION_DEFAULTS = SimulationDefaults()
RUN_DEFAULTS = RunDefaults()
STEP_SIZE_DEFAULTS = StepSizeDefaults()
BO_DEFAULTS = BODefaults()
LLM_DEFAULTS = LLMDefaults()


def get_simulation_defaults() -> SimulationDefaults:
    return SIMULATION_DEFAULTS


def get_run_defaults() -> RunDefaults:
    return RUN_DEFAULTS


def get_step_size_defaults() -> StepSizeDefaults:
    return STEP_SIZE_DEFAULTS


def get_bo_defaults() -> BODefaults:
    return BO_DEFAULTS


def get_llm_defaults() -> LLMDefaults:
    return LLM_DEFAULTS


# ────────────────────────────────────────────────────────────────────────────────
# Settings precedence
# ────────────────────────────────────────────────────────────────────────────────

def resolve_settings(
      flags: Mapping[str, Any]
    , *
    , env_names: Optional[Mapping[str, str]] = None
    , file_values: Optional[Mapping[str, Any]] = None
    , environ: Optional[Mapping[str, str]] = None
) -> Dict[str, Any]:
    """
    Merge settings with precedence flags > environment > config file.

    Parameters
    ----------
    flags : Mapping[str, Any]
        Parsed CLI values; None means "not given".
    env_names : Mapping[str, str] | None
        Setting name → environment variable name.
    file_values : Mapping[str, Any] | None
        Values loaded from a JSON config file.
    environ : Mapping[str, str] | None
        Environment to read (defaults to os.environ; tests inject dicts).
    """
    environ = os.environ if environ is None else environ
    merged: Dict[str, Any] = dict(file_values or {})

    for key, var in (env_names or {}).items():
        raw = environ.get(var)
        if raw not in (None, ""):
            merged[key] = raw

    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged
