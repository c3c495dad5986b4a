# modules/orchestrator/config.py
# -*- coding: utf-8 -*-
"""
RunConfig, Ablations and RunResult.

RunConfig.to_dict() is what lands in `<run_dir>/run.json`;
RunResult.to_dict() is `<run_dir>/result.json`, whose presence marks a task
as done for resumed batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

from modules.core.config import get_run_defaults
from modules.core.errors import ConfigurationError
from modules.core.types import JSONDict, ParamValues
from modules.feedback.residuals import LossConfig
from modules.proposer.factory import ProposerConfig

from .task import CalibrationTask

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"
ABORTED = "aborted"
TERMINATIONS = (CONVERGED, BUDGET_EXHAUSTED, ABORTED)

WARMUP_STRATEGIES = ("auto", "fixed", "proposer")

__all__ = [
      "Ablations"
    , "RunConfig"
    , "RunResult"
    , "CONVERGED"
    , "BUDGET_EXHAUSTED"
    , "ABORTED"
]


@dataclass(frozen=True)
class Ablations:
    scalar_only: bool = False
    no_memory: bool = False
    no_knowledge: bool = False

    NAMES = ("scalar_only", "no_memory", "no_knowledge")

    @classmethod
    def parse(cls, names: Iterable[str]) -> "Ablations":
        chosen = [n.strip().replace("-", "_") for n in names if n and n.strip()]
        unknown = [n for n in chosen if n not in cls.NAMES]
        if unknown:
            raise ConfigurationError(f"unknown ablation(s) {unknown}; choose from {', '.join(cls.NAMES)}")
        return cls(**{n: True for n in chosen})

    def names(self) -> List[str]:
        return [n for n in self.NAMES if getattr(self, n)]


@dataclass
class RunConfig:
    """
    Everything one calibration run needs.

    Attributes
    ----------
    task : CalibrationTask | None
        Filled per task by batch_run when used as a template.
    n_warmup, n_rounds : int
        N_w ≥ 0 warm-up perturbations; T ≥ 1 optimization rounds.
    warmup_strategy : str
        "fixed" (uniform ±warmup_spread on one key per round), "proposer"
        (ask the proposer for a batch, topped up with fixed ones) or "auto"
        (proposer batch when the proposer offers one).
    seed : int | None
        Run seed; None takes the task seed.
    out_dir : Path | None
        Run directory; nothing is written when None.
    plots : bool
        Render per-round overlays under plots/.
    """

    task: Optional[CalibrationTask] = None
    proposer: ProposerConfig = field(default_factory=ProposerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    n_warmup: int = field(default_factory=lambda: get_run_defaults().n_warmup)
    n_rounds: int = field(default_factory=lambda: get_run_defaults().n_rounds)
    convergence_window: int = field(default_factory=lambda: get_run_defaults().convergence_window)
    convergence_epsilon: float = field(default_factory=lambda: get_run_defaults().convergence_epsilon)
    convergence_floor: float = field(default_factory=lambda: get_run_defaults().convergence_floor)
    warmup_spread: float = field(default_factory=lambda: get_run_defaults().warmup_spread)
    warmup_strategy: str = "auto"
    token_budget: int = field(default_factory=lambda: get_run_defaults().token_budget)
    seed: Optional[int] = None
    out_dir: Optional[Path] = None
    ablations: Ablations = field(default_factory=Ablations)
    plots: bool = True

    def __post_init__(self) -> None:
        if self.out_dir is not None:
            self.out_dir = Path(self.out_dir)

    def validate(self) -> "RunConfig":
        problems: List[str] = []
        if self.n_warmup < 0:
            problems.append(f"n_warmup must be ≥ 0 (got {self.n_warmup})")
        if self.n_rounds < 1:
            problems.append(f"n_rounds must be ≥ 1 (got {self.n_rounds})")
        if self.convergence_window < 1:
            problems.append("convergence_window must be ≥ 1")
        if self.convergence_epsilon < 0.0 or self.convergence_floor < 0.0:
            problems.append("convergence thresholds must be ≥ 0")
        if not 0.0 < self.warmup_spread < 1.0:
            problems.append(f"warmup_spread must be in (0, 1) (got {self.warmup_spread})")
        if self.warmup_strategy not in WARMUP_STRATEGIES:
            problems.append(f"warmup_strategy must be one of {WARMUP_STRATEGIES}")
        if self.token_budget < 1:
            problems.append("token_budget must be ≥ 1")
        if problems:
            raise ConfigurationError("invalid run configuration: " + "; ".join(problems))
        return self

    @property
    def run_seed(self) -> int:
        if self.seed is not None:
            return int(self.seed)
        return self.task.seed if self.task is not None else 0

    @property
    def method(self) -> str:
        """Method label for reports: proposer kind plus active ablations."""
        return "+".join([self.proposer.kind, *self.ablations.names()])

    def to_dict(self) -> JSONDict:
        return {
              "task": None if self.task is None else self.task.summary()
            , "method": self.method
            , "proposer": self.proposer.to_dict()
            , "loss": self.loss.to_dict()
            , "n_warmup": self.n_warmup
            , "n_rounds": self.n_rounds
            , "convergence": {
                  "window": self.convergence_window
                , "epsilon": self.convergence_epsilon
                , "floor": self.convergence_floor
              }
            , "warmup_spread": self.warmup_spread
            , "warmup_strategy": self.warmup_strategy
            , "token_budget": self.token_budget
            , "seed": self.run_seed
            , "ablations": {n: getattr(self.ablations, n) for n in Ablations.NAMES}
            , "plots": self.plots
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], *, task: Optional[CalibrationTask] = None) -> "RunConfig":
        """Settings from a config file or run.json (the task is passed separately)."""
        d = get_run_defaults()
        conv = raw.get("convergence", {})
        abl = raw.get("ablations", {})
        if isinstance(abl, Mapping):
            ablations = Ablations.parse(k for k, v in abl.items() if v)
        else:
            ablations = Ablations.parse(abl)
        out_dir = raw.get("out_dir")
        return cls(
              task=task
            , proposer=ProposerConfig.from_dict(raw.get("proposer", {}))
            , loss=LossConfig.from_dict(raw.get("loss", {}))
            , n_warmup=int(raw.get("n_warmup", d.n_warmup))
            , n_rounds=int(raw.get("n_rounds", d.n_rounds))
            , convergence_window=int(conv.get("window", d.convergence_window))
            , convergence_epsilon=float(conv.get("epsilon", d.convergence_epsilon))
            , convergence_floor=float(conv.get("floor", d.convergence_floor))
            , warmup_spread=float(raw.get("warmup_spread", d.warmup_spread))
            , warmup_strategy=str(raw.get("warmup_strategy", "auto"))
            , token_budget=int(raw.get("token_budget", d.token_budget))
            , seed=raw.get("seed")
            , out_dir=None if out_dir is None else Path(out_dir)
            , ablations=ablations
            , plots=bool(raw.get("plots", True))
        )


def _timings() -> Dict[str, float]:
    return {"simulator_s": 0.0, "proposer_s": 0.0, "total_s": 0.0}


@dataclass
class RunResult:
    """
    Outcome of one calibration run.

    `best_total_mape` is the minimum over comparable optimization rounds
    (None when no round was comparable). Warm-up costs are kept apart from
    the optimization `timings`.
    """

    task_id: str
    method: str
    termination: str
    best_params: Optional[ParamValues] = None
    best_total_mape: Optional[float] = None
    best_round: Optional[int] = None
    initial_total_mape: Optional[float] = None
    n_rounds: int = 0
    n_warmup: int = 0
    n_failed_rounds: int = 0
    n_noop_rounds: int = 0
    best_residuals: Dict[str, JSONDict] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=_timings)
    warmup_timings: Dict[str, float] = field(default_factory=_timings)
    run_dir: Optional[str] = None
    error: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.termination not in TERMINATIONS:
            raise ValueError(f"unknown termination {self.termination!r}")

    @property
    def aborted(self) -> bool:
        return self.termination == ABORTED

    def to_dict(self) -> JSONDict:
        return {
              "task": self.task_id
            , "method": self.method
            , "termination": self.termination
            , "best_params": self.best_params
            , "best_total_mape": self.best_total_mape
            , "best_round": self.best_round
            , "initial_total_mape": self.initial_total_mape
            , "n_rounds": self.n_rounds
            , "n_warmup": self.n_warmup
            , "n_failed_rounds": self.n_failed_rounds
            , "n_noop_rounds": self.n_noop_rounds
            , "best_residuals": self.best_residuals
            , "timings": dict(self.timings)
            , "warmup_timings": dict(self.warmup_timings)
            , "run_dir": self.run_dir
            , "error": self.error
            , "meta": dict(self.meta)
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunResult":
        best = raw.get("best_total_mape")
        initial = raw.get("initial_total_mape")
        return cls(
              task_id=str(raw["task"])
            , method=str(raw.get("method", ""))
            , termination=str(raw["termination"])
            , best_params=None if raw.get("best_params") is None else {k: float(v) for k, v in raw["best_params"].items()}
            , best_total_mape=None if best is None else float(best)
            , best_round=raw.get("best_round")
            , initial_total_mape=None if initial is None else float(initial)
            , n_rounds=int(raw.get("n_rounds", 0))
            , n_warmup=int(raw.get("n_warmup", 0))
            , n_failed_rounds=int(raw.get("n_failed_rounds", 0))
            , n_noop_rounds=int(raw.get("n_noop_rounds", 0))
            , best_residuals=dict(raw.get("best_residuals", {}))
            , timings={k: float(v) for k, v in raw.get("timings", {}).items()}
            , warmup_timings={k: float(v) for k, v in raw.get("warmup_timings", {}).items()}
            , run_dir=raw.get("run_dir")
            , error=raw.get("error")
            , meta=dict(raw.get("meta", {}))
        )
