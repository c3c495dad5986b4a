# modules/orchestrator/loop.py
# -*- coding: utf-8 -*-
"""
Calibration loop
================

Two phases over one CalibrationTask:

1) warmup_phase : N_w perturbations of θ_init (proposer batch or the fixed
                  ±spread strategy), each simulated and summarized into
                  learned sensitivity rules. θ is never changed.
2) optimize     : rounds t = 1..T of
                      simulate θ_t → feedback → memory context → propose
                      → apply_update(η_t) → θ_{t+1}
                  with early stop on convergence.

calibrate() runs both and owns the run directory:

    <run_dir>/run.json        configuration echo
    <run_dir>/task.json       task file + targets/ (for plot/replay)
    <run_dir>/memory.jsonl    knowledge, warm-up records, rounds
    <run_dir>/rounds.jsonl    one object per optimization round
    <run_dir>/best.json       best-so-far (re-derivable from rounds.jsonl)
    <run_dir>/result.json     RunResult
    <run_dir>/exchanges.jsonl LLM audit (LLM proposer only)
    <run_dir>/plots/round_<t>.svg
    <run_dir>/run.log

Failure handling
----------------
- invalid parameters or protocols → empty trace, round recorded as failed
- proposer transport/parse errors → no-op round (θ unchanged, counted)
- update naming keys outside the search keys → no-op round
- any other CalibrationError (e.g. configuration) → run aborted
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from modules.core.errors import (
      CalibrationError
    , ConfigurationError
    , ParameterValidationError
    , ParseError
    , ProposerError
    , ProtocolValidationError
    , RejectedKeyError
)
from modules.core.models import CycleSeries, SimulationTrace
from modules.core.types import JSONDict, ParamValues, StrPath
from modules.feedback.features import FeatureSet
from modules.feedback.package import FeedbackPackage, build_degradation_feedback, build_feedback
from modules.feedback.residuals import LossConfig, ResidualSet, composite_loss
from modules.infra.jsonl import append_jsonl, dumps_stable, write_json
from modules.infra.logging import attach_run_log, detach_run_log, get_logger, log_banner
from modules.memory.context import render_context
from modules.memory.store import BestSoFar, MemoryStore, RoundRecord, default_corpus, init_with_knowledge
from modules.memory.summarize import CAPACITY_CHANGE, CHARGE_TIME_CHANGE, summarize_warmup
from modules.proposer.base import Evaluation, ProposalRequest, ProposalResult, Proposer
from modules.proposer.factory import make_proposer
from modules.proposer.llm_client import EXCHANGES_NAME, ChatClient
from modules.proposer.updates import MULTIPLICATIVE, Directive, ParameterUpdate, StepSizeSchedule, apply_update
from modules.sim.degradation import run_cycles
from modules.sim.parameters import ParameterSet
from modules.sim.solver import run_protocol

from .config import ABORTED, BUDGET_EXHAUSTED, CONVERGED, RunConfig, RunResult
from .task import DEGRADATION, CalibrationTask, Target, write_task_file

_log = get_logger(__name__)

__all__ = [
      "RunPaths"
    , "RoundEvaluation"
    , "evaluate_theta"
    , "check_convergence"
    , "fixed_perturbation"
    , "warmup_phase"
    , "optimize"
    , "calibrate"
    , "render_best"
]


# ────────────────────────────────────────────────────────────────────────────────
# Run directory
# ────────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def run_json(self) -> Path:
        return self.root / "run.json"

    @property
    def task_json(self) -> Path:
        return self.root / "task.json"

    @property
    def memory(self) -> Path:
        return self.root / "memory.jsonl"

    @property
    def rounds(self) -> Path:
        return self.root / "rounds.jsonl"

    @property
    def best(self) -> Path:
        return self.root / "best.json"

    @property
    def result(self) -> Path:
        return self.root / "result.json"

    @property
    def exchanges(self) -> Path:
        return self.root / EXCHANGES_NAME

    @property
    def plots(self) -> Path:
        return self.root / "plots"


def _paths(cfg: RunConfig) -> Optional[RunPaths]:
    return None if cfg.out_dir is None else RunPaths(Path(cfg.out_dir))


def render_best(task_id: str, best: Optional[BestSoFar]) -> str:
    """Exact text of best.json (replay compares against it byte for byte)."""
    payload: JSONDict = {"task": task_id, "round": None, "total_mape": None, "params": None}
    if best is not None:
        payload.update(best.to_dict())
    return dumps_stable(payload, indent=2) + "\n"


@dataclass
class _Clock:
    simulator_s: float = 0.0
    proposer_s: float = 0.0
    started: float = field(default_factory=time.perf_counter)

    def as_dict(self) -> Dict[str, float]:
        total = max(time.perf_counter() - self.started, self.simulator_s + self.proposer_s)
        return {"simulator_s": self.simulator_s, "proposer_s": self.proposer_s, "total_s": total}


# ────────────────────────────────────────────────────────────────────────────────
# Evaluation
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class RoundEvaluation:
    params: ParamValues
    feedback: Dict[str, FeedbackPackage]
    total_mape: Optional[float]
    success: bool
    events: List[str]
    simulated: Dict[str, Target] = field(repr=False)
    simulator_s: float = 0.0

    @property
    def residuals(self) -> Dict[str, ResidualSet]:
        return {pid: pkg.residuals for pid, pkg in self.feedback.items()}

    @property
    def features(self) -> Dict[str, FeatureSet]:
        return {pid: pkg.features for pid, pkg in self.feedback.items()}

    @property
    def visual(self) -> Optional[str]:
        return next((pkg.visual for pkg in self.feedback.values() if pkg.visual), None)

    @property
    def comparable(self) -> bool:
        return self.success and self.total_mape is not None


def _simulate(task: CalibrationTask, theta: ParameterSet, protocol_index: int, events: List[str]) -> Target:
    p = task.protocols[protocol_index]
    try:
        if task.kind == DEGRADATION:
            assert task.cell is not None
            return run_cycles(task.cell, theta, p.protocol, task.n_cycles)  # type: ignore[arg-type]
        return run_protocol(theta, p.protocol)  # type: ignore[arg-type]
    except (ParameterValidationError, ProtocolValidationError) as e:
        _log.warning("simulation of %s/%s rejected before integration: %s", task.id, p.id, e)
        events.append(f"invalid_input:{p.id}")
        return CycleSeries() if task.kind == DEGRADATION else SimulationTrace.empty()


def evaluate_theta(
      task: CalibrationTask
    , theta: ParameterSet
    , loss: Optional[LossConfig] = None
    , *
    , round_index: Optional[int] = None
    , plot_dir: Optional[StrPath] = None
    , extra_events: Sequence[str] = ()
) -> RoundEvaluation:
    """
    Simulate `theta` on every task protocol and score it.

    `total_mape` is the composite loss over protocols, or None when any
    weighted protocol had nothing comparable.
    """
    loss = loss or LossConfig()
    feedback: Dict[str, FeedbackPackage] = {}
    simulated: Dict[str, Target] = {}
    events: List[str] = []
    sim_s = 0.0
    for i, p in enumerate(task.protocols):
        own: List[str] = []
        t0 = time.perf_counter()
        sim = _simulate(task, theta, i, own)
        sim_s += time.perf_counter() - t0
        simulated[p.id] = sim
        own += list(extra_events)

        prefix = None
        if plot_dir is not None and round_index is not None:
            stem = f"round_{round_index}" if len(task.protocols) == 1 else f"round_{round_index}_{p.id}"
            prefix = Path(plot_dir) / stem
        title = f"{task.id} · {p.id} · round {round_index}" if round_index is not None else f"{task.id} · {p.id}"
        if task.kind == DEGRADATION:
            pkg = build_degradation_feedback(
                  sim  # type: ignore[arg-type]
                , p.target  # type: ignore[arg-type]
                , task.cycle_subset_k
                , loss
                , round_index
                , prefix
                , protocol_id=p.id
                , events=own
            )
        else:
            pkg = build_feedback(
                  sim  # type: ignore[arg-type]
                , p.target  # type: ignore[arg-type]
                , own
                , loss
                , round_index
                , prefix
                , protocol_id=p.id
                , title=title
            )
        feedback[p.id] = pkg
        events += [e if len(task.protocols) == 1 else f"{p.id}:{e}" for e in pkg.events]

    params = theta.subset_values(task.search_keys)
    total = composite_loss({pid: pkg.residuals for pid, pkg in feedback.items()}, loss, params)
    success = all(pkg.succeeded for pkg in feedback.values())
    return RoundEvaluation(
          params=params
        , feedback=feedback
        , total_mape=total if math.isfinite(total) else None
        , success=success
        , events=events
        , simulated=simulated
        , simulator_s=sim_s
    )


# ────────────────────────────────────────────────────────────────────────────────
# Convergence
# ────────────────────────────────────────────────────────────────────────────────

def check_convergence(
      history: Sequence[Optional[float]]
    , window: int = 10
    , epsilon: float = 0.1
    , floor: float = 0.01
) -> bool:
    """
    True when the best total_mape is below `floor` (percent), or when the
    best-so-far improved by less than `epsilon` percentage points across
    the last `window` rounds. `None` entries are failed rounds.
    """
    best: List[Optional[float]] = []
    current: Optional[float] = None
    for value in history:
        if value is not None and math.isfinite(value) and (current is None or value < current):
            current = value
        best.append(current)
    if current is None:
        return False
    if current < floor:
        return True
    if len(history) < window:
        return False
    reference = best[-window]
    if reference is None:
        return False
    return reference - current < epsilon


# ────────────────────────────────────────────────────────────────────────────────
# Setup helpers
# ────────────────────────────────────────────────────────────────────────────────

def _task(cfg: RunConfig) -> CalibrationTask:
    if cfg.task is None:
        raise ConfigurationError("run configuration has no task")
    return cfg.task


def _search_keys(cfg: RunConfig) -> tuple:
    task = _task(cfg)
    keys = tuple(cfg.proposer.search_keys) or task.search_keys
    missing = [k for k in keys if k not in task.theta_init]
    if missing:
        raise ConfigurationError(f"search keys {missing} are not parameters of {task.theta_init.name!r}")
    return keys


def build_proposer(cfg: RunConfig, *, client: Optional[ChatClient] = None) -> Proposer:
    """Proposer seeded with the run seed; raises ConfigurationError before any simulation."""
    task = _task(cfg)
    paths = _paths(cfg)
    pcfg = replace(cfg.proposer, seed=cfg.run_seed)
    return make_proposer(
          pcfg
        , task_kind=task.kind
        , protocols=[p.protocol for p in task.protocols]
        , parameter_set=task.theta_init.name
        , search_keys=_search_keys(cfg)
        , audit_path=None if paths is None else paths.exchanges
        , client=client
    )


def new_memory(cfg: RunConfig) -> MemoryStore:
    """Store seeded with the task kind's knowledge corpus (none under no_knowledge)."""
    task = _task(cfg)
    paths = _paths(cfg)
    rules = [] if cfg.ablations.no_knowledge else default_corpus(task.kind)
    return init_with_knowledge(rules, path=None if paths is None else paths.memory)


# ────────────────────────────────────────────────────────────────────────────────
# Phase 1: warm-up
# ────────────────────────────────────────────────────────────────────────────────

def fixed_perturbation(keys: Sequence[str], k: int, spread: float, seed: int) -> ParameterUpdate:
    """Perturbation k (1-based): one key in turn, factor uniform in [1 − spread, 1 + spread]."""
    key = keys[(k - 1) % len(keys)]
    factor = float(np.random.default_rng([int(seed), int(k)]).uniform(1.0 - spread, 1.0 + spread))
    return ParameterUpdate({key: Directive(MULTIPLICATIVE, factor)}, rationale=f"fixed warm-up {k}")


def _warmup_updates(cfg: RunConfig, proposer: Proposer, clock: _Clock) -> List[ParameterUpdate]:
    task = _task(cfg)
    keys = _search_keys(cfg)
    groups: List[ParameterUpdate] = []
    if cfg.warmup_strategy != "fixed":
        n_groups = cfg.n_warmup if task.kind != DEGRADATION else math.ceil(cfg.n_warmup / 2)
        t0 = time.perf_counter()
        batch = proposer.warmup_batch(task.theta_init, keys, n_groups)
        clock.proposer_s += time.perf_counter() - t0
        if batch is None and cfg.warmup_strategy == "proposer":
            _log.warning("warm-up: proposer %s offers no batch; using the fixed strategy", proposer.kind)
        groups = list(batch or [])[: cfg.n_warmup]
    fixed = [
        fixed_perturbation(keys, k, cfg.warmup_spread, cfg.run_seed)
        for k in range(len(groups) + 1, cfg.n_warmup + 1)
    ]
    return groups + fixed


def _probe(target: Target) -> Optional[SimulationTrace]:
    if isinstance(target, CycleSeries):
        return target.entries[-1].trace if len(target) else None
    return target


def _effects(task: CalibrationTask, baseline: RoundEvaluation, ev: RoundEvaluation) -> Optional[Dict[str, float]]:
    """Capacity change [%] and CC-charge time change [s] of the first protocol against θ_init."""
    if not (baseline.success and ev.success):
        return None
    pid = task.protocols[0].id
    base, pert = _probe(baseline.simulated[pid]), _probe(ev.simulated[pid])
    if base is None or pert is None:
        return None
    out: Dict[str, float] = {}
    q0, q1 = base.discharge_capacity(), pert.discharge_capacity()
    if q0 > 0.0:
        out[CAPACITY_CHANGE] = 100.0 * (q1 - q0) / q0
    t0, t1 = base.step_duration("cc_charge"), pert.step_duration("cc_charge")
    if t0 is not None and t1 is not None:
        out[CHARGE_TIME_CHANGE] = t1 - t0
    return out


def warmup_phase(
      cfg: RunConfig
    , memory: Optional[MemoryStore] = None
    , *
    , proposer: Optional[Proposer] = None
    , clock: Optional[_Clock] = None
    , stop_event: Optional[threading.Event] = None
) -> MemoryStore:
    """
    Phase 1. Simulates N_w perturbations of θ_init, records them as warm-up
    records and adds the summarized sensitivity rules to memory.

    A failing perturbation becomes a failure record (and rule); it never
    aborts the phase.
    """
    cfg.validate()
    task = _task(cfg)
    memory = memory if memory is not None else new_memory(cfg)
    if cfg.n_warmup == 0:
        _log.info("warm-up: skipped (N_w = 0)")
        return memory

    owns = proposer is None
    proposer = proposer or build_proposer(cfg)
    clock = clock or _Clock()
    keys = _search_keys(cfg)
    theta0 = task.theta_init
    try:
        log_banner(_log, f"warm-up · {task.id} · {cfg.n_warmup} perturbations")
        baseline = evaluate_theta(task, theta0, cfg.loss)
        clock.simulator_s += baseline.simulator_s
        updates = _warmup_updates(cfg, proposer, clock)

        records: List[RoundRecord] = []
        for k, update in enumerate(updates, start=1):
            if stop_event is not None and stop_event.is_set():
                _log.warning("warm-up: stop requested after %d perturbations", k - 1)
                break
            events: List[str] = []
            try:
                theta_k = apply_update(theta0, update, 1.0, events=events)
            except (RejectedKeyError, ParameterValidationError) as e:
                _log.warning("warm-up %d: proposed perturbation unusable (%s); using a fixed one", k, e)
                update = fixed_perturbation(keys, k, cfg.warmup_spread, cfg.run_seed)
                events = []
                theta_k = apply_update(theta0, update, 1.0, events=events)

            ev = evaluate_theta(task, theta_k, cfg.loss, round_index=k, extra_events=events)
            clock.simulator_s += ev.simulator_s
            perturbation = {
                key: theta_k[key] / theta0[key] - 1.0
                for key in update.keys()
                if key in theta0 and theta0[key] != 0.0
            }
            record = RoundRecord(
                  round=k
                , params=ev.params
                , total_mape=ev.total_mape
                , success=ev.success
                , residuals=ev.residuals
                , features=ev.features
                , events=ev.events
                , update=update.to_dict()
                , rationale=update.rationale
                , perturbation=perturbation
                , effects=_effects(task, baseline, ev)
                , timings={"simulator_s": ev.simulator_s}
            )
            memory.record_warmup(record)
            records.append(record)
            _log.info(
                  "warm-up %d/%d: %s → %s"
                , k, len(updates)
                , ", ".join(f"{key} {100.0 * v:+.1f}%" for key, v in perturbation.items()) or "no change"
                , "failed" if not ev.success else f"total_mape={ev.total_mape}"
            )

        if records:
            t0 = time.perf_counter()
            summarize_warmup(memory, records, summarizer=proposer.summarizer())
            clock.proposer_s += time.perf_counter() - t0
    finally:
        if owns:
            proposer.close()
    return memory


# ────────────────────────────────────────────────────────────────────────────────
# Phase 2: optimization
# ────────────────────────────────────────────────────────────────────────────────

def _propose(proposer: Proposer, request: ProposalRequest) -> ProposalResult:
    try:
        return proposer.propose(request)
    except (ProposerError, ParseError) as e:
        _log.warning("round %d: proposer failed (%s); no-op round", request.round, e)
        return ProposalResult(None, note=f"{type(e).__name__}: {e}")


def optimize(
      cfg: RunConfig
    , memory: MemoryStore
    , *
    , proposer: Optional[Proposer] = None
    , stop_event: Optional[threading.Event] = None
    , warmup_timings: Optional[Dict[str, float]] = None
) -> RunResult:
    """
    Phase 2: up to T rounds; returns the best-so-far parameters.

    Every round is appended to memory and, with a run directory, to
    rounds.jsonl; best.json and result.json are written at the end.
    """
    cfg.validate()
    task = _task(cfg)
    paths = _paths(cfg)
    keys = _search_keys(cfg)
    owns = proposer is None
    proposer = proposer or build_proposer(cfg)
    clock = _Clock()
    schedule = StepSizeSchedule()
    plot_dir = paths.plots if paths is not None and cfg.plots else None

    theta = task.theta_init
    history: List[Evaluation] = []
    losses: List[Optional[float]] = []
    pending_events: List[str] = []
    termination = BUDGET_EXHAUSTED
    error: Optional[str] = None
    initial: Optional[float] = None
    n_done = n_failed = n_noop = 0

    log_banner(_log, f"optimization · {task.id} · {cfg.method} · T={cfg.n_rounds}")
    try:
        for t in range(1, cfg.n_rounds + 1):
            if stop_event is not None and stop_event.is_set():
                _log.warning("optimize: stop requested before round %d", t)
                termination, error = ABORTED, "interrupted"
                break

            ev = evaluate_theta(task, theta, cfg.loss, round_index=t, plot_dir=plot_dir, extra_events=pending_events)
            pending_events = []
            clock.simulator_s += ev.simulator_s
            if t == 1:
                initial = ev.total_mape
            if not ev.success:
                n_failed += 1
            eta = schedule.observe(ev.total_mape, ev.success) if proposer.uses_step_size else 1.0
            history.append((ev.params, ev.total_mape))
            losses.append(ev.total_mape if ev.comparable else None)
            converged = check_convergence(losses, cfg.convergence_window, cfg.convergence_epsilon, cfg.convergence_floor)

            record = RoundRecord(
                  round=t
                , params=ev.params
                , total_mape=ev.total_mape
                , success=ev.success
                , residuals=ev.residuals
                , features=ev.features
                , events=list(ev.events)
                , timings={"simulator_s": ev.simulator_s}
            )

            if not converged and t < cfg.n_rounds:
                context = "" if cfg.ablations.no_memory else render_context(memory, cfg.token_budget)
                request = ProposalRequest(
                      round=t
                    , theta=theta
                    , search_keys=keys
                    , feedback=ev.feedback
                    , total_mape=ev.total_mape
                    , context=context
                    , history=tuple(history)
                    , visual=ev.visual
                    , scalar_only=cfg.ablations.scalar_only
                )
                t0 = time.perf_counter()
                result = _propose(proposer, request)
                spent = time.perf_counter() - t0
                clock.proposer_s += spent
                record.timings["proposer_s"] = spent

                update = result.update
                if update is not None:
                    offenders = [k for k in update.keys() if k not in keys]
                    if offenders:
                        _log.warning("round %d: update names non-search keys %s; no-op round", t, offenders)
                        record.events.append(f"rejected_keys:{','.join(sorted(offenders))}")
                        update = None
                if update is not None:
                    applied_events: List[str] = []
                    theta = apply_update(theta, update, eta, events=applied_events)
                    record.update = update.to_dict()
                    record.applied = theta.subset_values(keys)
                    record.rationale = update.rationale
                    record.step_size = eta
                    pending_events = applied_events
                else:
                    n_noop += 1
                    record.events.append("noop")
                    record.rationale = result.note

            memory.record(record)
            n_done = t
            if paths is not None:
                append_jsonl(paths.rounds, record.to_dict())
            _log.info(
                  "round %d/%d: total_mape=%s best=%s η=%.3g%s"
                , t, cfg.n_rounds
                , "n/a" if ev.total_mape is None else f"{ev.total_mape:.4f}%"
                , "n/a" if memory.best is None else f"{memory.best.total_mape:.4f}%"
                , eta
                , "" if ev.success else " (simulation failed)"
            )
            if converged:
                termination = CONVERGED
                break
    except CalibrationError as e:
        _log.error("optimize: %s aborted: %s", task.id, e)
        termination, error = ABORTED, f"{type(e).__name__}: {e}"
    finally:
        if owns:
            proposer.close()

    best = memory.best
    best_residuals: Dict[str, JSONDict] = {}
    if best is not None:
        rec = memory.rounds[best.round - 1]
        best_residuals = {pid: r.to_dict() for pid, r in rec.residuals.items()}

    result = RunResult(
          task_id=task.id
        , method=cfg.method
        , termination=termination
        , best_params=None if best is None else dict(best.params)
        , best_total_mape=None if best is None else best.total_mape
        , best_round=None if best is None else best.round
        , initial_total_mape=initial
        , n_rounds=n_done
        , n_warmup=len(memory.warmup)
        , n_failed_rounds=n_failed
        , n_noop_rounds=n_noop
        , best_residuals=best_residuals
        , timings=clock.as_dict()
        , warmup_timings=dict(warmup_timings or {"simulator_s": 0.0, "proposer_s": 0.0, "total_s": 0.0})
        , run_dir=None if paths is None else str(paths.root)
        , error=error
        , meta=dict(task.meta)
    )
    if paths is not None:
        paths.best.write_text(render_best(task.id, best), encoding="utf-8")
        write_json(paths.result, result.to_dict())
    _log.info(
          "optimize: %s %s after %d rounds; best total_mape=%s (round %s)"
        , task.id, termination, n_done, result.best_total_mape, result.best_round
    )
    return result


# ────────────────────────────────────────────────────────────────────────────────
# Full run
# ────────────────────────────────────────────────────────────────────────────────

def calibrate(
      cfg: RunConfig
    , *
    , client: Optional[ChatClient] = None
    , stop_event: Optional[threading.Event] = None
) -> RunResult:
    """
    Warm-up followed by optimization, with the run directory written as
    described in the module docstring.

    Raises
    ------
    ConfigurationError
        Invalid configuration or an unbuildable proposer (before any
        simulation).
    """
    cfg.validate()
    task = _task(cfg)
    paths = _paths(cfg)
    handler = attach_run_log(paths.root) if paths is not None else None
    try:
        proposer = build_proposer(cfg, client=client)
        try:
            if paths is not None:
                write_json(paths.run_json, cfg.to_dict())
                write_task_file(task, paths.root, name="task")
                for stale in (paths.rounds, paths.best, paths.result, paths.exchanges):
                    stale.unlink(missing_ok=True)
            memory = new_memory(cfg)
            warm = _Clock()
            warmup_phase(cfg, memory, proposer=proposer, clock=warm, stop_event=stop_event)
            return optimize(cfg, memory, proposer=proposer, stop_event=stop_event, warmup_timings=warm.as_dict())
        finally:
            proposer.close()
    finally:
        if handler is not None:
            detach_run_log(handler)


if __name__ == "__main__":
    import sys

    from modules.infra.logging import init_logging
    from modules.proposer.factory import ProposerConfig

    from .task import load_task_file

    init_logging("INFO")
    res = calibrate(RunConfig(task=load_task_file(sys.argv[1]), proposer=ProposerConfig(kind="bo"), n_warmup=2, n_rounds=6))
    print(res.to_dict())
