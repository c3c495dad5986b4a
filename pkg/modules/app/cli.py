# modules/app/cli.py
# -*- coding: utf-8 -*-
"""
battery-calibration command line
================================

Subcommands
-----------
gen-bench   generate a benchmark suite (manifest.json, targets/, tasks/)
simulate    run the forward model on one protocol (or N degradation cycles)
calibrate   warm-up + optimization on one task file → run directory
run-suite   one calibration per manifest task → results tree
evaluate    suite report (CSV / text / optional xlsx), correlation and held-out tables
replay      re-derive best.json from rounds.jsonl and byte-compare
plot        re-simulate one logged round and write its overlay

Settings precedence: command-line flags > environment > --config JSON file.
The LLM endpoint comes from --base-url / BATTERY_LLM_BASE_URL and the token
from --api-key / BATTERY_LLM_API_KEY.

Results are printed to stdout as JSON (evaluate prints the text report);
logs go to stderr.

Exit codes: 0 success, 2 usage / validation error, 3 aborted run or replay
divergence.

Example
-------
python scripts/battery_calibration.py calibrate \
    --task bench/tasks/<task id>.json \
    --proposer bo --rounds 40 --out runs/bo-demo
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Sequence

from modules.bench.manifest import DEFAULT_C_RATES, generate_manifest, load_manifest, write_manifest
from modules.bench.perturbations import MODES
from modules.core.config import get_llm_defaults, resolve_settings
from modules.core.errors import CalibrationError
from modules.infra.jsonl import dumps_stable, read_json, read_jsonl
from modules.infra.logging import get_logger, init_logging
from modules.orchestrator.batch import batch_run
from modules.orchestrator.config import Ablations, RunConfig
from modules.orchestrator.loop import RunPaths, calibrate, evaluate_theta
from modules.orchestrator.replay import replay_run
from modules.orchestrator.task import load_task_file
from modules.proposer.factory import KINDS
from modules.sim.degradation import run_cycles
from modules.sim.parameters import (
      DegradationParameterSet
    , PhysicalParameterSet
    , load_default_cell
    , load_default_degradation
    , load_parameter_set
)
from modules.sim.protocol import Protocol, standard_protocol
from modules.sim.solver import run_protocol

_log = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ABORTED = 3

# Input problems that map to a usage exit rather than a traceback.
_USAGE_ERRORS = (CalibrationError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError)

__all__ = ["main", "build_run_config", "EXIT_OK", "EXIT_USAGE", "EXIT_ABORTED"]


# ────────────────────────────────────────────────────────────────────────────────
# Helpers
# ────────────────────────────────────────────────────────────────────────────────

def _emit(obj: Any) -> None:
    print(dumps_stable(obj, indent=2))


def _read_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    raw = read_json(path)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    return raw


def _llm_settings(args: argparse.Namespace, file_values: Mapping[str, Any], environ: Optional[Mapping[str, str]]) -> Dict[str, Any]:
    d = get_llm_defaults()
    return resolve_settings(
          {"base_url": args.base_url, "api_key": args.api_key, "model": args.model, "temperature": args.temperature}
        , env_names={"base_url": d.base_url_env, "api_key": d.api_key_env}
        , file_values=file_values
        , environ=environ
    )


def build_run_config(
      args: argparse.Namespace
    , *
    , environ: Optional[Mapping[str, str]] = None
) -> RunConfig:
    """RunConfig from --config plus the flags that override it."""
    raw = _read_config(args.config)
    prop_raw = dict(raw.get("proposer", {}))
    cfg = RunConfig.from_dict(raw)

    proposer = replace(
          cfg.proposer
        , kind=args.proposer or cfg.proposer.kind
        , search_keys=tuple(args.search_keys) if args.search_keys else cfg.proposer.search_keys
        , replay=args.replay or cfg.proposer.replay
        , llm=_llm_settings(args, prop_raw.get("llm", {}), environ)
        , allow_stub=args.allow_stub or cfg.proposer.allow_stub
    )
    ablations = cfg.ablations
    if args.ablate:
        ablations = Ablations.parse([*ablations.names(), *args.ablate])

    return replace(
          cfg
        , proposer=proposer
        , n_warmup=cfg.n_warmup if args.warmup is None else args.warmup
        , n_rounds=cfg.n_rounds if args.rounds is None else args.rounds
        , warmup_strategy=args.warmup_strategy or cfg.warmup_strategy
        , seed=cfg.seed if args.seed is None else args.seed
        , out_dir=Path(args.out) if args.out else cfg.out_dir
        , ablations=ablations
        , plots=cfg.plots and not args.no_plots
    )


@contextmanager
def _interruptible() -> Iterator[threading.Event]:
    """Ctrl-C sets the event; the loop finishes the round in flight and stops."""
    stop = threading.Event()
    if threading.current_thread() is not threading.main_thread():
        yield stop
        return

    def _handler(signum, frame):  # noqa: ARG001
        if stop.is_set():
            raise KeyboardInterrupt
        _log.warning("interrupt received; finishing the current round (press Ctrl-C again to force)")
        stop.set()

    previous = signal.signal(signal.SIGINT, _handler)
    try:
        yield stop
    finally:
        signal.signal(signal.SIGINT, previous)


def _physical(path: Optional[str]) -> PhysicalParameterSet:
    if not path:
        return load_default_cell()
    pset = load_parameter_set(path)
    if not isinstance(pset, PhysicalParameterSet):
        raise ValueError(f"{path}: expected a physical parameter set, got {pset.KIND}")
    return pset


def _degradation(path: Optional[str]) -> DegradationParameterSet:
    if not path:
        return load_default_degradation()
    pset = load_parameter_set(path)
    if not isinstance(pset, DegradationParameterSet):
        raise ValueError(f"{path}: expected a degradation parameter set, got {pset.KIND}")
    return pset


# ────────────────────────────────────────────────────────────────────────────────
# Subcommands
# ────────────────────────────────────────────────────────────────────────────────

def _cmd_gen_bench(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    bases = [_physical(p) for p in args.bases] if args.bases else [load_default_cell()]
    manifest = generate_manifest(
          bases
        , args.c_rates
        , args.modes
        , args.n
        , args.seed
        , search_keys=args.search_key_policy
        , sample_interval_s=args.sample_interval
        , parallelism=args.parallel
    )
    path = write_manifest(manifest, args.out)
    _emit({
          "manifest": str(path)
        , "tasks": len(manifest.tasks)
        , "generation_counts": manifest.generation_counts
        , "shortfall": manifest.shortfall
    })
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    params = _physical(args.params)
    protocol = Protocol.from_json(args.protocol) if args.protocol else standard_protocol(args.c_rate, sample_interval_s=args.sample_interval)
    out = Path(args.out) if args.out else None

    if args.cycles:
        series = run_cycles(params, _degradation(args.degradation), protocol, args.cycles)
        if out is not None:
            series.to_csv(out)
        _emit({
              "protocol": protocol.name
            , "cycles": len(series)
            , "event": series.event.value
            , "capacities_ah": [float(c) for c in series.capacities()]
            , "csv": None if out is None else str(out)
        })
        return EXIT_OK

    trace = run_protocol(params, protocol)
    if out is not None:
        trace.to_csv(out)
    _emit({
          "protocol": protocol.name
        , "event": trace.event.value
        , "samples": trace.n_samples
        , "discharge_capacity_ah": trace.discharge_capacity() if trace.n_samples else None
        , "step_kinds": list(trace.step_kinds)
        , "step_events": list(trace.step_events)
        , "csv": None if out is None else str(out)
    })
    return EXIT_OK


def _cmd_calibrate(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    task = load_task_file(args.task)
    cfg = replace(build_run_config(args, environ=environ), task=task)
    if cfg.out_dir is None:
        cfg = replace(cfg, out_dir=Path("runs") / f"{task.id}-{cfg.method}")
    with _interruptible() as stop:
        result = calibrate(cfg, stop_event=stop)
    _emit(result.to_dict())
    return EXIT_ABORTED if result.aborted else EXIT_OK


def _cmd_run_suite(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    manifest = load_manifest(args.manifest)
    template = build_run_config(args, environ=environ)
    out_dir = template.out_dir or Path("results") / template.method
    with _interruptible() as stop:
        results = batch_run(manifest, template, args.parallel, out_dir, stop_event=stop, task_ids=args.tasks)
    aborted = [r.task_id for r in results if r.aborted]
    _emit({
          "results": str(out_dir)
        , "method": template.method
        , "tasks": len(results)
        , "aborted": aborted
    })
    return EXIT_ABORTED if aborted else EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    from modules.eval.report import evaluate_results

    manifest = load_manifest(args.manifest) if args.manifest else None
    report = evaluate_results(
          args.results
        , manifest
        , out_dir=args.out
        , excel=args.excel
        , held_out_rates=args.held_out
    )
    print(report.to_text(), end="")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    report = replay_run(args.run_dir)
    _emit(report.to_dict())
    return EXIT_OK if report.ok else EXIT_ABORTED


def _cmd_plot(args: argparse.Namespace, environ: Optional[Mapping[str, str]]) -> int:
    paths = RunPaths(Path(args.run_dir))
    task = load_task_file(paths.task_json)
    cfg = RunConfig.from_dict(read_json(paths.run_json), task=task)
    rows = {int(r["round"]): r for r in read_jsonl(paths.rounds)}
    if args.round not in rows:
        raise ValueError(f"round {args.round} not in {paths.rounds} (have {min(rows, default=0)}..{max(rows, default=0)})")
    theta = task.theta_init.with_values(rows[args.round]["params"], validate=False)
    out = Path(args.out) if args.out else paths.plots
    ev = evaluate_theta(task, theta, cfg.loss, round_index=args.round, plot_dir=out)
    _emit({
          "round": args.round
        , "total_mape": ev.total_mape
        , "success": ev.success
        , "events": ev.events
        , "plots": [str(p) for p in sorted(out.glob(f"round_{args.round}*"))]
    })
    return EXIT_OK


# ────────────────────────────────────────────────────────────────────────────────
# Parser
# ────────────────────────────────────────────────────────────────────────────────

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--proposer", choices=KINDS, default=None, help="proposer kind (default from --config, else llm)")
    p.add_argument("--config", default=None, help="JSON run configuration (run.json layout)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--rounds", type=int, default=None, help="optimization rounds T (≥ 1)")
    p.add_argument("--warmup", type=int, default=None, help="warm-up perturbations N_w (≥ 0)")
    p.add_argument("--warmup-strategy", choices=("auto", "fixed", "proposer"), default=None)
    p.add_argument("--seed", type=int, default=None, help="run seed (default: task seed)")
    p.add_argument("--search-keys", nargs="+", default=None, help="override the task's search keys")
    p.add_argument("--ablate", action="append", choices=Ablations.NAMES + tuple(n.replace("_", "-") for n in Ablations.NAMES), default=None, help="repeatable: scalar_only, no_memory, no_knowledge")
    p.add_argument("--replay", default=None, help="JSONL update file for --proposer scripted")
    p.add_argument("--allow-stub", action="store_true", help="permit the cmaes-stub proposer")
    p.add_argument("--no-plots", action="store_true", help="skip per-round overlay plots")
    p.add_argument("--base-url", default=None, help="LLM endpoint base URL (env BATTERY_LLM_BASE_URL)")
    p.add_argument("--api-key", default=None, help="LLM bearer token (env BATTERY_LLM_API_KEY)")
    p.add_argument("--model", default=None, help="LLM model identifier")
    p.add_argument("--temperature", type=float, default=None, help="LLM sampling temperature")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be ≥ 1 (got {value})")
    return value


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
          prog="battery-calibration"
        , description="Closed-loop inverse calibration of a battery digital twin."
    )
    ap.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING, ... (env BATTERY_LOG_LEVEL wins)")
    ap.add_argument("--log-file", type=Path, default=None, help="also write log lines to this file")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-bench", help="generate a benchmark suite")
    p.add_argument("--bases", nargs="+", default=None, help="physical parameter JSON files (default: the shipped cell)")
    p.add_argument("--c-rates", nargs="+", type=float, default=list(DEFAULT_C_RATES))
    p.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    p.add_argument("--n", type=_positive_int, default=100, help="tasks per mode")
    p.add_argument("--seed", type=int, default=1234, help="suite seed")
    p.add_argument("--search-key-policy", choices=("all", "touched"), default="all")
    p.add_argument("--sample-interval", type=float, default=None, help="protocol sample interval override [s]")
    p.add_argument("--parallel", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="suite directory")
    p.set_defaults(func=_cmd_gen_bench)

    p = sub.add_parser("simulate", help="run the forward model")
    p.add_argument("--params", default=None, help="physical parameter JSON (default: the shipped cell)")
    p.add_argument("--protocol", default=None, help="protocol JSON (default: standard cycle at --c-rate)")
    p.add_argument("--c-rate", type=float, default=1.0)
    p.add_argument("--sample-interval", type=float, default=None)
    p.add_argument("--cycles", type=int, default=0, help="repeat the protocol with SEI growth")
    p.add_argument("--degradation", default=None, help="degradation parameter JSON (default: the shipped SEI set)")
    p.add_argument("--out", default=None, help="trace CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="calibrate one task")
    p.add_argument("--task", required=True, help="task file (tasks/<id>.json)")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("run-suite", help="calibrate every manifest task")
    p.add_argument("--manifest", required=True, help="manifest.json or its directory")
    p.add_argument("--parallel", type=_positive_int, default=1)
    p.add_argument("--tasks", nargs="+", default=None, help="restrict to these task ids")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_run_suite)

    p = sub.add_parser("evaluate", help="aggregate results into a suite report")
    p.add_argument("--results", nargs="+", required=True, help="results directories (one per method)")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None, help="report directory (default: first results directory)")
    p.add_argument("--excel", action="store_true", help="also write suite_report.xlsx")
    p.add_argument("--held-out", nargs="+", type=float, default=None, help="C-rates for held-out validation")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("replay", help="re-derive best.json from rounds.jsonl")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("plot", help="re-simulate a logged round and plot it")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--round", type=_positive_int, required=True)
    p.add_argument("--out", default=None, help="output directory (default: <run-dir>/plots)")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv: Optional[Sequence[str]] = None, *, environ: Optional[Mapping[str, str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    init_logging(args.log_level, log_file=args.log_file, stream=sys.stderr)

    try:
        return int(args.func(args, environ))
    except _USAGE_ERRORS as e:
        _log.error("%s: %s: %s", args.command, type(e).__name__, e)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
