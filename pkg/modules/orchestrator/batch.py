# modules/orchestrator/batch.py
# -*- coding: utf-8 -*-
"""
Suite execution
===============

batch_run(manifest, template, parallelism) runs one calibration per
manifest task on a bounded thread pool:

    <out_dir>/<task id>/...   one run directory per task (see loop.py)

- every task runs with its own seed (manifest task seed: suite seed XOR a
  hash of the task id), so results do not depend on the worker count
- a task whose result.json exists (and did not abort) is skipped and its
  stored result returned
- a task that raises is recorded as aborted; the batch continues
- LLM runs share one connection-pooled ChatClient
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from modules.bench.manifest import BenchmarkManifest, BenchmarkTask
from modules.core.errors import ConfigurationError
from modules.core.types import StrPath
from modules.infra.jsonl import read_json, write_json
from modules.infra.logging import get_logger, log_banner
from modules.proposer.llm_client import ChatClient
from modules.proposer.llm_common import LLMConfig

from .config import ABORTED, RunConfig, RunResult
from .loop import RunPaths, calibrate
from .task import task_from_benchmark

_log = get_logger(__name__)

__all__ = ["batch_run", "load_results"]


def _completed(paths: RunPaths) -> Optional[RunResult]:
    if not paths.result.is_file():
        return None
    try:
        result = RunResult.from_dict(read_json(paths.result))
    except (ValueError, KeyError) as e:
        _log.warning("unreadable %s (%s); task will rerun", paths.result, e)
        return None
    return None if result.aborted else result


def _run_one(
      task: BenchmarkTask
    , manifest: BenchmarkManifest
    , template: RunConfig
    , out_dir: Path
    , client: Optional[ChatClient]
    , stop_event: Optional[threading.Event]
) -> RunResult:
    paths = RunPaths(out_dir / task.id)
    done = _completed(paths)
    if done is not None:
        _log.info("batch: %s already done (%s); skipped", task.id, done.termination)
        return done
    if stop_event is not None and stop_event.is_set():
        return RunResult(task.id, template.method, ABORTED, error="interrupted", run_dir=str(paths.root))

    try:
        calib_task = task_from_benchmark(task, manifest.root or Path("."))
        cfg = replace(template, task=calib_task, seed=None, out_dir=paths.root)
        return calibrate(cfg, client=client, stop_event=stop_event)
    except Exception as e:  # noqa: BLE001
        _log.error("batch: task %s aborted: %s: %s", task.id, type(e).__name__, e)
        result = RunResult(
              task_id=task.id
            , method=template.method
            , termination=ABORTED
            , run_dir=str(paths.root)
            , error=f"{type(e).__name__}: {e}"
            , meta={"mode": task.mode, "base": task.base, "c_rate": task.c_rate, "rule_id": task.rule_id}
        )
        write_json(paths.result, result.to_dict())
        return result


def batch_run(
      manifest: BenchmarkManifest
    , template: RunConfig
    , parallelism: int = 1
    , out_dir: Optional[StrPath] = None
    , *
    , client: Optional[ChatClient] = None
    , stop_event: Optional[threading.Event] = None
    , task_ids: Optional[Sequence[str]] = None
) -> List[RunResult]:
    """
    One calibration per manifest task (or per `task_ids`), results in
    manifest order.

    Raises
    ------
    ValueError
        parallelism < 1.
    ConfigurationError
        No output directory, or an LLM proposer without an endpoint
        (raised before any task starts).
    """
    if parallelism < 1:
        raise ValueError(f"parallelism must be ≥ 1 (got {parallelism})")
    root = Path(out_dir) if out_dir is not None else template.out_dir
    if root is None:
        raise ConfigurationError("batch_run needs an output directory")
    template.validate()

    tasks = list(manifest.tasks)
    if task_ids is not None:
        wanted = set(task_ids)
        tasks = [t for t in tasks if t.id in wanted]
    if not tasks:
        _log.warning("batch_run: no tasks to run")
        return []

    owns = False
    if template.proposer.kind == "llm" and client is None:
        client = ChatClient(LLMConfig.from_settings(template.proposer.llm))
        owns = True

    log_banner(_log, f"suite · {len(tasks)} tasks · {template.method} · parallel={parallelism}", box=True)
    try:
        if parallelism == 1:
            results = [_run_one(t, manifest, template, root, client, stop_event) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=parallelism, thread_name_prefix="task") as pool:
                results = list(pool.map(lambda t: _run_one(t, manifest, template, root, client, stop_event), tasks))
    finally:
        if owns and client is not None:
            client.close()

    aborted = sum(1 for r in results if r.aborted)
    _log.info("batch_run: %d tasks, %d aborted → %s", len(results), aborted, root)
    return results


def load_results(results_dir: StrPath) -> List[RunResult]:
    """Every `<results_dir>/*/result.json`, sorted by task id then method."""
    root = Path(results_dir)
    if not root.is_dir():
        return []
    out = [RunResult.from_dict(read_json(p)) for p in sorted(root.glob("*/result.json"))]
    return sorted(out, key=lambda r: (r.task_id, r.method))
