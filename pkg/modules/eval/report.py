# modules/eval/report.py
# -*- coding: utf-8 -*-
"""
Suite reports
=============

aggregate_report(results, manifest) groups final run results by
(mode, base, c_rate, method) and reports

- mean ± std (population) of the final total MAPE and voltage RMSE
- number of tasks and of failed tasks (aborted, or no successful round)
- runtime sums: simulator, proposer, total, and warm-up separately

Manifest tasks without a result for a method are listed, never dropped.

evaluate_results(results_dirs, manifest, out_dir) writes

    suite_report.csv      grouped table
    suite_report.txt      aligned text version + missing tasks + correlation summary
    suite_report.xlsx     optional (openpyxl)
    tasks.csv             one row per result
    correlation.csv       task,round,total_mape,param_error,method
    held_out.csv          optional held-out protocol table
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from modules.bench.manifest import BenchmarkManifest, BenchmarkTask
from modules.core.errors import DomainError
from modules.core.types import StrPath
from modules.infra.jsonl import read_json, read_jsonl
from modules.infra.logging import get_logger
from modules.orchestrator.batch import load_results
from modules.orchestrator.config import RunResult
from modules.orchestrator.loop import RunPaths

from .metrics import MIN_CORRELATION_ROUNDS, CaseCorrelation, mean_defined, parameter_error, within_case_correlation
from .validation import HeldOutEntry, held_out_frame, held_out_protocols, held_out_validation

_log = get_logger(__name__)

GROUP_COLUMNS = ["mode", "base", "c_rate", "method"]
SUITE_COLUMNS = [
      *GROUP_COLUMNS
    , "n_tasks"
    , "n_failed"
    , "mape_mean"
    , "mape_std"
    , "rmse_mean"
    , "rmse_std"
    , "simulator_s"
    , "proposer_s"
    , "total_s"
    , "warmup_s"
]
TASK_COLUMNS = [
      "task", *GROUP_COLUMNS, "termination", "best_round", "n_rounds"
    , "total_mape", "voltage_rmse", "simulator_s", "proposer_s", "total_s", "warmup_s"
]
CORRELATION_COLUMNS = ["task", "round", "total_mape", "param_error", "method"]

__all__ = [
      "SuiteReport"
    , "CorrelationReport"
    , "aggregate_report"
    , "correlation_report"
    , "held_out_table"
    , "evaluate_results"
]


# ────────────────────────────────────────────────────────────────────────────────
# Types
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class CorrelationReport:
    """Per-(task, method) coefficients plus the raw round table they come from."""

    cases: Dict[str, CaseCorrelation] = field(default_factory=dict)
    raw: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=CORRELATION_COLUMNS))
    skipped: List[str] = field(default_factory=list)

    @property
    def mean_pearson(self) -> Optional[float]:
        return mean_defined([c.pearson for c in self.cases.values()])

    @property
    def mean_spearman(self) -> Optional[float]:
        return mean_defined([c.spearman for c in self.cases.values()])

    @property
    def monotone_fraction(self) -> Optional[float]:
        if not self.cases:
            return None
        return sum(1 for c in self.cases.values() if c.monotone) / len(self.cases)

    def summary_lines(self) -> List[str]:
        def _f(v: Optional[float]) -> str:
            return "undefined" if v is None else f"{v:.3f}"

        return [
              f"cases: {len(self.cases)} (skipped {len(self.skipped)})"
            , f"mean Pearson r: {_f(self.mean_pearson)}"
            , f"mean Spearman ρ: {_f(self.mean_spearman)}"
            , f"monotone co-decrease: {_f(self.monotone_fraction)}"
        ]


@dataclass
class SuiteReport:
    table: pd.DataFrame
    per_task: pd.DataFrame
    missing: List[str] = field(default_factory=list)
    correlation: Optional[CorrelationReport] = None
    held_out: Optional[pd.DataFrame] = None

    def to_text(self) -> str:
        lines: List[str] = ["Suite report", "============", ""]
        if self.table.empty:
            lines.append("(no results)")
        else:
            lines.append(self.table.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="n/a"))
        lines += ["", f"Missing results: {len(self.missing)}"]
        lines += [f"  {m}" for m in self.missing]
        if self.correlation is not None:
            lines += ["", "Within-case correlation", "-----------------------"]
            lines += self.correlation.summary_lines()
        if self.held_out is not None and not self.held_out.empty:
            lines += ["", "Held-out protocols", "------------------"]
            lines.append(self.held_out.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="n/a"))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: StrPath, *, excel: bool = False) -> Dict[str, Path]:
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        files = {
              "csv": root / "suite_report.csv"
            , "txt": root / "suite_report.txt"
            , "tasks": root / "tasks.csv"
        }
        self.table.to_csv(files["csv"], index=False, float_format="%.10g")
        self.per_task.to_csv(files["tasks"], index=False, float_format="%.10g")
        files["txt"].write_text(self.to_text(), encoding="utf-8")
        if self.correlation is not None:
            files["correlation"] = root / "correlation.csv"
            self.correlation.raw.to_csv(files["correlation"], index=False, float_format="%.10g")
        if self.held_out is not None:
            files["held_out"] = root / "held_out.csv"
            self.held_out.to_csv(files["held_out"], index=False, float_format="%.10g")
        if excel:
            files["xlsx"] = root / "suite_report.xlsx"
            with pd.ExcelWriter(files["xlsx"], engine="openpyxl") as xw:
                self.table.to_excel(xw, sheet_name="suite", index=False)
                self.per_task.to_excel(xw, sheet_name="tasks", index=False)
                if self.held_out is not None:
                    self.held_out.to_excel(xw, sheet_name="held_out", index=False)
        _log.info("suite report → %s (%s)", root, ", ".join(sorted(files)))
        return files


# ────────────────────────────────────────────────────────────────────────────────
# Aggregation
# ────────────────────────────────────────────────────────────────────────────────

def _failed(r: RunResult) -> bool:
    return r.aborted or r.best_total_mape is None


def _voltage_rmse(r: RunResult) -> Optional[float]:
    values = [
        float(res["voltage_rmse"])
        for res in r.best_residuals.values()
        if isinstance(res, dict) and res.get("voltage_rmse") is not None
    ]
    return float(np.mean(values)) if values else None


def _labels(r: RunResult, manifest: Optional[BenchmarkManifest]) -> Dict[str, object]:
    task: Optional[BenchmarkTask] = None
    if manifest is not None:
        try:
            task = manifest.task(r.task_id)
        except KeyError:
            task = None
    if task is not None:
        return {"mode": task.mode, "base": task.base, "c_rate": float(task.c_rate)}
    meta = r.meta or {}
    c_rate = meta.get("c_rate")
    return {
          "mode": str(meta.get("mode", ""))
        , "base": str(meta.get("base", ""))
        , "c_rate": float(c_rate) if c_rate is not None else math.nan
    }


def _task_rows(results: Sequence[RunResult], manifest: Optional[BenchmarkManifest]) -> pd.DataFrame:
    rows = []
    for r in results:
        failed = _failed(r)
        rows.append({
              "task": r.task_id
            , **_labels(r, manifest)
            , "method": r.method
            , "termination": r.termination
            , "best_round": r.best_round
            , "n_rounds": r.n_rounds
            , "total_mape": None if failed else r.best_total_mape
            , "voltage_rmse": None if failed else _voltage_rmse(r)
            , "simulator_s": float(r.timings.get("simulator_s", 0.0))
            , "proposer_s": float(r.timings.get("proposer_s", 0.0))
            , "total_s": float(r.timings.get("total_s", 0.0))
            , "warmup_s": float(r.warmup_timings.get("total_s", 0.0))
        })
    frame = pd.DataFrame.from_records(rows, columns=TASK_COLUMNS)
    return frame.sort_values(["task", "method"], kind="mergesort").reset_index(drop=True)


def _std(series: pd.Series) -> float:
    kept = series.dropna()
    return float(kept.std(ddof=0)) if len(kept) else math.nan


def aggregate_report(results: Sequence[RunResult], manifest: Optional[BenchmarkManifest] = None) -> SuiteReport:
    """
    Group results into the suite table. With a manifest, every
    (method, task) pair without a result is listed in `missing`.
    """
    per_task = _task_rows(results, manifest)
    if per_task.empty:
        _log.warning("aggregate_report: no results")
        return SuiteReport(table=pd.DataFrame(columns=SUITE_COLUMNS), per_task=per_task)

    rows = []
    for key, grp in per_task.groupby(GROUP_COLUMNS, sort=True, dropna=False):
        mode, base, c_rate, method = key
        ok = grp[grp["total_mape"].notna()]
        rows.append({
              "mode": mode
            , "base": base
            , "c_rate": c_rate
            , "method": method
            , "n_tasks": int(len(grp))
            , "n_failed": int(len(grp) - len(ok))
            , "mape_mean": float(ok["total_mape"].astype(float).mean()) if len(ok) else math.nan
            , "mape_std": _std(ok["total_mape"].astype(float))
            , "rmse_mean": float(ok["voltage_rmse"].dropna().astype(float).mean()) if ok["voltage_rmse"].notna().any() else math.nan
            , "rmse_std": _std(ok["voltage_rmse"].astype(float))
            , "simulator_s": float(grp["simulator_s"].sum())
            , "proposer_s": float(grp["proposer_s"].sum())
            , "total_s": float(grp["total_s"].sum())
            , "warmup_s": float(grp["warmup_s"].sum())
        })
    table = pd.DataFrame.from_records(rows, columns=SUITE_COLUMNS)

    missing: List[str] = []
    if manifest is not None:
        have = set(zip(per_task["method"], per_task["task"]))
        for method in sorted(per_task["method"].unique()):
            missing += [f"{method}: {t.id}" for t in manifest.tasks if (method, t.id) not in have]
        if missing:
            _log.warning("aggregate_report: %d (method, task) pairs without a result", len(missing))
    return SuiteReport(table=table, per_task=per_task, missing=missing)


# ────────────────────────────────────────────────────────────────────────────────
# Correlation and held-out tables
# ────────────────────────────────────────────────────────────────────────────────

def _roots(results_dirs: Union[StrPath, Sequence[StrPath]]) -> List[Path]:
    if isinstance(results_dirs, (str, Path)):
        return [Path(results_dirs)]
    return [Path(p) for p in results_dirs]


def _rounds_file(roots: Sequence[Path], r: RunResult) -> Optional[Path]:
    """rounds.jsonl of the run that produced `r` (its own run_dir, else a results root holding the same method)."""
    if r.run_dir and RunPaths(Path(r.run_dir)).rounds.is_file():
        return RunPaths(Path(r.run_dir)).rounds
    for root in roots:
        paths = RunPaths(root / r.task_id)
        if paths.rounds.is_file() and paths.result.is_file() and read_json(paths.result).get("method") == r.method:
            return paths.rounds
    return None


def correlation_report(
      results: Sequence[RunResult]
    , manifest: BenchmarkManifest
    , results_dirs: Union[StrPath, Sequence[StrPath]]
) -> CorrelationReport:
    """
    Per-round (total_mape, parameter error) for every result whose task is in
    the manifest; coefficients need MIN_CORRELATION_ROUNDS successful rounds.
    """
    roots = _roots(results_dirs)
    report = CorrelationReport()
    records: List[Dict[str, object]] = []
    for r in sorted(results, key=lambda x: (x.task_id, x.method)):
        label = f"{r.method}: {r.task_id}"
        try:
            task = manifest.task(r.task_id)
        except KeyError:
            report.skipped.append(label)
            continue
        path = _rounds_file(roots, r)
        if path is None:
            report.skipped.append(label)
            continue
        pairs = []
        for row in read_jsonl(path):
            loss = row.get("total_mape")
            if loss is None or not row.get("success", True):
                continue
            try:
                err = parameter_error(row["params"], task.theta_star, task.search_keys).distance
            except (KeyError, DomainError) as e:
                _log.warning("correlation %s round %s: %s", label, row.get("round"), e)
                continue
            pairs.append((float(loss), err))
            records.append({"task": r.task_id, "round": int(row["round"]), "total_mape": float(loss), "param_error": err, "method": r.method})
        if len(pairs) < MIN_CORRELATION_ROUNDS:
            report.skipped.append(label)
            continue
        report.cases[label] = within_case_correlation(pairs)
    report.raw = pd.DataFrame.from_records(records, columns=CORRELATION_COLUMNS)
    return report


def held_out_table(
      results: Sequence[RunResult]
    , manifest: BenchmarkManifest
    , c_rates: Sequence[float]
    , *
    , sample_interval_s: Optional[float] = None
) -> pd.DataFrame:
    protocols = held_out_protocols(c_rates, sample_interval_s=sample_interval_s)
    rows: Dict[str, List[HeldOutEntry]] = {}
    for r in sorted(results, key=lambda x: (x.task_id, x.method)):
        if _failed(r) or not r.best_params:
            continue
        try:
            task = manifest.task(r.task_id)
        except KeyError:
            continue
        theta_hat = task.theta_init.with_values(r.best_params, validate=False)
        rows[f"{r.task_id} [{r.method}]"] = held_out_validation(theta_hat, protocols, task.theta_star)
    return held_out_frame(rows)


def evaluate_results(
      results_dirs: Union[StrPath, Sequence[StrPath]]
    , manifest: Optional[BenchmarkManifest] = None
    , *
    , out_dir: Optional[StrPath] = None
    , excel: bool = False
    , held_out_rates: Optional[Sequence[float]] = None
) -> SuiteReport:
    """
    Load every result under the results directories (one per method when
    several methods are compared), aggregate, and write the report files
    (default: into the first results directory).
    """
    roots = _roots(results_dirs)
    results = sorted((r for root in roots for r in load_results(root)), key=lambda r: (r.task_id, r.method))
    report = aggregate_report(results, manifest)
    if manifest is not None and results:
        report.correlation = correlation_report(results, manifest, roots)
        if held_out_rates:
            report.held_out = held_out_table(results, manifest, held_out_rates)
    report.write(out_dir if out_dir is not None else roots[0], excel=excel)
    return report


if __name__ == "__main__":
    import sys

    print(evaluate_results(sys.argv[1] if len(sys.argv) > 1 else "results").to_text())
