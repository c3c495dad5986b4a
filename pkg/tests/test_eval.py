# tests/test_eval.py
# -*- coding: utf-8 -*-
"""Parameter error, within-case correlation, held-out validation and suite reports."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from modules.bench.manifest import BenchmarkManifest, BenchmarkTask, generate_manifest, task_seed
from modules.bench.perturbations import KEY_PARAMETERS, REGULAR, apply_perturbation, regular_combos, rule_by_id
from modules.core.errors import ContractError, DomainError
from modules.eval.metrics import mape, parameter_error, rmse, within_case_correlation
from modules.eval.report import aggregate_report, evaluate_results
from modules.eval.validation import held_out_protocols, held_out_validation
from modules.feedback import metrics as feedback_metrics
from modules.infra.jsonl import read_jsonl
from modules.orchestrator.batch import batch_run
from modules.orchestrator.config import ABORTED, BUDGET_EXHAUSTED, CONVERGED, RunConfig, RunResult
from modules.orchestrator.loop import calibrate
from modules.orchestrator.task import task_from_benchmark
from modules.proposer.baselines import interpolation_script
from modules.proposer.factory import ProposerConfig
from modules.sim import parameters as P
from modules.sim.solver import run_protocol


def _result(task_id, method, total, *, rmse_v=0.01, termination=BUDGET_EXHAUSTED, meta=None):
    return RunResult(
          task_id=task_id
        , method=method
        , termination=termination
        , best_params={P.WIDTH: 1.6}
        , best_total_mape=total
        , best_round=1 if total is not None else None
        , n_rounds=3
        , best_residuals={"1C": {"voltage_rmse": rmse_v, "total_mape": total}} if total is not None else {}
        , timings={"simulator_s": 1.0, "proposer_s": 0.5, "total_s": 2.0}
        , warmup_timings={"simulator_s": 0.2, "proposer_s": 0.0, "total_s": 0.25}
        , meta=meta if meta is not None else {"mode": "regular", "base": "base", "c_rate": 1.0}
    )


def _bench_task(cell, protocol, key, factor, task_id, seed=3):
    return _scaled_task(cell, protocol, {key: factor}, task_id, seed)


def _scaled_task(cell, protocol, factors, task_id, seed):
    star = cell.with_values({k: cell[k] * f for k, f in factors.items()})
    return BenchmarkTask(
          id=task_id
        , mode="regular"
        , base=cell.name
        , rule_id=task_id
        , c_rate=1.0
        , seed=seed
        , search_keys=tuple(factors)
        , theta_init=cell
        , theta_star=star
        , protocol=protocol
        , target_trace=f"targets/{task_id}.csv"
        , delta_q=0.0
        , trace=run_protocol(star, protocol)
    )


# ────────────────────────────────────────────────────────────────────────────────
# Metrics
# ────────────────────────────────────────────────────────────────────────────────

class TestMetrics:
    def test_shared_with_feedback(self):
        assert mape is feedback_metrics.mape
        assert rmse is feedback_metrics.rmse

    def test_hand_values(self):
        assert mape([1.0, 2.0], [2.0, 4.0]) == pytest.approx(50.0)
        assert rmse([1.0, 2.0], [2.0, 4.0]) == pytest.approx(math.sqrt(2.5))
        with pytest.raises(ContractError):
            rmse([1.0], [1.0, 2.0])


class TestParameterError:
    def test_identity(self):
        theta = {"a": 3.0, "b": 1e-14}
        assert parameter_error(theta, theta, ["a", "b"]).distance == 0.0

    def test_doubling(self):
        err = parameter_error({"a": 2.0}, {"a": 1.0}, ["a"])
        assert err.distance == pytest.approx(math.log(2.0))
        assert err.log_ratios["a"] == pytest.approx(0.6931, abs=1e-4)

    def test_symmetric_and_unit_invariant(self):
        hat, star = {"a": 2.0, "b": 3e-12}, {"a": 1.5, "b": 1e-12}
        keys = ["a", "b"]
        d = parameter_error(hat, star, keys).distance
        assert parameter_error(star, hat, keys).distance == pytest.approx(d)
        scaled_hat = {"a": 2000.0, "b": 3e-6}
        scaled_star = {"a": 1500.0, "b": 1e-6}
        assert parameter_error(scaled_hat, scaled_star, keys).distance == pytest.approx(d)

    def test_only_search_keys_count(self):
        assert parameter_error({"a": 1.0, "b": 9.0}, {"a": 1.0, "b": 1.0}, ["a"]).distance == 0.0

    def test_nonpositive(self):
        with pytest.raises(DomainError):
            parameter_error({"a": 0.0}, {"a": 1.0}, ["a"])
        with pytest.raises(DomainError):
            parameter_error({"a": 1.0}, {"a": -1.0}, ["a"])


class TestCorrelation:
    def test_co_monotone(self):
        c = within_case_correlation([(9.0, 1.0), (5.0, 0.7), (2.0, 0.3), (0.5, 0.05)])
        assert c.spearman == pytest.approx(1.0)
        assert c.pearson > 0.9
        assert c.monotone

    def test_anti_correlated(self):
        c = within_case_correlation([(9.0, 0.1), (5.0, 0.4), (2.0, 0.8)])
        assert c.spearman == pytest.approx(-1.0)
        assert not c.monotone

    def test_constant_sequence_is_undefined(self):
        c = within_case_correlation([(4.0, 1.0), (4.0, 0.5), (4.0, 0.2)])
        assert c.pearson is None and c.spearman is None
        assert not c.monotone

    def test_coefficients_bounded(self):
        c = within_case_correlation([(3.0, 0.2), (1.0, 0.9), (2.0, 0.4), (0.5, 0.1)])
        assert -1.0 <= c.pearson <= 1.0
        assert -1.0 <= c.spearman <= 1.0

    def test_too_few_rounds(self):
        with pytest.raises(ValueError):
            within_case_correlation([(1.0, 1.0), (0.5, 0.5)])


# ────────────────────────────────────────────────────────────────────────────────
# Held-out validation
# ────────────────────────────────────────────────────────────────────────────────

@pytest.fixture(scope="module")
def protocols():
    return held_out_protocols((0.5, 1.0), sample_interval_s=60.0)


class TestHeldOut:
    def test_truth_is_exact(self, cell, protocols):
        star = cell.with_values({P.WIDTH: 1.8})
        entries = held_out_validation(star, protocols, star)
        assert [e.voltage_mape for e in entries] == [0.0, 0.0]
        assert not any(e.failed for e in entries)

    def test_noise_is_between_truth_and_default(self, cell, protocols):
        star = cell.with_values({P.WIDTH: cell[P.WIDTH] * 1.3})
        noisy = star.with_values({P.WIDTH: star[P.WIDTH] * 1.05})
        default = held_out_validation(cell, protocols, star)
        near = held_out_validation(noisy, protocols, star)
        for d, n in zip(default, near):
            assert 0.0 < n.voltage_mape < d.voltage_mape

    @pytest.mark.parametrize("rule_id", ["E05", "E06"])
    def test_near_fit_of_extreme_rule_at_three_rates(self, cell, rule_id):
        star = apply_perturbation(cell, rule_by_id(rule_id))
        near = star.with_values({k: star[k] * 1.05 for k in KEY_PARAMETERS})
        rates = held_out_protocols((0.2, 1.0, 2.0), sample_interval_s=60.0)
        default = held_out_validation(cell, rates, star)
        fitted = held_out_validation(near, rates, star)
        assert len(fitted) == 3
        for d, n in zip(default, fitted):
            assert not d.failed and not n.failed
            assert 0.0 < n.voltage_mape < d.voltage_mape

    def test_invalid_fit_is_marked_failed(self, cell, protocols):
        bad = cell.with_values({P.WIDTH: -1.0}, validate=False)
        entries = held_out_validation(bad, protocols, cell)
        assert all(e.failed and e.voltage_mape is None for e in entries)


# ────────────────────────────────────────────────────────────────────────────────
# Suite report
# ────────────────────────────────────────────────────────────────────────────────

class TestAggregate:
    def test_single_result(self):
        report = aggregate_report([_result("t1", "bo", 2.5)])
        row = report.table.iloc[0]
        assert row["mape_mean"] == 2.5
        assert row["mape_std"] == 0.0
        assert row["n_tasks"] == 1 and row["n_failed"] == 0
        assert row["warmup_s"] == 0.25

    def test_two_methods_two_rows(self):
        results = [
              _result("t1", "bo", 2.0)
            , _result("t2", "bo", 4.0)
            , _result("t1", "llm", 1.0)
            , _result("t2", "llm", 0.5)
        ]
        table = aggregate_report(results).table
        assert list(table["method"]) == ["bo", "llm"]
        bo = table[table["method"] == "bo"].iloc[0]
        assert bo["mape_mean"] == 3.0 and bo["mape_std"] == 1.0
        assert bo["total_s"] == 4.0

    def test_failures_counted_not_averaged(self):
        results = [_result("t1", "bo", 2.0), _result("t2", "bo", None, termination=ABORTED)]
        row = aggregate_report(results).table.iloc[0]
        assert row["n_failed"] == 1
        assert row["mape_mean"] == 2.0

    def test_missing_tasks_listed(self, cell, cycle_1c):
        tasks = [_bench_task(cell, cycle_1c, P.WIDTH, 1.1, "a"), _bench_task(cell, cycle_1c, P.WIDTH, 0.9, "b")]
        manifest = BenchmarkManifest(suite_seed=1, tasks=tasks, generation_counts={}, filter_stats={})
        report = aggregate_report([_result("a", "bo", 1.0, meta={})], manifest)
        assert report.missing == ["bo: b"]
        assert report.table.iloc[0]["base"] == cell.name
        assert "bo: b" in report.to_text()

    def test_empty(self, tmp_path):
        report = evaluate_results(tmp_path)
        assert report.table.empty
        assert (tmp_path / "suite_report.csv").is_file()
        assert "(no results)" in (tmp_path / "suite_report.txt").read_text(encoding="utf-8")

    def test_regeneration_is_byte_identical(self, tmp_path):
        report = aggregate_report([_result("t1", "bo", 2.0), _result("t1", "llm", 1.0)])
        report.write(tmp_path / "a", excel=True)
        aggregate_report([_result("t1", "llm", 1.0), _result("t1", "bo", 2.0)]).write(tmp_path / "b")
        for name in ("suite_report.csv", "suite_report.txt", "tasks.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        sheet = pd.read_excel(tmp_path / "a" / "suite_report.xlsx", sheet_name="suite")
        assert list(sheet["method"]) == ["bo", "llm"]


class TestEvaluateSuite:
    def test_interpolation_run_correlates(self, cell, cycle_1c, tmp_path):
        task = _bench_task(cell, cycle_1c, P.WIDTH, 1.4, "interp")
        manifest = BenchmarkManifest(suite_seed=1, tasks=[task], generation_counts={}, filter_stats={})
        script = interpolation_script(cell.values(), task.theta_star.values(), task.search_keys, 5)
        template = RunConfig(
              proposer=ProposerConfig(kind="scripted", script=script)
            , n_warmup=0
            , n_rounds=6
            , plots=False
        )
        (result,) = batch_run(manifest, template, 1, tmp_path / "runs")
        assert result.termination == CONVERGED

        report = evaluate_results(tmp_path / "runs", manifest, out_dir=tmp_path / "report", held_out_rates=(0.5,))
        case = report.correlation.cases["scripted: interp"]
        assert case.spearman == pytest.approx(1.0)
        assert case.pearson >= 0.9
        assert case.monotone

        raw = pd.read_csv(tmp_path / "report" / "correlation.csv")
        assert list(raw.columns[:4]) == ["task", "round", "total_mape", "param_error"]
        assert list(raw["round"]) == [1, 2, 3, 4, 5, 6]
        assert raw["param_error"].iloc[-1] == 0.0

        held = pd.read_csv(tmp_path / "report" / "held_out.csv")
        assert held["voltage_mape"].iloc[0] == 0.0

    @pytest.mark.slow
    def test_interpolation_runs_on_ten_seeded_tasks(self, cell, cycle_1c, tmp_path):
        rng = np.random.default_rng(2024)
        tasks = []
        for k in range(10):
            keys = (P.WIDTH, P.HEIGHT) if k % 2 else (P.WIDTH,)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            factors = {key: math.exp(sign * rng.uniform(0.1, 0.3)) for key in keys}
            task_id = f"interp-{k:02d}"
            tasks.append(_scaled_task(cell, cycle_1c, factors, task_id, task_seed(99, task_id)))
        manifest = BenchmarkManifest(suite_seed=99, tasks=tasks, generation_counts={}, filter_stats={})

        for task in tasks:
            script = interpolation_script(cell.values(), task.theta_star.values(), task.search_keys, 5)
            cfg = RunConfig(
                  task=task_from_benchmark(task, tmp_path)
                , proposer=ProposerConfig(kind="scripted", script=script)
                , n_warmup=0
                , n_rounds=6
                , out_dir=tmp_path / "runs" / task.id
                , plots=False
            )
            calibrate(cfg)

        report = evaluate_results(tmp_path / "runs", manifest, out_dir=tmp_path / "report")
        corr = report.correlation
        assert len(corr.cases) == 10 and not corr.skipped
        for case in corr.cases.values():
            assert case.spearman == pytest.approx(1.0)
        assert corr.mean_pearson >= 0.90


# ────────────────────────────────────────────────────────────────────────────────
# Baseline efficacy
# ────────────────────────────────────────────────────────────────────────────────

@pytest.mark.slow
def test_bo_halves_default_error_on_most_regular_tasks(cell, tmp_path):
    two_parameter = [r for r in regular_combos() if len(r.touched()) == 2]
    manifest = generate_manifest(
          [cell]
        , (0.2, 1.0, 2.0)
        , (REGULAR,)
        , 10
        , seed=4242
        , rules=two_parameter
        , search_keys="touched"
        , sample_interval_s=60.0
    )
    assert len(manifest.tasks) == 10
    assert all(len(t.search_keys) == 2 for t in manifest.tasks)

    template = RunConfig(proposer=ProposerConfig(kind="bo", seed=7), n_warmup=0, n_rounds=50, plots=False)
    results = batch_run(manifest, template, 4, tmp_path)
    assert len(results) == 10

    improved = 0
    for r in results:
        rows = read_jsonl(tmp_path / r.task_id / "rounds.jsonl")
        assert rows[0]["round"] == 1
        default = rows[0]["total_mape"]
        assert default > 0.0
        if r.best_total_mape is not None and r.best_total_mape <= 0.5 * default:
            improved += 1
    assert improved >= 7
