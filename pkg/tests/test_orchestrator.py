# tests/test_orchestrator.py
# -*- coding: utf-8 -*-
"""Warm-up, optimization loop, convergence, run directories, batches and replay."""

from __future__ import annotations

import json
import threading

import pytest

from modules.bench.manifest import BenchmarkManifest, BenchmarkTask
from modules.core.errors import ConfigurationError
from modules.core.models import SimulationTrace
from modules.infra.jsonl import read_json, read_jsonl
from modules.memory.store import LEARNED, default_corpus
from modules.orchestrator.batch import batch_run, load_results
from modules.orchestrator.config import (
      ABORTED
    , BUDGET_EXHAUSTED
    , CONVERGED
    , Ablations
    , RunConfig
    , RunResult
)
from modules.orchestrator.loop import (
      calibrate
    , check_convergence
    , evaluate_theta
    , fixed_perturbation
    , new_memory
    , optimize
    , warmup_phase
)
from modules.orchestrator.replay import replay_run
from modules.orchestrator.task import (
      FIRST_CYCLE
    , CalibrationTask
    , TaskProtocol
    , load_task_file
    , synthetic_degradation_task
    , task_from_benchmark
)
from modules.proposer.baselines import interpolation_script
from modules.proposer.factory import ProposerConfig
from modules.proposer.updates import ParameterUpdate
from modules.sim import parameters as P
from modules.sim.protocol import standard_protocol
from modules.sim.solver import run_protocol


def _task(cell, protocol, *, key=P.WIDTH, factor=1.1, task_id="width-1C", seed=7):
    star = cell.with_values({key: cell[key] * factor})
    return CalibrationTask(
          id=task_id
        , kind=FIRST_CYCLE
        , theta_init=cell
        , search_keys=(key,)
        , protocols=[TaskProtocol("1C", protocol, run_protocol(star, protocol))]
        , seed=seed
        , theta_star=star.subset_values((key,))
    )


def _scripted(*updates):
    return ProposerConfig(kind="scripted", script=list(updates))


def _strip_timings(rows):
    return [{k: v for k, v in r.items() if k != "timings"} for r in rows]


@pytest.fixture(scope="module")
def width_task(cell, cycle_1c):
    return _task(cell, cycle_1c)


# ────────────────────────────────────────────────────────────────────────────────
# Convergence
# ────────────────────────────────────────────────────────────────────────────────

class TestConvergence:
    def test_strictly_improving(self):
        assert not check_convergence([20.0 - k for k in range(15)])

    def test_flat_window(self):
        assert check_convergence([5.0] * 10)
        assert not check_convergence([5.0] * 9)

    def test_floor_clause(self):
        assert check_convergence([0.005])
        assert check_convergence([3.0, None, 0.009], window=10)

    def test_small_gain_over_window(self):
        history = [10.0, 9.96, 9.95, 9.94, 9.93, 9.93, 9.92, 9.92, 9.91, 9.91]
        assert check_convergence(history, window=10, epsilon=0.1)
        assert not check_convergence(history, window=10, epsilon=0.05)

    def test_failed_rounds(self):
        assert not check_convergence([None] * 12)
        assert not check_convergence([None] * 9 + [4.0], window=10)


# ────────────────────────────────────────────────────────────────────────────────
# Configuration
# ────────────────────────────────────────────────────────────────────────────────

class TestRunConfig:
    def test_bounds(self, width_task):
        with pytest.raises(ConfigurationError):
            RunConfig(task=width_task, n_rounds=0).validate()
        with pytest.raises(ConfigurationError):
            RunConfig(task=width_task, n_warmup=-1).validate()
        RunConfig(task=width_task, n_warmup=0, n_rounds=1).validate()

    def test_ablations_and_method(self, width_task):
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="bo"), ablations=Ablations.parse(["no-memory"]))
        assert cfg.method == "bo+no_memory"
        raw = cfg.to_dict()
        assert raw["ablations"] == {"scalar_only": False, "no_memory": True, "no_knowledge": False}
        assert raw["seed"] == width_task.seed
        assert "theta_star" not in raw["task"]
        with pytest.raises(ConfigurationError):
            Ablations.parse(["no_feedback"])

    def test_from_dict(self):
        cfg = RunConfig.from_dict({"n_rounds": 5, "ablations": ["scalar_only"], "convergence": {"window": 3}})
        assert cfg.n_rounds == 5 and cfg.convergence_window == 3
        assert cfg.ablations.scalar_only

    def test_result_round_trip(self):
        r = RunResult("t", "bo", CONVERGED, best_params={"a": 1.0}, best_total_mape=0.5, best_round=2)
        assert RunResult.from_dict(r.to_dict()) == r
        with pytest.raises(ValueError):
            RunResult("t", "bo", "crashed")


# ────────────────────────────────────────────────────────────────────────────────
# Evaluation
# ────────────────────────────────────────────────────────────────────────────────

class TestEvaluate:
    def test_truth_scores_zero(self, width_task):
        star = width_task.theta_init.with_values(width_task.theta_star)
        ev = evaluate_theta(width_task, star)
        assert ev.success and ev.total_mape == 0.0

    def test_init_scores_positive(self, width_task):
        ev = evaluate_theta(width_task, width_task.theta_init)
        assert ev.success and ev.total_mape > 0.0
        assert ev.params == {P.WIDTH: width_task.theta_init[P.WIDTH]}

    def test_invalid_parameters_are_a_failed_round(self, width_task):
        bad = width_task.theta_init.with_values({P.WIDTH: -1.0}, validate=False)
        ev = evaluate_theta(width_task, bad)
        assert not ev.success
        assert ev.total_mape is None
        assert "invalid_input:1C" in ev.events


# ────────────────────────────────────────────────────────────────────────────────
# Warm-up
# ────────────────────────────────────────────────────────────────────────────────

class TestWarmup:
    def test_fixed_perturbation(self):
        keys = ("a", "b", "c")
        u = fixed_perturbation(keys, 5, 0.2, seed=3)
        assert u.keys() == ["b"]
        assert 0.8 <= u.directives["b"].value <= 1.2
        assert fixed_perturbation(keys, 5, 0.2, seed=3) == u

    def test_no_warmup(self, width_task):
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="random"), n_warmup=0)
        memory = warmup_phase(cfg)
        assert memory.warmup == []
        assert len(memory.knowledge) == len(default_corpus())

    def test_twenty_records(self, width_task):
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="random"), n_warmup=20)
        memory = warmup_phase(cfg)
        assert [r.round for r in memory.warmup] == list(range(1, 21))
        assert memory.rounds == []
        assert memory.entries(LEARNED)
        for r in memory.warmup:
            (rel,) = r.perturbation.values()
            assert -0.2 - 1e-12 <= rel <= 0.2 + 1e-12
        assert width_task.theta_init[P.WIDTH] == 1.58

    def test_all_failures_complete(self, width_task, monkeypatch):
        monkeypatch.setattr("modules.orchestrator.loop.run_protocol", lambda *a, **k: SimulationTrace.empty())
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="random"), n_warmup=20)
        memory = warmup_phase(cfg)
        assert len(memory.warmup) == 20
        assert not any(r.success for r in memory.warmup)
        learned = memory.entries(LEARNED)
        assert learned and all("simulation failure" in e.text for e in learned)

    def test_no_knowledge_ablation(self, width_task):
        cfg = RunConfig(task=width_task, n_warmup=0, ablations=Ablations(no_knowledge=True))
        assert new_memory(cfg).knowledge == []


# ────────────────────────────────────────────────────────────────────────────────
# Optimization
# ────────────────────────────────────────────────────────────────────────────────

class TestOptimize:
    def test_exact_recovery(self, width_task):
        cfg = RunConfig(
              task=width_task
            , proposer=_scripted(ParameterUpdate.absolute(width_task.theta_star))
            , n_warmup=0
            , n_rounds=5
        )
        result = optimize(cfg, new_memory(cfg))
        assert result.termination == CONVERGED
        assert result.best_total_mape == 0.0
        assert result.best_round == 2
        assert result.best_params == width_task.theta_star
        assert result.n_rounds == 2

    def test_single_round_budget(self, width_task):
        cfg = RunConfig(task=width_task, proposer=_scripted(ParameterUpdate.absolute({P.WIDTH: 2.0})), n_warmup=0, n_rounds=1)
        result = optimize(cfg, new_memory(cfg))
        assert result.termination == BUDGET_EXHAUSTED
        assert result.n_rounds == 1
        assert result.best_round == 1
        assert result.best_total_mape == result.initial_total_mape

    def test_exhausted_script_is_noop(self, width_task):
        cfg = RunConfig(
              task=width_task
            , proposer=_scripted(ParameterUpdate.absolute({P.WIDTH: 1.6}))
            , n_warmup=0
            , n_rounds=4
        )
        memory = new_memory(cfg)
        result = optimize(cfg, memory)
        assert result.n_rounds == 4
        assert result.n_noop_rounds == 2
        widths = [r.params[P.WIDTH] for r in memory.rounds]
        assert widths == [1.58, 1.6, 1.6, 1.6]
        assert "noop" in memory.rounds[1].events

    def test_foreign_key_update_rejected(self, width_task):
        cfg = RunConfig(
              task=width_task
            , proposer=_scripted(ParameterUpdate.absolute({P.HEIGHT: 0.07}))
            , n_warmup=0
            , n_rounds=2
        )
        memory = new_memory(cfg)
        optimize(cfg, memory)
        first = memory.rounds[0]
        assert first.update is None
        assert any(e.startswith("rejected_keys:") for e in first.events)
        assert memory.rounds[1].params == first.params

    def test_out_of_bounds_update_is_clamped(self, width_task):
        cfg = RunConfig(
              task=width_task
            , proposer=_scripted(ParameterUpdate.absolute({P.WIDTH: 50.0}))
            , n_warmup=0
            , n_rounds=2
        )
        memory = new_memory(cfg)
        optimize(cfg, memory)
        lo, hi = width_task.theta_init.bounds(P.WIDTH)
        assert memory.rounds[1].params[P.WIDTH] == hi
        assert any(e.startswith("clamped:") for e in memory.rounds[1].events)

    def test_stop_event_aborts(self, width_task):
        stop = threading.Event()
        stop.set()
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="bo"), n_warmup=0, n_rounds=3)
        result = optimize(cfg, new_memory(cfg), stop_event=stop)
        assert result.termination == ABORTED
        assert result.n_rounds == 0
        assert result.best_total_mape is None

    def test_timings(self, width_task):
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="random"), n_warmup=0, n_rounds=3)
        t = optimize(cfg, new_memory(cfg)).timings
        assert t["simulator_s"] + t["proposer_s"] <= t["total_s"]


# ────────────────────────────────────────────────────────────────────────────────
# Full runs
# ────────────────────────────────────────────────────────────────────────────────

class TestCalibrate:
    def test_run_directory(self, width_task, tmp_path):
        cfg = RunConfig(
              task=width_task
            , proposer=_scripted(ParameterUpdate.absolute(width_task.theta_star))
            , n_warmup=2
            , n_rounds=4
            , out_dir=tmp_path / "run"
            , ablations=Ablations(no_memory=True)
        )
        result = calibrate(cfg)
        run = tmp_path / "run"
        for name in ("run.json", "task.json", "memory.jsonl", "rounds.jsonl", "best.json", "result.json", "run.log"):
            assert (run / name).is_file(), name
        assert (run / "plots" / "round_1.svg").is_file()
        assert read_json(run / "run.json")["ablations"]["no_memory"] is True
        assert read_json(run / "best.json")["total_mape"] == 0.0
        assert RunResult.from_dict(read_json(run / "result.json")) == result
        assert result.n_warmup == 2

        report = replay_run(run)
        assert report.ok, report.mismatches

        reloaded = load_task_file(run / "task.json")
        assert reloaded.search_keys == width_task.search_keys

    def test_replay_detects_tampering(self, width_task, tmp_path):
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="random"), n_warmup=0, n_rounds=3, out_dir=tmp_path, plots=False)
        calibrate(cfg)
        best = tmp_path / "best.json"
        best.write_text(best.read_text(encoding="utf-8").replace('"round": ', '"round": 1'), encoding="utf-8")
        assert not replay_run(tmp_path).ok

    def test_bo_is_deterministic(self, width_task, tmp_path):
        logs = []
        for name in ("a", "b"):
            cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="bo"), n_warmup=0, n_rounds=4, out_dir=tmp_path / name, plots=False)
            calibrate(cfg)
            logs.append(_strip_timings(read_jsonl(tmp_path / name / "rounds.jsonl")))
        assert logs[0] == logs[1]
        assert len(logs[0]) == 4

    def test_llm_without_endpoint_fails_before_simulating(self, width_task, tmp_path, monkeypatch):
        monkeypatch.delenv("BATTERY_LLM_BASE_URL", raising=False)
        monkeypatch.delenv("BATTERY_LLM_API_KEY", raising=False)
        cfg = RunConfig(task=width_task, proposer=ProposerConfig(kind="llm"), n_warmup=1, n_rounds=2, out_dir=tmp_path)
        with pytest.raises(ConfigurationError):
            calibrate(cfg)
        assert not (tmp_path / "rounds.jsonl").exists()
        assert not (tmp_path / "memory.jsonl").exists()

    def test_llm_run_against_mock(self, width_task, tmp_path, chat_server):
        chat_server.reply(f'Try these: [{{"{P.WIDTH}": "*1.1"}}, {{"{P.WIDTH}": "*0.9"}}]')
        chat_server.reply('["wider electrodes raise capacity"]')
        chat_server.reply(f'{{"updated_params": {{"{P.WIDTH}": "*1.05"}}, "rationale": "more capacity"}}')
        chat_server.reply(f'{{"updated_params": {{"{P.WIDTH}": "*1.05"}}, "rationale": "still short"}}')
        cfg = RunConfig(
              task=width_task
            , proposer=ProposerConfig(kind="llm", llm={"base_url": chat_server.base_url, "api_key": "t", "max_retries": 0})
            , n_warmup=2
            , n_rounds=3
            , out_dir=tmp_path
        )
        result = calibrate(cfg)
        assert result.termination in (CONVERGED, BUDGET_EXHAUSTED)
        assert len(chat_server.requests) == 4
        assert len(read_jsonl(tmp_path / "exchanges.jsonl")) == 4

        rounds = read_jsonl(tmp_path / "rounds.jsonl")
        assert rounds[1]["params"][P.WIDTH] == pytest.approx(1.58 * 1.05)
        assert rounds[0]["rationale"] == "more capacity"
        memory = read_jsonl(tmp_path / "memory.jsonl")
        assert any(m.get("text") == "wider electrodes raise capacity" for m in memory)
        warm = [m for m in memory if m["type"] == "warmup"]
        assert [w["perturbation"][P.WIDTH] for w in warm] == pytest.approx([0.1, -0.1])
        assert replay_run(tmp_path).ok

    @pytest.mark.parametrize("n_warmup, n_rounds", [(0, 1), (2, 3), (20, 20)])
    def test_loop_length(self, width_task, tmp_path, n_warmup, n_rounds):
        cfg = RunConfig(
              task=width_task
            , proposer=ProposerConfig(kind="random", seed=3)
            , n_warmup=n_warmup
            , n_rounds=n_rounds
            , convergence_window=n_rounds + 1
            , convergence_floor=0.0
            , out_dir=tmp_path
            , plots=False
        )
        result = calibrate(cfg)
        assert result.termination == BUDGET_EXHAUSTED
        assert (result.n_warmup, result.n_rounds) == (n_warmup, n_rounds)
        assert [r["round"] for r in read_jsonl(tmp_path / "rounds.jsonl")] == list(range(1, n_rounds + 1))
        memory = read_jsonl(tmp_path / "memory.jsonl")
        assert len([m for m in memory if m["type"] == "warmup"]) == n_warmup

    @pytest.mark.slow
    def test_full_length_llm_run_against_mock(self, width_task, tmp_path, chat_server):
        n_warmup, n_rounds = 20, 20
        factors = [1.0 + 0.01 * (k % 5 + 1) * (1 if k % 2 else -1) for k in range(n_warmup)]
        chat_server.reply(json.dumps([{P.WIDTH: f"*{f:g}"} for f in factors]))
        chat_server.reply('["wider electrodes raise capacity"]')
        for k in range(n_rounds - 1):
            chat_server.reply(json.dumps({"updated_params": {P.WIDTH: "*1.003"}, "rationale": f"step {k + 1}"}))
        cfg = RunConfig(
              task=width_task
            , proposer=ProposerConfig(kind="llm", llm={"base_url": chat_server.base_url, "api_key": "t", "max_retries": 0})
            , n_warmup=n_warmup
            , n_rounds=n_rounds
            , convergence_window=n_rounds + 1
            , convergence_floor=0.0
            , out_dir=tmp_path
            , plots=False
        )
        result = calibrate(cfg)
        assert result.termination == BUDGET_EXHAUSTED
        assert len(chat_server.requests) == 2 + (n_rounds - 1)
        assert chat_server.pending == 0

        memory = read_jsonl(tmp_path / "memory.jsonl")
        warm = [m for m in memory if m["type"] == "warmup"]
        assert [w["perturbation"][P.WIDTH] for w in warm] == pytest.approx([f - 1.0 for f in factors])
        rounds = read_jsonl(tmp_path / "rounds.jsonl")
        assert len(rounds) == n_rounds
        assert rounds[-2]["rationale"] == f"step {n_rounds - 1}"
        assert rounds[-1]["rationale"] == ""
        report = replay_run(tmp_path)
        assert report.ok, report.mismatches


class TestDegradation:
    def test_scripted_recovery_of_two_sei_parameters(self, cell, sei_params, cycle_1c):
        keys = (P.SEI_RATE, P.SEI_SOLVENT_DIFFUSIVITY)
        star = {P.SEI_RATE: sei_params[P.SEI_RATE] * 3.0, P.SEI_SOLVENT_DIFFUSIVITY: sei_params[P.SEI_SOLVENT_DIFFUSIVITY] * 2.0}
        task = synthetic_degradation_task(
              "sei-2"
            , sei_params
            , star
            , cycle_1c
            , 3
            , search_keys=keys
            , cell=cell
            , cycle_subset_k=3
        )
        cfg = RunConfig(task=task, proposer=_scripted(ParameterUpdate.absolute(star)), n_warmup=0, n_rounds=3)
        memory = new_memory(cfg)
        result = optimize(cfg, memory)
        assert result.termination == CONVERGED
        assert result.best_total_mape == 0.0
        assert result.best_params == pytest.approx(star)
        assert memory.rounds[0].total_mape > 0.0

    @pytest.mark.slow
    def test_two_sei_parameters_over_two_hundred_cycles(self, cell, sei_params):
        keys = (P.SEI_RATE, P.SEI_SOLVENT_DIFFUSIVITY)
        star = {P.SEI_RATE: sei_params[P.SEI_RATE] * 2.0, P.SEI_SOLVENT_DIFFUSIVITY: sei_params[P.SEI_SOLVENT_DIFFUSIVITY] * 0.5}
        cycle = standard_protocol(1.0, sample_interval_s=120.0)
        task = synthetic_degradation_task("sei-200", sei_params, star, cycle, 200, search_keys=keys, cell=cell)
        script = interpolation_script(sei_params.values(), star, keys, 3)
        cfg = RunConfig(task=task, proposer=_scripted(*script), n_warmup=0, n_rounds=4)
        memory = new_memory(cfg)
        result = optimize(cfg, memory)
        assert len(task.protocols[0].target) == 200
        assert memory.rounds[0].total_mape > result.best_total_mape
        assert result.best_total_mape < 2.0
        assert result.best_params == pytest.approx(star)

    def test_unknown_search_key_rejected_before_ground_truth_run(self, cell, sei_params, cycle_1c):
        with pytest.raises(ConfigurationError, match="No such parameter"):
            synthetic_degradation_task(
                  "sei-bad"
                , sei_params
                , {P.SEI_RATE: sei_params[P.SEI_RATE] * 2.0}
                , cycle_1c
                , 2
                , search_keys=("No such parameter",)
                , cell=cell
            )


# ────────────────────────────────────────────────────────────────────────────────
# Batches
# ────────────────────────────────────────────────────────────────────────────────

def _bench_task(cell, protocol, key, factor, task_id, seed=11):
    star = cell.with_values({key: cell[key] * factor})
    return BenchmarkTask(
          id=task_id
        , mode="regular"
        , base=cell.name
        , rule_id=task_id
        , c_rate=1.0
        , seed=seed
        , search_keys=(key,)
        , theta_init=cell
        , theta_star=star
        , protocol=protocol
        , target_trace=f"targets/{task_id}.csv"
        , delta_q=0.0
        , trace=run_protocol(star, protocol)
    )


@pytest.fixture(scope="module")
def small_manifest(cell, cycle_1c):
    tasks = [
          _bench_task(cell, cycle_1c, P.WIDTH, 1.1, "width", seed=11)
        , _bench_task(cell, cycle_1c, P.HEIGHT, 0.9, "height", seed=12)
    ]
    return BenchmarkManifest(suite_seed=5, tasks=tasks, generation_counts={}, filter_stats={})


class TestBatch:
    def _template(self):
        return RunConfig(proposer=ProposerConfig(kind="bo"), n_warmup=0, n_rounds=3, plots=False)

    def test_empty_manifest(self, tmp_path):
        empty = BenchmarkManifest(suite_seed=1, tasks=[], generation_counts={}, filter_stats={})
        assert batch_run(empty, self._template(), 2, tmp_path) == []

    def test_parallelism_does_not_change_results(self, small_manifest, tmp_path):
        serial = batch_run(small_manifest, self._template(), 1, tmp_path / "p1")
        pooled = batch_run(small_manifest, self._template(), 4, tmp_path / "p4")
        assert [r.task_id for r in serial] == ["width", "height"]
        for a, b in zip(serial, pooled):
            assert (a.best_params, a.best_total_mape, a.termination) == (b.best_params, b.best_total_mape, b.termination)
            rows_a = _strip_timings(read_jsonl(tmp_path / "p1" / a.task_id / "rounds.jsonl"))
            rows_b = _strip_timings(read_jsonl(tmp_path / "p4" / b.task_id / "rounds.jsonl"))
            assert rows_a == rows_b

    def test_resume_reruns_only_missing(self, small_manifest, tmp_path, monkeypatch):
        batch_run(small_manifest, self._template(), 1, tmp_path)
        (tmp_path / "height" / "result.json").unlink()

        import modules.orchestrator.batch as batch_mod

        ran = []
        real = batch_mod.calibrate

        def counting(cfg, **kw):
            ran.append(cfg.task.id)
            return real(cfg, **kw)

        monkeypatch.setattr(batch_mod, "calibrate", counting)
        results = batch_run(small_manifest, self._template(), 2, tmp_path)
        assert ran == ["height"]
        assert [r.task_id for r in results] == ["width", "height"]
        assert len(load_results(tmp_path)) == 2

    def test_task_abort_is_recorded(self, small_manifest, tmp_path, cell, cycle_1c):
        broken = _bench_task(cell, cycle_1c, P.WIDTH, 1.1, "broken")
        broken.search_keys = ("No such parameter",)
        manifest = BenchmarkManifest(suite_seed=5, tasks=[broken, small_manifest.tasks[0]], generation_counts={}, filter_stats={})
        results = batch_run(manifest, self._template(), 1, tmp_path)
        assert results[0].termination == ABORTED and "ConfigurationError" in results[0].error
        assert results[1].termination != ABORTED
        assert (tmp_path / "broken" / "result.json").is_file()

    def test_unknown_search_key_is_configuration_error(self, cell, cycle_1c, tmp_path):
        broken = _bench_task(cell, cycle_1c, P.WIDTH, 1.1, "broken")
        broken.search_keys = (P.WIDTH, "No such parameter")
        with pytest.raises(ConfigurationError, match="No such parameter"):
            task_from_benchmark(broken, tmp_path)

    def test_bad_parallelism(self, small_manifest, tmp_path):
        with pytest.raises(ValueError):
            batch_run(small_manifest, self._template(), 0, tmp_path)
