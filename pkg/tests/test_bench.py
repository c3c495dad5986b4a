# tests/test_bench.py
# -*- coding: utf-8 -*-
"""Perturbation rules, stability/sensitivity filters and manifest generation."""

from __future__ import annotations

import pytest

from modules.bench.filters import capacity_change, screen_candidate, sensitivity_filter, stability_filter
from modules.bench.manifest import (
      BenchmarkManifest
    , generate_manifest
    , load_manifest
    , task_seed
    , write_manifest
)
from modules.bench.perturbations import (
      ADD
    , EXTREME
    , KEY_PARAMETERS
    , MULTIPLY
    , REGULAR
    , Override
    , PerturbationRule
    , apply_perturbation
    , extreme_rules
    , regular_combos
    , rule_by_id
)
from modules.core.errors import ParameterValidationError
from modules.infra.jsonl import read_json
from modules.sim import parameters as P
from modules.sim.protocol import capacity_check_protocol, standard_protocol
from modules.sim.solver import run_protocol


@pytest.fixture(scope="module")
def discharge_02c():
    return capacity_check_protocol(0.2, sample_interval_s=60.0)


# ────────────────────────────────────────────────────────────────────────────────
# Rules
# ────────────────────────────────────────────────────────────────────────────────

class TestRules:
    def test_extreme_table_size_and_shape(self):
        rules = extreme_rules()
        assert len(rules) == 20
        assert len({r.id for r in rules}) == 20
        assert all(len(r.touched()) == 1 for r in rules)
        assert {r.touched()[0] for r in rules} == set(KEY_PARAMETERS)

    def test_negative_radius_factors(self):
        radius = [r for r in extreme_rules() if r.touched() == [P.NEG_RADIUS]]
        assert [(o.op, o.value) for r in radius for o in r.overrides] == [(MULTIPLY, 0.5), (MULTIPLY, 2.0)]

    def test_bruggeman_sets(self):
        neg = sorted(o.value for r in extreme_rules() for o in r.overrides if o.name == P.NEG_BRUGGEMAN)
        pos = sorted(o.value for r in extreme_rules() for o in r.overrides if o.name == P.POS_BRUGGEMAN)
        assert neg == [1.5, 2.0, 2.5]
        assert pos == [1.3, 1.8, 2.3]

    def test_regular_combos(self):
        combos = regular_combos()
        assert len(combos) == 12
        assert all(len(r.touched()) >= 2 for r in combos)

        four = {o.name: (o.op, o.value) for o in combos[3].overrides}
        assert four == {P.NEG_RADIUS: (MULTIPLY, 1.5), P.POS_RADIUS: (MULTIPLY, 1.5)}

        seven = {o.name: (o.op, o.value) for o in combos[6].overrides}
        assert seven[P.NEG_POROSITY] == (ADD, 0.06)
        assert seven[P.POS_POROSITY] == (ADD, 0.06)
        assert seven[P.NEG_BRUGGEMAN][1] == 1.5
        assert seven[P.POS_BRUGGEMAN][1] == 1.5

        twelve = {o.name: (o.op, o.value) for o in combos[11].overrides}
        assert twelve == {
              P.SEP_THICKNESS: (MULTIPLY, 1.5)
            , P.NEG_POROSITY: (ADD, -0.04)
            , P.POS_POROSITY: (ADD, -0.04)
        }

    def test_mode_arity_enforced(self):
        with pytest.raises(ValueError):
            PerturbationRule("X", EXTREME, "two keys", (Override(P.WIDTH, MULTIPLY, 2.0), Override(P.HEIGHT, MULTIPLY, 2.0)))
        with pytest.raises(ValueError):
            PerturbationRule("Y", REGULAR, "one key", (Override(P.WIDTH, MULTIPLY, 2.0),))

    def test_rule_dict_round_trip(self):
        rule = rule_by_id("R03")
        assert PerturbationRule.from_dict(rule.to_dict()) == rule
        with pytest.raises(KeyError):
            rule_by_id("Z99")


class TestApplyPerturbation:
    def test_identity(self, cell):
        assert apply_perturbation(cell, PerturbationRule("I", EXTREME, "identity")) == cell

    def test_multiply_radius(self, cell):
        base = cell.with_values({P.NEG_RADIUS: 5e-6})
        out = apply_perturbation(base, PerturbationRule("E", EXTREME, "", (Override(P.NEG_RADIUS, MULTIPLY, 2.0),)))
        assert out[P.NEG_RADIUS] == pytest.approx(1e-5, rel=1e-15)
        changed = [k for k in cell.keys() if out[k] != base[k]]
        assert changed == [P.NEG_RADIUS]

    def test_porosity_below_zero_is_invalid(self, cell):
        base = cell.with_values({P.NEG_POROSITY: 0.04}, validate=False)
        rule = PerturbationRule("E", EXTREME, "", (Override(P.NEG_POROSITY, ADD, -0.05),))
        with pytest.raises(ParameterValidationError):
            apply_perturbation(base, rule)

    def test_unknown_parameter(self, cell):
        rule = PerturbationRule("E", EXTREME, "", (Override("Cathode colour", MULTIPLY, 2.0),))
        with pytest.raises(ParameterValidationError):
            apply_perturbation(cell, rule)

    def test_every_table_rule_valid_on_default_cell(self, cell):
        for rule in extreme_rules() + regular_combos():
            assert apply_perturbation(cell, rule).is_valid()


# ────────────────────────────────────────────────────────────────────────────────
# Filters
# ────────────────────────────────────────────────────────────────────────────────

class TestFilters:
    def test_default_cell_is_stable(self, cell, discharge_02c):
        assert stability_filter(cell, discharge_02c)

    def test_initial_above_maximum_is_unstable(self, cell, discharge_02c):
        bad = cell.with_values({P.NEG_C0: cell[P.NEG_CMAX] * 1.1}, validate=False)
        assert not stability_filter(bad, discharge_02c)

    def test_negative_thickness_is_unstable(self, cell, discharge_02c):
        bad = cell.with_values({P.NEG_THICKNESS: -1e-5}, validate=False)
        assert not stability_filter(bad, discharge_02c)

    def test_identity_rejected_by_sensitivity(self, cell, discharge_02c):
        assert not sensitivity_filter(cell, cell, discharge_02c)

    def test_wider_electrode_passes(self, cell, discharge_02c):
        wide = cell.with_values({P.WIDTH: cell[P.WIDTH] * 1.5})
        assert sensitivity_filter(cell, wide, discharge_02c)

    def test_sub_percent_change_rejected(self, cell, discharge_02c):
        slightly = cell.with_values({P.WIDTH: cell[P.WIDTH] * 1.004})
        q0 = run_protocol(cell, discharge_02c).discharge_capacity()
        q1 = run_protocol(slightly, discharge_02c).discharge_capacity()
        assert 0.0 < capacity_change(q0, q1) < 0.01
        assert not sensitivity_filter(cell, slightly, discharge_02c)

    def test_screen_reasons(self, cell, discharge_02c):
        q0 = run_protocol(cell, discharge_02c).discharge_capacity()
        same = screen_candidate(q0, cell, discharge_02c)
        assert not same.accepted
        assert same.stage == "sensitivity"
        assert "< 1%" in same.reason

        bad = cell.with_values({P.NEG_POROSITY: 0.0}, validate=False)
        invalid = screen_candidate(q0, bad, discharge_02c)
        assert invalid.stage == "stability"
        assert invalid.reason.startswith("invalid:")

        wide = screen_candidate(q0, cell.with_values({P.WIDTH: 2.0}), discharge_02c)
        assert wide.accepted
        assert wide.trace is not None
        assert wide.delta_q >= 0.01


# ────────────────────────────────────────────────────────────────────────────────
# Manifest
# ────────────────────────────────────────────────────────────────────────────────

_FAST = dict(sample_interval_s=60.0)


@pytest.fixture(scope="module")
def small_manifest(cell):
    return generate_manifest([cell], (1.0,), (EXTREME,), 5, seed=11, **_FAST)


class TestManifest:
    def test_counts_and_reasons(self, small_manifest):
        m = small_manifest
        counts = m.generation_counts[EXTREME]
        assert counts["candidates"] == 20
        assert 0 < counts["selected"] <= 5
        assert len(m.tasks) == counts["selected"]
        stats = m.filter_stats
        assert stats["candidates"] == 20
        assert stats["accepted"] + stats["stability_rejections"] + stats["sensitivity_rejections"] == 20
        assert len(stats["rejected"]) == stats["stability_rejections"] + stats["sensitivity_rejections"]
        assert all(r["reason"] for r in stats["rejected"])

    def test_tasks_are_sound(self, small_manifest):
        for t in small_manifest.tasks:
            assert t.id == f"extreme-{t.base}-1C-{t.rule_id}"
            assert t.theta_star == apply_perturbation(t.theta_init, rule_by_id(t.rule_id))
            trace = run_protocol(t.theta_star, t.protocol)
            q0 = run_protocol(t.theta_init, t.protocol).discharge_capacity()
            assert trace.is_success
            assert capacity_change(q0, trace.discharge_capacity()) >= 0.01
            assert t.seed == task_seed(11, t.id)
            assert t.search_keys == KEY_PARAMETERS

    def test_same_seed_byte_identical(self, cell, small_manifest, tmp_path):
        again = generate_manifest([cell], (1.0,), (EXTREME,), 5, seed=11, **_FAST)
        a = write_manifest(small_manifest, tmp_path / "a")
        b = write_manifest(again, tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        for t in small_manifest.tasks:
            assert (tmp_path / "a" / t.target_trace).read_bytes() == (tmp_path / "b" / t.target_trace).read_bytes()

    def test_shortfall(self, cell):
        m = generate_manifest([cell], (1.0,), (EXTREME,), 1000, seed=3, **_FAST)
        assert m.shortfall
        assert m.to_dict()["shortfall"] is True
        counts = m.generation_counts[EXTREME]
        assert counts["selected"] == counts["valid"] == len(m.tasks)

    def test_identity_rule_rejected(self, cell):
        identity = PerturbationRule("E00", EXTREME, "identity")
        m = generate_manifest([cell], (1.0,), (EXTREME,), 1, seed=3, rules=[identity], **_FAST)
        assert m.tasks == []
        assert m.filter_stats["sensitivity_rejections"] == 1
        assert m.shortfall

    def test_extreme_rule_equal_to_base_is_rejected_at_every_rate(self, cell):
        # E13 sets the negative Bruggeman coefficient to the default cell's own value
        rule = rule_by_id("E13")
        assert rule.touched() == [P.NEG_BRUGGEMAN]
        assert apply_perturbation(cell, rule).values() == cell.values()
        m = generate_manifest([cell], (0.2, 1.0, 2.0), (EXTREME,), 1, seed=3, rules=[rule], **_FAST)
        assert m.tasks == []
        assert m.filter_stats["candidates"] == 3
        assert m.filter_stats["sensitivity_rejections"] == 3

    def test_n_per_mode_must_be_positive(self, cell):
        with pytest.raises(ValueError):
            generate_manifest([cell], (1.0,), (EXTREME,), 0, seed=1)

    def test_touched_search_keys(self, cell):
        rules = [rule_by_id("R04")]
        m = generate_manifest([cell], (1.0,), (REGULAR,), 1, seed=5, rules=rules, search_keys="touched", **_FAST)
        assert [t.search_keys for t in m.tasks] == [(P.NEG_RADIUS, P.POS_RADIUS)]

    def test_selection_stable_when_bases_added(self, cell, small_manifest):
        other = cell.with_values({P.WIDTH: 1.2})
        other = type(other)(entries=other.entries, name="narrow_cell", constants=other.constants)
        bigger = generate_manifest([cell, other], (1.0,), (EXTREME,), 1000, seed=11, **_FAST)
        selected = {t.id for t in bigger.tasks}
        # every task of the small suite is still valid in the bigger pool
        assert {t.id for t in small_manifest.tasks} <= selected

    def test_write_and_load_round_trip(self, small_manifest, tmp_path):
        write_manifest(small_manifest, tmp_path)
        loaded = load_manifest(tmp_path)
        assert isinstance(loaded, BenchmarkManifest)
        assert loaded.to_dict() == small_manifest.to_dict()
        t = loaded.tasks[0]
        target = t.load_target(tmp_path)
        assert target.n_samples == small_manifest.tasks[0].trace.n_samples

    def test_task_files_hide_ground_truth(self, small_manifest, tmp_path):
        write_manifest(small_manifest, tmp_path)
        for t in small_manifest.tasks:
            raw = read_json(tmp_path / "tasks" / f"{t.id}.json")
            text = (tmp_path / "tasks" / f"{t.id}.json").read_text(encoding="utf-8")
            assert "theta_star" not in text
            assert "eval_only" not in raw
            assert raw["theta_init"]["name"] == t.base
            assert raw["protocols"][0]["target_trace"] == f"../{t.target_trace}"

    def test_standard_protocol_used(self, small_manifest):
        assert all(t.protocol == standard_protocol(1.0, **_FAST) for t in small_manifest.tasks)
