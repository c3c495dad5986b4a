# tests/test_proposer.py
# -*- coding: utf-8 -*-
"""Update parsing/projection, the chat client against a local mock, and the baseline proposers."""

from __future__ import annotations

import math

import numpy as np
import pytest

from modules.core.errors import (
      ConfigurationError
    , ParameterValidationError
    , ParseError
    , ProposerError
    , RejectedKeyError
)
from modules.infra.jsonl import read_jsonl
from modules.proposer.base import ProposalRequest, SearchSpace
from modules.proposer.baselines import (
      BOProposer
    , bo_propose
    , interpolation_script
    , load_replay
    , random_propose
    , scripted_propose
    , sobol_point
    , sobol_propose
    , write_replay
)
from modules.proposer.factory import ProposerConfig, make_proposer
from modules.proposer.llm import LLMProposer, llm_propose, parse_update_groups
from modules.proposer.llm_client import ChatClient
from modules.proposer.llm_common import LLMConfig
from modules.proposer.prompts import REPROMPT
from modules.proposer.updates import (
      ABSOLUTE
    , MULTIPLICATIVE
    , ParameterUpdate
    , StepSizeSchedule
    , apply_update
    , parse_update
)
from modules.sim import parameters as P

VALID = '{"updated_params": {"Electrode width [m]": "*1.2"}, "rationale": "more capacity"}'


# ────────────────────────────────────────────────────────────────────────────────
# Parsing
# ────────────────────────────────────────────────────────────────────────────────

class TestParseUpdate:
    def test_multiplicative_directive_after_prose(self):
        u = parse_update("The capacity is low, so widen the electrode. " + VALID, [P.WIDTH])
        d = u.directives[P.WIDTH]
        assert d.kind == MULTIPLICATIVE
        assert d.value == pytest.approx(1.2)
        assert u.rationale == "more capacity"

    def test_bare_object_is_absolute(self):
        u = parse_update('{"Negative electrode porosity": 0.35}', [P.NEG_POROSITY])
        assert u.directives[P.NEG_POROSITY].kind == ABSOLUTE
        assert u.directives[P.NEG_POROSITY].value == 0.35

    def test_last_object_wins(self):
        text = '{"Electrode width [m]": 1.0} on second thought {"Electrode width [m]": 1.7}'
        assert parse_update(text).directives[P.WIDTH].value == 1.7

    def test_prose_only_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_update("I would increase the electrode width a little.")

    def test_rejected_keys_are_named(self):
        with pytest.raises(RejectedKeyError) as ei:
            parse_update('{"updated_params": {"Electrode width [m]": 1.6, "Electrode height [m]": 0.07}}', [P.WIDTH])
        assert P.HEIGHT in str(ei.value)

    def test_nonpositive_factor_rejected(self):
        with pytest.raises(ParameterValidationError):
            parse_update('{"Electrode width [m]": "*0"}')
        with pytest.raises(ParameterValidationError):
            parse_update('{"updated_params": {"Electrode width [m]": "* -2"}}')
        with pytest.raises(ParseError):
            parse_update('{"Electrode width [m]": "*two"}')

    def test_unreadable_directive(self):
        with pytest.raises(ParseError):
            parse_update('{"Electrode width [m]": "wider"}')
        with pytest.raises(ParseError):
            parse_update('{"Electrode width [m]": true}')

    def test_serialize_parses_back(self):
        u = parse_update(VALID)
        again = parse_update(u.serialize())
        assert again == u

    def test_groups_skip_bad_entries(self):
        text = 'Here: [{"Electrode width [m]": "*1.1"}, {"Electrode height [m]": 2}, {"Electrode width [m]": 1.4}]'
        groups = parse_update_groups(text, [P.WIDTH])
        assert [g.directives[P.WIDTH].value for g in groups] == [1.1, 1.4]
        with pytest.raises(ParseError):
            parse_update_groups("no list here", [P.WIDTH])


# ────────────────────────────────────────────────────────────────────────────────
# Application
# ────────────────────────────────────────────────────────────────────────────────

class TestApplyUpdate:
    def test_full_step_is_exact(self, cell):
        out = apply_update(cell, ParameterUpdate.absolute({P.WIDTH: 1.6}), 1.0)
        assert out[P.WIDTH] == 1.6
        assert out[P.HEIGHT] == cell[P.HEIGHT]

    def test_identity_update(self, cell):
        out = apply_update(cell, ParameterUpdate.absolute({P.WIDTH: cell[P.WIDTH]}))
        assert out.values() == cell.values()

    def test_damped_step(self, cell):
        out = apply_update(cell, ParameterUpdate.absolute({P.WIDTH: cell[P.WIDTH] + 2.0}), 0.5)
        assert out[P.WIDTH] == pytest.approx(cell[P.WIDTH] + 1.0)

    def test_clamped_to_upper_bound(self, cell):
        theta = cell.with_entry(P.WIDTH, upper=2.0 * cell[P.WIDTH])
        events = []
        out = apply_update(theta, parse_update('{"Electrode width [m]": "*10"}'), 1.0, events=events)
        assert out[P.WIDTH] == pytest.approx(2.0 * cell[P.WIDTH])
        assert f"clamped:{P.WIDTH}" in events

    def test_projection_keeps_concentration_ordering(self, cell):
        events = []
        out = apply_update(cell, ParameterUpdate.absolute({P.NEG_CMAX: 25000.0}), 1.0, events=events)
        assert f"projected:{P.NEG_CMAX}" in events
        assert out.is_valid()
        assert out[P.NEG_CMAX] > out[P.NEG_C0]
        assert out[P.NEG_CMAX] == pytest.approx(cell[P.NEG_C0], rel=1e-6)

    def test_unknown_key_and_bad_eta(self, cell):
        with pytest.raises(RejectedKeyError):
            apply_update(cell, ParameterUpdate.absolute({"Not a parameter": 1.0}))
        with pytest.raises(ValueError):
            apply_update(cell, ParameterUpdate.absolute({P.WIDTH: 1.6}), 0.0)
        with pytest.raises(ValueError):
            apply_update(cell, ParameterUpdate.absolute({P.WIDTH: 1.6}), 1.5)


class TestStepSizeSchedule:
    def test_failure_halves_until_floor(self):
        s = StepSizeSchedule()
        assert s.eta == 1.0
        for expected in (0.5, 0.25, 0.125, 0.125):
            assert s.observe(None, False) == expected

    def test_large_worsening_halves(self):
        s = StepSizeSchedule()
        s.observe(10.0, True)
        assert s.observe(16.0, True) == 0.5
        assert s.observe(15.0, True) == 0.5  # within tolerance, no streak yet

    def test_two_improvements_double(self):
        s = StepSizeSchedule()
        s.observe(None, False)
        s.observe(10.0, True)
        s.observe(9.0, True)
        assert s.eta == 0.5
        assert s.observe(8.0, True) == 1.0
        assert s.observe(7.0, True) == 1.0


# ────────────────────────────────────────────────────────────────────────────────
# Chat endpoint
# ────────────────────────────────────────────────────────────────────────────────

class TestLLMConfig:
    def test_missing_endpoint(self):
        with pytest.raises(ConfigurationError, match=r"export BATTERY_LLM_BASE_URL or pass --base-url$"):
            LLMConfig(environ={})

    def test_environment_and_token_privacy(self):
        cfg = LLMConfig(environ={"BATTERY_LLM_BASE_URL": "http://example.invalid/", "BATTERY_LLM_API_KEY": "s3cret"})
        assert cfg.url == "http://example.invalid/v1/chat/completions"
        assert cfg.temperature is None
        assert "s3cret" not in str(cfg.to_dict())

    def test_bad_limits(self):
        with pytest.raises(ConfigurationError):
            LLMConfig("http://x", max_in_flight=0, environ={})


class TestLLMPropose:
    def test_valid_reply(self, chat_server, chat_client, tmp_path):
        chat_server.reply("Reasoning first.\n" + VALID)
        audit = tmp_path / "exchanges.jsonl"
        update, ex = llm_propose(chat_client, "prompt", search_keys=[P.WIDTH], round_index=1, audit_path=audit)

        assert update is not None and update.directives[P.WIDTH].value == pytest.approx(1.2)
        assert ex.n_turns == 1
        assert chat_server.headers[0].get("Authorization") == "Bearer test-token"
        sent = chat_server.requests[0]["messages"]
        assert sent[0]["role"] == "system" and sent[1] == {"role": "user", "content": "prompt"}

        records = read_jsonl(audit)
        assert len(records) == 1
        assert records[0]["purpose"] == "propose" and records[0]["round"] == 1
        assert records[0]["response"].endswith(VALID)

    def test_malformed_then_valid(self, chat_server, chat_client):
        chat_server.reply("Increase the width.")
        chat_server.reply(VALID)
        update, ex = llm_propose(chat_client, "prompt", search_keys=[P.WIDTH])

        assert update is not None
        assert ex.n_turns == 2
        assert len(chat_server.requests) == 2
        follow = chat_server.requests[1]["messages"][-1]
        assert follow["role"] == "user" and follow["content"].startswith(REPROMPT)

    def test_zero_factor_is_reprompted(self, chat_server, chat_client):
        chat_server.reply('{"Electrode width [m]": "*0"}')
        chat_server.reply(VALID)
        update, ex = llm_propose(chat_client, "prompt", search_keys=[P.WIDTH])
        assert update is not None and update.directives[P.WIDTH].value == 1.2
        assert "must be > 0" in chat_server.requests[1]["messages"][-1]["content"]
        assert chat_server.pending == 0

    def test_two_bad_replies_give_noop(self, chat_server, chat_client, tmp_path):
        chat_server.reply("no json")
        chat_server.reply('{"Electrode height [m]": 0.1}')
        update, ex = llm_propose(chat_client, "prompt", search_keys=[P.WIDTH], audit_path=tmp_path / "ex.jsonl")
        assert update is None
        assert ex.error and "RejectedKeyError" in ex.error
        assert read_jsonl(tmp_path / "ex.jsonl")[0]["error"] == ex.error

    def test_timeouts_exhaust_retries(self, chat_server, tmp_path):
        cfg = LLMConfig(chat_server.base_url, read_timeout_s=0.2, connect_timeout_s=1.0, max_retries=2, backoff_s=0.01, environ={})
        for _ in range(3):
            chat_server.reply(VALID, delay_s=0.5)
        audit = tmp_path / "exchanges.jsonl"
        with ChatClient(cfg) as client:
            with pytest.raises(ProposerError):
                llm_propose(client, "prompt", search_keys=[P.WIDTH], audit_path=audit)
        assert len(chat_server.requests) == 3
        rec = read_jsonl(audit)[0]
        assert rec["attempts"] == 3 and rec["error"].startswith("ProposerError")

    def test_status_retry_then_success(self, chat_server, chat_client):
        chat_server.reply_raw("busy", status=503)
        chat_server.reply(VALID)
        update, ex = llm_propose(chat_client, "prompt", search_keys=[P.WIDTH])
        assert update is not None
        assert len(chat_server.requests) == 2

    def test_malformed_body(self, chat_server, chat_client):
        chat_server.reply_raw("<html>gateway</html>")
        with pytest.raises(ProposerError):
            llm_propose(chat_client, "prompt", search_keys=[P.WIDTH])

    def test_image_attached_only_when_supported(self, chat_server, tmp_path):
        svg = tmp_path / "round_1.svg"
        svg.write_text("<svg xmlns='http://www.w3.org/2000/svg'/>", encoding="utf-8")
        chat_server.reply(VALID)
        chat_server.reply(VALID)
        cfg = LLMConfig(chat_server.base_url, supports_images=True, environ={})
        with ChatClient(cfg) as client:
            llm_propose(client, "look", search_keys=[P.WIDTH], image=svg)
        plain = LLMConfig(chat_server.base_url, environ={})
        with ChatClient(plain) as client:
            llm_propose(client, "look", search_keys=[P.WIDTH], image=svg)

        with_image = chat_server.requests[0]["messages"][1]["content"]
        assert isinstance(with_image, list)
        assert with_image[1]["type"] == "image_url"
        assert with_image[1]["image_url"]["url"].startswith("data:image/svg+xml;base64,")
        assert chat_server.requests[1]["messages"][1]["content"] == "look"


class TestLLMProposer:
    def test_first_and_later_round_prompts(self, chat_server, chat_client, cell, cycle_1c):
        chat_server.reply(VALID)
        chat_server.reply(VALID)
        prop = LLMProposer(chat_client, protocols=[cycle_1c])
        keys = (P.WIDTH,)

        r1 = prop.propose(ProposalRequest(1, cell, keys, context="KNOWLEDGE: wider electrodes hold more charge"))
        r2 = prop.propose(ProposalRequest(2, cell, keys))
        assert not r1.is_noop and not r2.is_noop

        first = chat_server.requests[0]["messages"][1]["content"]
        later = chat_server.requests[1]["messages"][1]["content"]
        assert "Cycling protocol" in first and "KNOWLEDGE" in first
        assert "Cycling protocol" not in later
        assert P.WIDTH in later

    def test_warmup_batch(self, chat_server, chat_client, cell):
        chat_server.reply('[{"Electrode width [m]": "*1.1"}, {"Electrode width [m]": "*0.9"}, {"Electrode width [m]": 1.2}]')
        chat_server.reply("sorry")
        prop = LLMProposer(chat_client)
        groups = prop.warmup_batch(cell, [P.WIDTH], 2)
        assert len(groups) == 2
        assert prop.warmup_batch(cell, [P.WIDTH], 2) is None

    def test_summarizer(self, chat_server, chat_client):
        chat_server.reply('["Wider electrodes raise capacity.", "  ", 3]')
        rules = LLMProposer(chat_client).summarizer().summarize([{"perturbation": {P.WIDTH: 1.1}}])
        assert rules == ["Wider electrodes raise capacity."]


# ────────────────────────────────────────────────────────────────────────────────
# Baselines
# ────────────────────────────────────────────────────────────────────────────────

def _unit_space(*names):
    n = len(names)
    return SearchSpace(tuple(names), (0.0,) * n, (1.0,) * n, (False,) * n)


class TestSearchSpace:
    def test_log_scaling(self, cell):
        sp = SearchSpace.from_parameters(cell, [P.WIDTH, P.NEG_RADIUS])
        assert sp.log == (True, True)
        back = sp.from_unit(sp.to_unit(cell.values()))
        assert back[P.WIDTH] == pytest.approx(cell[P.WIDTH])
        assert back[P.NEG_RADIUS] == pytest.approx(cell[P.NEG_RADIUS])

    def test_errors(self, cell):
        with pytest.raises(ConfigurationError):
            SearchSpace.from_parameters(cell, [])
        with pytest.raises(ConfigurationError):
            SearchSpace.from_parameters(cell, ["Not a parameter"])
        with pytest.raises(ConfigurationError):
            SearchSpace.from_parameters(cell.with_entry(P.WIDTH, upper=math.inf), [P.WIDTH])


class TestSpaceFilling:
    def test_collapsed_bounds(self):
        sp = SearchSpace(("a", "b"), (1.0, 2.0), (1.0, 5.0), (True, True))
        for r in range(1, 20):
            assert random_propose(sp, r, 7).directives["a"].value == 1.0
            assert sobol_propose(sp, r, 7).directives["a"].value == 1.0

    def test_reproducible(self):
        sp = _unit_space("a", "b", "c")
        assert random_propose(sp, 5, 1).serialize() == random_propose(sp, 5, 1).serialize()
        assert random_propose(sp, 5, 1).serialize() != random_propose(sp, 6, 1).serialize()
        assert sobol_propose(sp, 3, 1).serialize() == sobol_propose(sp, 3, 1).serialize()

    def test_many_draws_stay_in_bounds(self, cell):
        keys = [P.WIDTH, P.NEG_POROSITY, P.NEG_RADIUS]
        sp = SearchSpace.from_parameters(cell, keys)
        for r in range(1, 10_001):
            for k, d in random_propose(sp, r, 3).directives.items():
                lo, hi = cell.bounds(k)
                assert lo <= d.value <= hi


class TestBayesOpt:
    def test_warm_start_is_sobol_and_ignores_history(self, cell):
        keys = [P.WIDTH, P.NEG_RADIUS, P.POS_ACTIVE]
        sp = SearchSpace.from_parameters(cell, keys)
        noise = [({k: cell[k] for k in keys}, 5.0), ({k: cell[k] for k in keys}, None)]
        for r in range(1, 7):
            a = bo_propose(sp, [], r)
            b = bo_propose(sp, noise, r)
            expected = sp.from_unit(sobol_point(3, r - 1, 1234))
            assert a.serialize() == b.serialize()
            for k in keys:
                assert a.directives[k].value == pytest.approx(expected[k])

    def test_finds_quadratic_minimum(self):
        sp = _unit_space("x")
        history = []
        for r in range(1, 26):
            x = bo_propose(sp, history, r).directives["x"].value
            assert 0.0 <= x <= 1.0
            history.append(({"x": x}, (x - 0.3) ** 2))
        best_x = min(history, key=lambda h: h[1])[0]["x"]
        assert abs(best_x - 0.3) < 0.05

    def test_deterministic_with_failures(self):
        sp = _unit_space("x", "y")
        rng = np.random.default_rng(0)
        history = []
        for _ in range(6):
            x, y = rng.random(2)
            history.append(({"x": float(x), "y": float(y)}, float((x - 0.5) ** 2 + y)))
        history.append(({"x": 0.9, "y": 0.9}, None))
        a = bo_propose(sp, history, 7)
        b = bo_propose(sp, history, 7)
        assert a.serialize() == b.serialize()
        assert all(0.0 <= d.value <= 1.0 for d in a.directives.values())

    def test_dimension_guard(self):
        sp = _unit_space(*[f"k{i}" for i in range(21)])
        with pytest.raises(ConfigurationError):
            bo_propose(sp, [], 1)

    def test_proposer_uses_request_history(self, cell):
        prop = BOProposer(seed=99)
        res = prop.propose(ProposalRequest(1, cell, (P.WIDTH,)))
        sp = SearchSpace.from_parameters(cell, [P.WIDTH])
        assert res.update.directives[P.WIDTH].value == pytest.approx(sp.from_unit(sobol_point(1, 0, 99))[P.WIDTH])
        assert prop.uses_step_size is False


class TestScripted:
    def test_replay_order_and_exhaustion(self):
        u1 = ParameterUpdate.absolute({P.WIDTH: 1.5})
        u2 = ParameterUpdate.absolute({P.WIDTH: 1.6})
        assert scripted_propose([u1, u2], 1) is u1
        assert scripted_propose([u1, u2], 2) is u2
        with pytest.raises(ProposerError):
            scripted_propose([u1, u2], 3)

    def test_interpolation_ends_at_target(self, cell):
        star = {P.WIDTH: 1.2, P.NEG_RADIUS: 9e-6}
        script = interpolation_script(cell.values(), star, list(star), 4)
        assert len(script) == 4
        assert script[-1].directives[P.WIDTH].value == 1.2
        assert script[-1].directives[P.NEG_RADIUS].value == 9e-6
        first = script[0].directives[P.WIDTH].value
        assert 1.2 < first < cell[P.WIDTH]
        with pytest.raises(ValueError):
            interpolation_script(cell.values(), star, list(star), 0)

    def test_replay_file(self, tmp_path):
        path = tmp_path / "replay.jsonl"
        updates = [ParameterUpdate.absolute({P.WIDTH: 1.5}, "a"), parse_update('{"Electrode width [m]": "*1.1"}')]
        write_replay(path, updates)
        assert load_replay(path, [P.WIDTH]) == updates


class TestFactory:
    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            ProposerConfig(kind="annealing")

    def test_llm_without_endpoint(self):
        with pytest.raises(ConfigurationError):
            make_proposer(ProposerConfig(kind="llm"), environ={})

    def test_llm_from_settings(self, chat_server):
        prop = make_proposer(ProposerConfig(kind="llm", llm={"base_url": chat_server.base_url}), environ={})
        try:
            assert prop.uses_step_size is True
            assert prop.describe()["endpoint"]["base_url"] == chat_server.base_url
        finally:
            prop.close()

    def test_scripted_and_stub_need_opt_in(self):
        with pytest.raises(ConfigurationError):
            make_proposer(ProposerConfig(kind="scripted"))
        with pytest.raises(ConfigurationError):
            make_proposer(ProposerConfig(kind="cmaes-stub"))
        assert make_proposer(ProposerConfig(kind="cmaes-stub", allow_stub=True)).kind == "cmaes-stub"

    def test_config_dict_round_trip(self):
        cfg = ProposerConfig(kind="bo", search_keys=(P.WIDTH,), bounds={P.WIDTH: (1.0, 2.0)}, seed=5, llm={"api_key": "x", "model": "m"})
        raw = cfg.to_dict()
        assert "api_key" not in raw["llm"]
        back = ProposerConfig.from_dict(raw)
        assert back.kind == "bo" and back.bounds == {P.WIDTH: (1.0, 2.0)} and back.seed == 5
