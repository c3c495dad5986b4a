# tests/conftest.py
# -*- coding: utf-8 -*-
"""Shared fixtures: repo root on sys.path, default parameter sets, short protocols."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from modules.sim.parameters import load_default_cell, load_default_degradation  # noqa: E402
from modules.sim.protocol import capacity_check_protocol, standard_protocol  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: suite-scale runs (deselect with -m 'not slow')")


@pytest.fixture(scope="session")
def cell():
    return load_default_cell()


@pytest.fixture(scope="session")
def sei_params():
    return load_default_degradation()


@pytest.fixture(scope="session")
def cycle_1c():
    """Standard 1C cycle with coarse sampling (fast enough for many cycles)."""
    return standard_protocol(1.0, sample_interval_s=60.0)


@pytest.fixture(scope="session")
def discharge_1c():
    return capacity_check_protocol(1.0, sample_interval_s=20.0)


@pytest.fixture(scope="session")
def standard_1c_trace(cell):
    from modules.sim.solver import run_protocol

    return run_protocol(cell, standard_protocol(1.0))


@pytest.fixture()
def chat_server():
    """Local chat-completions mock; queue replies with .reply()/.reply_raw()."""
    from modules.proposer.mock_chat_server import MockChatServer

    with MockChatServer() as srv:
        yield srv


@pytest.fixture()
def chat_client(chat_server):
    from modules.proposer.llm_client import ChatClient
    from modules.proposer.llm_common import LLMConfig

    cfg = LLMConfig(
          base_url=chat_server.base_url
        , api_key="test-token"
        , connect_timeout_s=2.0
        , read_timeout_s=2.0
        , max_retries=2
        , backoff_s=0.01
        , environ={}
    )
    with ChatClient(cfg) as client:
        yield client
