# modules/proposer/factory.py
# -*- coding: utf-8 -*-
"""
ProposerConfig and make_proposer().

Kinds: llm, bo, random, sobol, scripted, cmaes-stub. The LLM kind needs an
endpoint (LLMConfig raises ConfigurationError before any simulation runs);
scripted needs either an inline script or a JSONL replay file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from modules.core.errors import ConfigurationError
from modules.core.types import JSONDict, StrPath
from modules.infra.logging import get_logger
from modules.sim.protocol import Protocol

from .base import Proposer
from .baselines import (
      BOProposer
    , CMAESStubProposer
    , RandomProposer
    , ScriptedProposer
    , SobolProposer
    , load_replay
)
from .llm import LLMProposer
from .llm_client import ChatClient
from .llm_common import LLMConfig
from .updates import ParameterUpdate

_log = get_logger(__name__)

KINDS = ("llm", "bo", "random", "sobol", "scripted", "cmaes-stub")

__all__ = ["ProposerConfig", "make_proposer", "KINDS"]


@dataclass
class ProposerConfig:
    """
    Attributes
    ----------
    kind : str
    search_keys : tuple of str
        Empty means "take them from the task".
    bounds : mapping name → (lower, upper) | None
        Overrides of the parameter-set bounds for space-filling proposers.
    seed : int
    llm : dict
        LLMConfig settings (base_url, model, temperature, ...).
    replay : str | None
        JSONL replay file for the scripted kind.
    script : list of ParameterUpdate
        Inline script for the scripted kind (tests, interpolation runs).
    allow_stub : bool
        The cmaes-stub kind refuses to build unless set.
    """

    kind: str = "llm"
    search_keys: Tuple[str, ...] = ()
    bounds: Optional[Dict[str, Tuple[float, float]]] = None
    seed: int = 1234
    llm: Dict[str, Any] = field(default_factory=dict)
    replay: Optional[str] = None
    script: List[ParameterUpdate] = field(default_factory=list)
    allow_stub: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown proposer kind {self.kind!r}; choose one of {', '.join(KINDS)}")
        self.search_keys = tuple(self.search_keys)

    def to_dict(self) -> JSONDict:
        out: JSONDict = {
              "kind": self.kind
            , "search_keys": list(self.search_keys)
            , "seed": self.seed
            , "replay": self.replay
        }
        if self.bounds:
            out["bounds"] = {k: [lo, hi] for k, (lo, hi) in self.bounds.items()}
        if self.llm:
            out["llm"] = {k: v for k, v in self.llm.items() if k != "api_key"}
        if self.script:
            out["script_length"] = len(self.script)
        if self.kind == "cmaes-stub":
            out["allow_stub"] = self.allow_stub
        return out

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ProposerConfig":
        bounds = raw.get("bounds")
        return cls(
              kind=str(raw.get("kind", "llm"))
            , search_keys=tuple(raw.get("search_keys", ()))
            , bounds=None if bounds is None else {k: (float(v[0]), float(v[1])) for k, v in bounds.items()}
            , seed=int(raw.get("seed", 1234))
            , llm=dict(raw.get("llm", {}))
            , replay=raw.get("replay")
            , allow_stub=bool(raw.get("allow_stub", False))
        )


def make_proposer(
      cfg: ProposerConfig
    , *
    , task_kind: str = "first_cycle"
    , protocols: Sequence[Protocol] = ()
    , parameter_set: str = "default_cell"
    , search_keys: Sequence[str] = ()
    , audit_path: Optional[StrPath] = None
    , client: Optional[ChatClient] = None
    , environ: Optional[Mapping[str, str]] = None
) -> Proposer:
    """
    Build the proposer for one run.

    A shared `client` may be passed for batch runs (bounded in-flight
    requests across tasks); otherwise the LLM kind builds its own from
    `cfg.llm` and the environment.

    Raises
    ------
    ConfigurationError
        Unknown kind, missing endpoint, missing script, stub not enabled.
    """
    if cfg.kind == "llm":
        owns = client is None
        if client is None:
            client = ChatClient(LLMConfig.from_settings(cfg.llm, environ=environ))
        return LLMProposer(
              client
            , task_kind=task_kind
            , protocols=protocols
            , parameter_set=parameter_set
            , audit_path=audit_path
            , owns_client=owns
        )
    if cfg.kind == "bo":
        return BOProposer(seed=cfg.seed, bounds=cfg.bounds)
    if cfg.kind == "random":
        return RandomProposer(seed=cfg.seed, bounds=cfg.bounds)
    if cfg.kind == "sobol":
        return SobolProposer(seed=cfg.seed, bounds=cfg.bounds)
    if cfg.kind == "scripted":
        if cfg.script:
            return ScriptedProposer(cfg.script)
        if cfg.replay:
            return ScriptedProposer(load_replay(cfg.replay, search_keys or None), source=str(cfg.replay))
        raise ConfigurationError("scripted proposer needs a replay file or an inline script")
    if not cfg.allow_stub:
        raise ConfigurationError("cmaes-stub is disabled; set allow_stub to use it")
    _log.warning("cmaes-stub proposer: isotropic Gaussian steps only, no covariance adaptation")
    return CMAESStubProposer(seed=cfg.seed, bounds=cfg.bounds)
