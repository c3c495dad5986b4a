# modules/proposer/llm_common.py
# -*- coding: utf-8 -*-
"""
Common pieces for the chat-completions client stack:
- LLMConfig (endpoint, token, model, timeouts, retries, image support)
- ChatExchange: the audit record of one request/response pair
- Helpers for log previews and response error extraction

This module does not perform HTTP calls; the HTTP logic lives in
modules/proposer/llm_client.py. No init_logging here; entry points do that.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from modules.core.config import LLMDefaults, get_llm_defaults
from modules.core.errors import ConfigurationError
from modules.core.types import JSONDict
from modules.infra.logging import get_logger

_log = get_logger(__name__)

__all__ = ["LLMConfig", "ChatExchange", "short_preview", "extract_error_text"]


# ────────────────────────────────────────────────────────────────────────────────
# Small utils
# ────────────────────────────────────────────────────────────────────────────────

def short_preview(v: Any, maxlen: int = 300) -> str:
    """Concise preview of a value for DEBUG/WARNING logs."""
    try:
        s = v if isinstance(v, str) else json.dumps(v, ensure_ascii=False, sort_keys=True)
    except (TypeError, ValueError):
        s = str(v)
    return s if len(s) <= maxlen else (s[:maxlen] + " …")


def extract_error_text(resp: Any) -> str:
    """Best-effort human-friendly error from an HTTP response."""
    try:
        j = resp.json()
        return short_preview(j)
    except ValueError:
        return (getattr(resp, "text", "") or "")[:500] or "<no-text>"


# ────────────────────────────────────────────────────────────────────────────────
# Config
# ────────────────────────────────────────────────────────────────────────────────

class LLMConfig:
    """
    Configuration bundle for the chat-completions client.

    Parameters
    ----------
    base_url : str | None
        Endpoint base URL; if None, read from BATTERY_LLM_BASE_URL.
    api_key : str | None
        Bearer token; if None, read from BATTERY_LLM_API_KEY (may stay empty
        for local endpoints).
    path : str
        Chat-completions path appended to base_url.
    model : str
        Model identifier sent with each request.
    temperature : float | None
        None leaves decoding settings to the endpoint.
    connect_timeout_s, read_timeout_s : float
    max_retries : int
        Extra attempts after the first (timeouts, connection errors, 429/5xx).
    backoff_s : float
        Exponential backoff base in seconds.
    max_in_flight : int
        Bounded concurrency across runs sharing this client.
    supports_images : bool
        Attach the overlay plot as inline image content.
    max_tokens : int | None
    environ : Mapping[str, str] | None
        Environment to read (tests inject dicts).
    """

    def __init__(
          self
        , base_url: Optional[str] = None
        , api_key: Optional[str] = None
        , *
        , path: Optional[str] = None
        , model: Optional[str] = None
        , temperature: Optional[float] = None
        , connect_timeout_s: Optional[float] = None
        , read_timeout_s: Optional[float] = None
        , max_retries: Optional[int] = None
        , backoff_s: Optional[float] = None
        , max_in_flight: Optional[int] = None
        , supports_images: bool = False
        , max_tokens: Optional[int] = None
        , environ: Optional[Mapping[str, str]] = None
        , defaults: Optional[LLMDefaults] = None
    ) -> None:
        d = defaults or get_llm_defaults()
        env = os.environ if environ is None else environ

        self.base_url = (base_url or env.get(d.base_url_env, "") or "").strip().rstrip("/")
        self.api_key = (api_key or env.get(d.api_key_env, "") or "").strip()
        self.path = "/" + (path or d.path).lstrip("/")
        self.model = str(model or d.model)
        self.temperature = None if temperature is None else float(temperature)
        self.connect_timeout_s = float(d.connect_timeout_s if connect_timeout_s is None else connect_timeout_s)
        self.read_timeout_s = float(d.read_timeout_s if read_timeout_s is None else read_timeout_s)
        self.max_retries = int(d.max_retries if max_retries is None else max_retries)
        self.backoff_s = float(d.backoff_s if backoff_s is None else backoff_s)
        self.max_in_flight = int(d.max_in_flight if max_in_flight is None else max_in_flight)
        self.supports_images = bool(supports_images)
        self.max_tokens = d.max_tokens if max_tokens is None else int(max_tokens)

        if not self.base_url:
            _log.error("LLMConfig init: %s not set", d.base_url_env)
            raise ConfigurationError(
                f"no LLM endpoint configured; export {d.base_url_env} or pass --base-url"
            )
        if self.max_retries < 0 or self.max_in_flight < 1:
            raise ConfigurationError("max_retries must be ≥ 0 and max_in_flight ≥ 1")

        _log.info(
              "LLMConfig init: url=%s%s model=%s temperature=%s timeouts=(%.1f,%.1f)s retries=%d "
              "backoff=%.2fs in_flight=%d images=%s token=%s"
            , self.base_url
            , self.path
            , self.model
            , "endpoint-default" if self.temperature is None else f"{self.temperature:g}"
            , self.connect_timeout_s
            , self.read_timeout_s
            , self.max_retries
            , self.backoff_s
            , self.max_in_flight
            , self.supports_images
            , "set" if self.api_key else "none"
        )

    @property
    def url(self) -> str:
        return f"{self.base_url}{self.path}"

    def to_dict(self) -> JSONDict:
        """Non-sensitive view (the token is never serialized)."""
        return {
              "base_url": self.base_url
            , "path": self.path
            , "model": self.model
            , "temperature": self.temperature
            , "connect_timeout_s": self.connect_timeout_s
            , "read_timeout_s": self.read_timeout_s
            , "max_retries": self.max_retries
            , "backoff_s": self.backoff_s
            , "max_in_flight": self.max_in_flight
            , "supports_images": self.supports_images
            , "max_tokens": self.max_tokens
        }

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any], *, environ: Optional[Mapping[str, str]] = None) -> "LLMConfig":
        """Build from a resolved settings mapping (CLI flags / JSON config file)."""
        known = {
              "base_url", "api_key", "path", "model", "temperature", "connect_timeout_s"
            , "read_timeout_s", "max_retries", "backoff_s", "max_in_flight", "supports_images", "max_tokens"
        }
        kwargs = {k: v for k, v in settings.items() if k in known and v is not None}
        return cls(environ=environ, **kwargs)


# ────────────────────────────────────────────────────────────────────────────────
# Audit record
# ────────────────────────────────────────────────────────────────────────────────

@dataclass
class ChatExchange:
    """
    One proposer conversation (possibly several HTTP turns).

    Attributes
    ----------
    system : str
    turns : List[Dict[str, str]]
        Alternating {"role": "user"|"assistant", "content": text}.
    image : str | None
        Path of the attached overlay (content is sent inline, not logged).
    response : str
        Last assistant text.
    latency_s : float
        Summed wall-clock time of all HTTP turns.
    prompt_tokens, completion_tokens : int | None
        Endpoint-reported usage, summed over turns.
    attempts : int
        HTTP attempts including retries.
    purpose : str
        "propose", "warmup_batch" or "summarize".
    round : int | None
    error : str | None
        Set when the exchange ended without a usable answer.
    """

    system: str
    turns: List[Dict[str, str]] = field(default_factory=list)
    image: Optional[str] = None
    response: str = ""
    latency_s: float = 0.0
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None
    attempts: int = 0
    purpose: str = "propose"
    round: Optional[int] = None
    error: Optional[str] = None

    @property
    def n_turns(self) -> int:
        return sum(1 for t in self.turns if t.get("role") == "assistant")

    def add_usage(self, usage: Optional[Mapping[str, Any]]) -> None:
        if not usage:
            return
        p, c = usage.get("prompt_tokens"), usage.get("completion_tokens")
        if isinstance(p, int):
            self.prompt_tokens = (self.prompt_tokens or 0) + p
        if isinstance(c, int):
            self.completion_tokens = (self.completion_tokens or 0) + c

    def to_dict(self) -> JSONDict:
        return {
              "purpose": self.purpose
            , "round": self.round
            , "request": {"system": self.system, "turns": list(self.turns), "image": self.image}
            , "response": self.response
            , "latency_s": self.latency_s
            , "tokens": {"prompt": self.prompt_tokens, "completion": self.completion_tokens}
            , "attempts": self.attempts
            , "error": self.error
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ChatExchange":
        req = raw.get("request", {})
        tokens = raw.get("tokens", {})
        return cls(
              system=str(req.get("system", ""))
            , turns=[dict(t) for t in req.get("turns", [])]
            , image=req.get("image")
            , response=str(raw.get("response", ""))
            , latency_s=float(raw.get("latency_s", 0.0))
            , prompt_tokens=tokens.get("prompt")
            , completion_tokens=tokens.get("completion")
            , attempts=int(raw.get("attempts", 0))
            , purpose=str(raw.get("purpose", "propose"))
            , round=raw.get("round")
            , error=raw.get("error")
        )
