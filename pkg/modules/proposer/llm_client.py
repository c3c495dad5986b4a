# modules/proposer/llm_client.py
# -*- coding: utf-8 -*-
"""
Chat-completions HTTP client (OpenAI-compatible):
- Centralizes HTTP (session, status retries, headers, timeouts)
- Retries timeouts and connection errors with exponential backoff
- Bounds concurrent in-flight requests across runs sharing one client
- Appends every finished ChatExchange to the run's exchanges.jsonl

Notes
-----
• Status-based retries (429/5xx) run inside the urllib3 Retry adapter;
  timeouts and connection errors are retried by the attempt loop here so
  the total number of attempts is 1 + max_retries either way.
• Request and response bodies are only logged at DEBUG; the verbatim record
  goes to the audit file.
• Entry points should call init_logging(); this module only fetches the logger.
"""

from __future__ import annotations

import base64
import mimetypes
import threading
import time as _time
from pathlib import Path
from typing import Any, Dict, List, Optional

import requests as _req
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from modules.core.errors import ProposerError
from modules.core.types import JSONDict, StrPath
from modules.infra.jsonl import append_jsonl
from modules.infra.logging import get_logger

from .llm_common import ChatExchange, LLMConfig, extract_error_text, short_preview

_log = get_logger(__name__)

EXCHANGES_NAME = "exchanges.jsonl"

__all__ = ["ChatClient", "image_content", "record_exchange", "EXCHANGES_NAME"]


def image_content(path: StrPath) -> JSONDict:
    """Inline image part (data URL) for multimodal chat messages."""
    p = Path(path)
    mime = mimetypes.guess_type(p.name)[0] or "application/octet-stream"
    if p.suffix.lower() == ".svg":
        mime = "image/svg+xml"
    data = base64.b64encode(p.read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}}


class ChatClient:
    """
    Thread-safe, connection-pooled chat client.

    Prefer: ChatClient(LLMConfig(...)); `from_env()` reads the endpoint from
    BATTERY_LLM_BASE_URL / BATTERY_LLM_API_KEY.
    """

    def __init__(self, cfg: LLMConfig) -> None:
        self.cfg = cfg
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)

        self._sess = _req.Session()
        retries = Retry(
              total=cfg.max_retries
            , connect=0                     # the attempt loop owns connection errors
            , read=0                        # and read timeouts
            , status=cfg.max_retries
            , backoff_factor=cfg.backoff_s
            , status_forcelist=(429, 500, 502, 503, 504)
            , allowed_methods=frozenset(["POST"])
            , respect_retry_after_header=True
            , raise_on_status=False
        )
        adapter = HTTPAdapter(max_retries=retries, pool_maxsize=max(10, cfg.max_in_flight))
        self._sess.mount("https://", adapter)
        self._sess.mount("http://", adapter)
        headers = {"Accept": "application/json", "User-Agent": "battery-calibration/1.0"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._sess.headers.update(headers)

        _log.debug(
              "ChatClient ready url=%s ct=%.1fs rt=%.1fs retries=%d in_flight=%d"
            , cfg.url
            , cfg.connect_timeout_s
            , cfg.read_timeout_s
            , cfg.max_retries
            , cfg.max_in_flight
        )

    # ────────────────────────────────────────────────────────────────────────
    # Lifecycle helpers
    # ────────────────────────────────────────────────────────────────────────
    @classmethod
    def from_env(cls, **overrides: Any) -> "ChatClient":
        return cls(LLMConfig(**overrides))

    def close(self) -> None:
        try:
            self._sess.close()
        except Exception:
            pass

    def __enter__(self) -> "ChatClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    # ────────────────────────────────────────────────────────────────────────
    # Core HTTP layer
    # ────────────────────────────────────────────────────────────────────────
    def _payload(self, messages: List[JSONDict]) -> JSONDict:
        payload: JSONDict = {"model": self.cfg.model, "messages": messages}
        if self.cfg.temperature is not None:
            payload["temperature"] = self.cfg.temperature
        if self.cfg.max_tokens is not None:
            payload["max_tokens"] = self.cfg.max_tokens
        return payload

    def complete(self, messages: List[JSONDict], exchange: Optional[ChatExchange] = None) -> str:
        """
        POST one chat-completions request and return the assistant text.

        Latency, usage and attempt counts are added to `exchange` when given.

        Raises
        ------
        ProposerError
            Retries exhausted, non-2xx status, or a body without a message.
        """
        url = self.cfg.url
        payload = self._payload(messages)
        attempts = 1 + self.cfg.max_retries
        last_exc: Optional[Exception] = None

        with self._slots:
            for idx in range(1, attempts + 1):
                t0 = _time.perf_counter()
                try:
                    resp = self._sess.post(
                          url
                        , json=payload
                        , timeout=(self.cfg.connect_timeout_s, self.cfg.read_timeout_s)
                    )
                except (_req.Timeout, _req.ConnectionError) as e:
                    dt = _time.perf_counter() - t0
                    if exchange is not None:
                        exchange.latency_s += dt
                        exchange.attempts += 1
                    _log.warning(
                        "HTTP POST %s: %s after %.0f ms (attempt %d/%d)"
                        , self.cfg.path, type(e).__name__, dt * 1000.0, idx, attempts
                    )
                    last_exc = e
                    if idx < attempts:
                        _time.sleep(self.cfg.backoff_s * (2 ** (idx - 1)))
                    continue
                except _req.RequestException as e:
                    raise ProposerError(f"chat request failed: {type(e).__name__}: {e}") from e

                dt = _time.perf_counter() - t0
                if exchange is not None:
                    exchange.latency_s += dt
                    exchange.attempts += 1

                if not 200 <= resp.status_code < 300:
                    msg = extract_error_text(resp)
                    _log.error("HTTP POST %s: %s (%.0f ms) body=%s", self.cfg.path, resp.status_code, dt * 1000.0, msg)
                    raise ProposerError(f"chat endpoint returned HTTP {resp.status_code}: {msg}")

                try:
                    data = resp.json()
                    content = data["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as e:
                    _log.error("HTTP POST %s: malformed body: %s", self.cfg.path, short_preview(resp.text))
                    raise ProposerError("chat endpoint returned a malformed body") from e
                if not isinstance(content, str):
                    raise ProposerError("chat response content is not text")

                if exchange is not None:
                    exchange.add_usage(data.get("usage"))
                _log.info("HTTP POST %s: %s (%.0f ms, attempt %d)", self.cfg.path, resp.status_code, dt * 1000.0, idx)
                _log.debug("chat reply: %s", short_preview(content))
                return content

        raise ProposerError(f"chat request failed after {attempts} attempts: {last_exc}")

    def converse(
          self
        , system: str
        , user: str
        , *
        , image: Optional[StrPath] = None
        , exchange: Optional[ChatExchange] = None
    ) -> ChatExchange:
        """
        Send a first user turn (with optional image) and record it in
        `exchange` (created when None). Follow-ups go through `follow_up()`.
        """
        ex = exchange or ChatExchange(system=system)
        ex.image = None if image is None else str(image)
        ex.turns.append({"role": "user", "content": user})
        ex.response = self.complete(self._messages(ex), ex)
        ex.turns.append({"role": "assistant", "content": ex.response})
        return ex

    def follow_up(self, exchange: ChatExchange, user: str) -> ChatExchange:
        exchange.turns.append({"role": "user", "content": user})
        exchange.response = self.complete(self._messages(exchange), exchange)
        exchange.turns.append({"role": "assistant", "content": exchange.response})
        return exchange

    def _attach(self, image: Optional[str]) -> bool:
        return bool(image) and self.cfg.supports_images and Path(str(image)).is_file()

    def _messages(self, ex: ChatExchange) -> List[JSONDict]:
        messages: List[JSONDict] = [{"role": "system", "content": ex.system}]
        first_user = True
        for turn in ex.turns:
            if turn["role"] == "user" and first_user and self._attach(ex.image):
                parts: List[Dict[str, Any]] = [{"type": "text", "text": turn["content"]}, image_content(ex.image)]
                messages.append({"role": "user", "content": parts})
            else:
                messages.append({"role": turn["role"], "content": turn["content"]})
            if turn["role"] == "user":
                first_user = False
        return messages


def record_exchange(exchange: ChatExchange, audit_path: Optional[StrPath]) -> None:
    """Append `exchange` verbatim to the audit JSONL (no-op without a path)."""
    if audit_path is not None:
        append_jsonl(audit_path, exchange.to_dict())
