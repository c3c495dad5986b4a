# modules/proposer/mock_chat_server.py
# -*- coding: utf-8 -*-
"""
In-process chat-completions mock
================================

Speaks the OpenAI-compatible response shape on any POST path. Replies are
queued per test:

    with MockChatServer() as srv:
        srv.reply('{"updated_params": {"Electrode width [m]": "*1.1"}}')
        srv.reply("not json at all")
        srv.reply("...", delay_s=2.0)          # provoke a client timeout
        srv.reply_raw("<html>oops</html>")     # malformed HTTP body
        srv.reply_raw("busy", status=503)

When the queue is empty the `default` content is served (or HTTP 503 when
no default was given). Every request body is kept in `srv.requests`.

Manual smoke runs:

    python -m modules.proposer.mock_chat_server --port 8765 --reply '{"Electrode width [m]": 1.6}'
"""

from __future__ import annotations

import argparse
import json
import threading
import time
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Deque, List, Optional

from modules.core.types import JSONDict
from modules.infra.logging import get_logger, init_logging

_log = get_logger(__name__)

__all__ = ["MockChatServer", "MockReply"]


@dataclass
class MockReply:
    content: Optional[str] = None
    raw: Optional[str] = None
    status: int = 200
    delay_s: float = 0.0

    def body(self, n: int) -> bytes:
        if self.raw is not None:
            return self.raw.encode("utf-8")
        text = self.content or ""
        return json.dumps({
              "id": f"mock-{n}"
            , "object": "chat.completion"
            , "model": "mock"
            , "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
            , "usage": {"prompt_tokens": 10, "completion_tokens": max(1, len(text) // 4)}
        }).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def do_POST(self) -> None:  # noqa: N802
        length = int(self.headers.get("Content-Length", "0") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            payload: Any = json.loads(raw.decode("utf-8") or "null")
        except ValueError:
            payload = {"_unparsed": raw.decode("utf-8", "replace")}
        reply, n = self.server.owner._next(payload, dict(self.headers))

        if reply.delay_s > 0:
            time.sleep(reply.delay_s)
        body = reply.body(n)
        try:
            self.send_response(reply.status)
            self.send_header("Content-Type", "application/json" if reply.raw is None else "text/plain")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            _log.debug("mock chat server: client went away before reply %d", n)

    def log_message(self, fmt: str, *args: Any) -> None:
        _log.debug("mock chat server: " + fmt, *args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    owner: "MockChatServer"


class MockChatServer:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, *, default: Optional[str] = None) -> None:
        self._httpd = _Server((host, port), _Handler)
        self._httpd.owner = self
        self._queue: Deque[MockReply] = deque()
        self._lock = threading.Lock()
        self._thread: Optional[threading.Thread] = None
        self.default = default
        self.requests: List[JSONDict] = []
        self.headers: List[JSONDict] = []

    # ── queue ───────────────────────────────────────────────────────────────

    def reply(self, content: str, *, delay_s: float = 0.0, status: int = 200) -> "MockChatServer":
        with self._lock:
            self._queue.append(MockReply(content=content, status=status, delay_s=delay_s))
        return self

    def reply_raw(self, body: str, *, status: int = 200, delay_s: float = 0.0) -> "MockChatServer":
        with self._lock:
            self._queue.append(MockReply(raw=body, status=status, delay_s=delay_s))
        return self

    def _next(self, payload: Any, headers: JSONDict) -> "tuple[MockReply, int]":
        with self._lock:
            self.requests.append(payload)
            self.headers.append(headers)
            n = len(self.requests)
            if self._queue:
                return self._queue.popleft(), n
        if self.default is not None:
            return MockReply(content=self.default), n
        return MockReply(raw=json.dumps({"error": "no reply queued"}), status=503), n

    @property
    def pending(self) -> int:
        with self._lock:
            return len(self._queue)

    # ── lifecycle ───────────────────────────────────────────────────────────

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockChatServer":
        if self._thread is None:
            self._thread = threading.Thread(target=self._httpd.serve_forever, name="mock-chat", daemon=True)
            self._thread.start()
            _log.debug("mock chat server listening on %s", self.base_url)
        return self

    def stop(self) -> None:
        if self._thread is not None:
            self._httpd.shutdown()
            self._thread.join(timeout=5.0)
            self._thread = None
        self._httpd.server_close()

    def __enter__(self) -> "MockChatServer":
        return self.start()

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description="Serve canned chat-completions replies for manual smoke runs.")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--reply", default='{"updated_params": {}, "rationale": "mock"}', help="content returned for every request")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    init_logging("INFO")
    srv = MockChatServer(args.host, args.port, default=args.reply)
    _log.info("mock chat server on %s (Ctrl+C to stop)", srv.base_url)
    try:
        srv._httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv._httpd.server_close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
