# modules/infra/logging.py
# -*- coding: utf-8 -*-

"""
Central logging configuration for the calibration framework.

Every entry point (CLI subcommand, smoke block, batch worker) configures
logging exactly once through `init_logging()`; library modules only ever
call `get_logger(__name__)`.

Usage
-----
    from modules.infra.logging import init_logging, get_logger

    init_logging(level="INFO")
    log = get_logger(__name__)
    log.info("simulating %s", task_id)

Run logs
--------
A calibration run writes a copy of its log lines to `<run_dir>/run.log`.
`attach_run_log()` adds that handler and returns it so the caller can hand
it back to `detach_run_log()` when the run ends (batch workers share the
root logger, so handlers are filtered by thread name).

Environment
-----------
- BATTERY_LOG_LEVEL, if set, overrides the `level` parameter.
"""

from __future__ import annotations

import logging
import os
import sys
import threading
from pathlib import Path
from typing import Optional, TextIO

# ────────────────────────────────────────────────────────────────────────────────
# Globals
# ────────────────────────────────────────────────────────────────────────────────

LEVEL_ENV_VAR = "BATTERY_LOG_LEVEL"

_FORMAT = "[{asctime}][{levelname}][{name}] {message}"
_DATEFMT = "%Y-%m-%d %H:%M:%S"

# chatty third-party loggers kept at WARNING unless we run at DEBUG
_NOISY = ("matplotlib", "urllib3", "PIL")


def _formatter() -> logging.Formatter:
    return logging.Formatter(fmt=_FORMAT, datefmt=_DATEFMT, style="{")


class _ThreadFilter(logging.Filter):
    """Pass only records emitted from one thread."""

    def __init__(self, thread_name: str) -> None:
        super().__init__()
        self.thread_name = thread_name

    def filter(self, record: logging.LogRecord) -> bool:
        return record.threadName == self.thread_name


# ────────────────────────────────────────────────────────────────────────────────
# Public helpers
# ────────────────────────────────────────────────────────────────────────────────

def init_logging(
      level: str = "INFO"
    , *
    , force: bool = True
    , log_file: Optional[Path] = None
    , stream: Optional[TextIO] = None
) -> None:
    """
    Configure root logging.

    Parameters
    ----------
    level : str, default "INFO"
        Logging level name. BATTERY_LOG_LEVEL, when set, wins.
    force : bool, default True
        Remove existing root handlers first (CLIs and tests re-init freely).
    log_file : Optional[Path]
        Also write log lines to this file.
    stream : TextIO | None
        Console stream (default stdout).
    """
    env_level = os.getenv(LEVEL_ENV_VAR)
    if env_level:
        level = env_level
    numeric_level = getattr(logging, str(level).upper(), logging.INFO)

    root = logging.getLogger()
    if force:
        for handler in list(root.handlers):
            root.removeHandler(handler)
    root.setLevel(numeric_level)

    stream_handler = logging.StreamHandler(stream=sys.stdout if stream is None else stream)
    stream_handler.setFormatter(_formatter())
    root.addHandler(stream_handler)

    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(_formatter())
        root.addHandler(file_handler)

    for name in _NOISY:
        logging.getLogger(name).setLevel(
            numeric_level if numeric_level <= logging.DEBUG else logging.WARNING
        )

    get_logger(__name__).debug(
          "Logging configured level=%s file=%s"
        , logging.getLevelName(numeric_level)
        , log_file
    )


def attach_run_log(
    run_dir: Path
) -> logging.Handler:
    """
    Mirror the calling thread's log records into `<run_dir>/run.log`.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "run.log", encoding="utf-8")
    handler.setFormatter(_formatter())
    handler.addFilter(_ThreadFilter(threading.current_thread().name))
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(
    handler: logging.Handler
) -> None:
    """Remove and close a handler returned by `attach_run_log()`."""
    logging.getLogger().removeHandler(handler)
    handler.close()


def log_banner(
      log: logging.Logger
    , msg: str
    , *
    , char: str = "="
    , width: int = 60
    , box: bool = False
) -> None:
    """
    Print a visual banner (phase boundaries: warm-up, optimization, suite).
    """
    if not box:
        bar = char * width
        log.info(bar)
        log.info(msg)
        log.info(bar)
        return

    inner = " " + msg + " "
    pad = max(0, width - len(inner))
    left = pad // 2
    top_bot = "═" * width
    log.info(f"╔{top_bot}╗")
    log.info(f"║{' ' * left}{inner}{' ' * (pad - left)}║")
    log.info(f"╚{top_bot}╝")


def get_logger(
    name: Optional[str] = None
) -> logging.Logger:
    """
    Thin wrapper around logging.getLogger; modules use this, never logging directly.
    """
    return logging.getLogger(name if name is not None else __name__)
