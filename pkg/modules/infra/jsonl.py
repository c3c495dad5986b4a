# modules/infra/jsonl.py
# -*- coding: utf-8 -*-

"""
Small JSON / JSONL persistence helpers.

Every artifact a run leaves on disk (run.json, best.json, memory.jsonl,
rounds.jsonl, exchanges.jsonl, manifests, task files) goes through here so
serialization is byte-stable: sorted keys, fixed separators, UTF-8, a
trailing newline, and floats written with Python's shortest round-trip repr.

Public API
----------
- dumps_stable(obj) -> str
- write_json(path, obj) -> Path
- read_json(path) -> Any
- append_jsonl(path, obj) -> None
- read_jsonl(path) -> list
- write_jsonl(path, objs) -> Path

Notes
-----
- `append_jsonl` flushes and fsyncs each line: logs are append-only and a
  crash leaves every completed line readable.
- A truncated trailing line (crash mid-write) is skipped with a warning on
  read instead of failing the whole file.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterable, List

from modules.core.types import StrPath
from modules.infra.logging import get_logger

_log = get_logger(__name__)

_append_lock = threading.Lock()

__all__ = [
      "dumps_stable"
    , "write_json"
    , "read_json"
    , "append_jsonl"
    , "read_jsonl"
    , "write_jsonl"
]


def dumps_stable(obj: Any, *, indent: int | None = None) -> str:
    """Deterministic JSON text (sorted keys, fixed separators)."""
    if indent is None:
        return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


def write_json(path: StrPath, obj: Any, *, indent: int = 2) -> Path:
    """Write `obj` as pretty, key-sorted JSON (atomic replace)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_stable(obj, indent=indent) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    _log.debug("write_json %s", path)
    return path


def read_json(path: StrPath) -> Any:
    path = Path(path)
    return json.loads(path.read_text(encoding="utf-8"))


def append_jsonl(path: StrPath, obj: Any) -> None:
    """Append one object as a single line; durable on return."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    line = dumps_stable(obj) + "\n"
    with _append_lock:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())


def write_jsonl(path: StrPath, objs: Iterable[Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(dumps_stable(obj) + "\n")
    return path


def read_jsonl(path: StrPath) -> List[Any]:
    """Read every complete line of a JSONL file (missing file → empty list)."""
    path = Path(path)
    if not path.is_file():
        return []
    out: List[Any] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            out.append(json.loads(raw))
        except json.JSONDecodeError:
            if lineno == len(lines):
                _log.warning("read_jsonl %s: skipping truncated last line %d", path, lineno)
                continue
            raise
    return out
