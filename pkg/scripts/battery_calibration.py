#!/usr/bin/env python3
# scripts/battery_calibration.py
# -*- coding: utf-8 -*-
"""
Thin executable wrapper around modules.app.cli.main.

    python scripts/battery_calibration.py gen-bench --out bench --n 20 --seed 7
    python scripts/battery_calibration.py run-suite --manifest bench --proposer bo --parallel 4 --out results/bo
    python scripts/battery_calibration.py evaluate --results results/bo results/llm --manifest bench
"""

from __future__ import annotations

import sys
from pathlib import Path

# ───────────────────── path bootstrap (scripts → repo root) ────────────────────
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from modules.app.cli import main  # noqa: E402

if __name__ == "__main__":
    raise SystemExit(main())
