#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
验收套件脚本

Runs the desk-scale checks one after another, each into its own output directory,
and prints the exit code of every step.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

# 添加项目根目录到路径
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.cli.main import main as cli_main
from src.core.settings import load_settings


def _env(key: str, default: str = "") -> str:
    v = os.getenv(key, default)
    return "" if v is None else str(v)


def _env_int(key: str, default: int) -> int:
    raw = os.getenv(key)
    if raw is None or raw.strip() == "":
        return default
    return int(raw)


STEPS = [
    ["calibrate", "--spec", "sym2"],
    ["calibrate", "--spec", "skew2"],
    ["calibrate", "--spec", "gauss2"],
    ["exact-check", "--spec", "sym2", "--trees", "100", "--depth", "8"],
    ["exact-check", "--spec", "sym2", "--miss-bound", "--returns-grid", "10", "--kappa", "2", "3"],
    ["spine-check", "--spec", "sym2"],
    ["spine-check", "--spec", "gauss2"],
    ["lefttail", "--q", "1:0.5,3:0.5"],
    ["kstar", "--spec", "sym2", "--log-n", "6", "8", "10", "--zeta", "0.5", "1.5"],
    ["phase-scan", "--spec", "sym2", "--log-n", "12"],
    ["clusters", "--spec", "sym2"],
]


def main() -> None:
    out_root = Path(_env("SUITE_OUT", "out/suite"))
    seed = _env_int("SUITE_SEED", 20240611)
    settings = load_settings()
    results = {}
    for i, step in enumerate(STEPS):
        tag = f"{i:02d}_{step[0]}_{step[step.index('--spec') + 1] if '--spec' in step else 'q'}"
        argv = step + ["--seed", str(seed), "--out", str(out_root / tag)]
        print(f"🚀 [suite] {' '.join(argv)}")
        results[tag] = cli_main(argv, settings=settings)
    print(json.dumps(results, ensure_ascii=False, indent=2))
    sys.exit(max(results.values()) if results else 0)


if __name__ == "__main__":
    main()
