from __future__ import annotations

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from pydantic import ValidationError

from src.core.errors import RwreError
from src.core.logging_config import setup_logging_from_settings
from src.core.settings import AppSettings, load_settings
from src.graphs.experiment_graph.graph import run_pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED_VERDICT = 1
EXIT_ERROR = 2

# flags that only feed AppSettings
SETTINGS_FLAGS = {"config": "config_path", "seed": "master_seed", "replicas": "replicas", "threads": "threads", "out": "out_dir", "format": "output_format", "executor": "executor"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="builtin spec (sym2, skew2, gauss2, flat) or spec file path")
    p.add_argument("--config", help="spec file used when --spec is absent")
    p.add_argument("--seed", type=int, help="master seed (u64)")
    p.add_argument("--replicas", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--executor", choices=("thread", "process"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "jsonl"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwre", description="Random walks in random environment on Galton-Watson trees")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="analytics of a spec and calibration check")
    _common(p)
    p.add_argument("--save-spec", dest="save_spec", help="write the spec file here")

    p = sub.add_parser("grow", help="generation statistics of grown trees")
    _common(p)
    p.add_argument("--depth", type=int)
    p.add_argument("--dump-tree", dest="dump_tree", action="store_true")

    p = sub.add_parser("walk", help="trajectory summaries")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--returns", type=int, help="run until this many returns instead of a step count")
    p.add_argument("--generations", type=int, nargs="+")
    p.add_argument("--delta", type=float)

    p = sub.add_parser("kstar", help="accessible points K*_Phi(ell)")
    _common(p)
    p.add_argument("--log-n", dest="log_n", type=float, nargs="+")
    p.add_argument("--zeta", type=float, nargs="+")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--phi", choices=("log_n", "lower"))
    p.add_argument("--spine-samples", dest="spine_samples", type=int)

    p = sub.add_parser("phase-scan", help="E[K_n(ell)] across zeta")
    _common(p)
    p.add_argument("--log-n", dest="log_n", type=float)
    p.add_argument("--zeta", type=float, nargs="+")
    p.add_argument("--spine-samples", dest="spine_samples", type=int)
    p.add_argument("--walk-returns", dest="walk_returns", type=int)

    p = sub.add_parser("minvbar", help="min over a generation of Vbar")
    _common(p)
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--b", type=float, nargs="+")
    p.add_argument("--mu", type=float, nargs="+")
    p.add_argument("--compare", action="store_true", help="also compare Schroeder and Boettcher upper tails")

    p = sub.add_parser("lefttail", help="left tail of Z_n")
    _common(p)
    p.add_argument("--q", help="offspring law as k:p pairs, e.g. 1:0.5,3:0.5")
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--kappa", type=float, nargs="+")

    p = sub.add_parser("spine-check", help="many-to-one, ballot, window, passage and excursion checks")
    _common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--window-method", dest="window_method", choices=("mc", "grid"))

    p = sub.add_parser("clusters", help="regular cuts, witnesses and R_n")
    _common(p)
    p.add_argument("--log-n", dest="log_n", type=float, nargs="+")
    p.add_argument("--zeta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--scaled", type=int, nargs=3, metavar=("K", "R", "H"))
    p.add_argument("--steps", type=int)
    p.add_argument("--offset", choices=("R_n", "gamma"))
    p.add_argument("--m", type=float)
    p.add_argument("--q-threshold", dest="q_threshold", type=float)
    p.add_argument("--rn-steps", dest="rn_steps", type=int, nargs="+")

    p = sub.add_parser("exact-check", help="hitting formulas, quenched means and miss bounds")
    _common(p)
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--excursions", type=int)
    p.add_argument("--walks", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--n-returns", dest="n_returns", type=int)
    p.add_argument("--miss-bound", dest="miss_bound", action="store_true")
    p.add_argument("--depths", type=int, nargs="+")
    p.add_argument("--returns-grid", dest="returns_grid", type=float, nargs="+", help="n values; N = n, or ceil(n^kappa) with --kappa")
    p.add_argument("--kappa", type=float, nargs="+")
    p.add_argument("--miss-walks", dest="miss_walks", type=int, help="quenched walks per test tree")
    p.add_argument("--surrogate", action="store_true")
    p.add_argument("--coverage", action="store_true")
    p.add_argument("--log-n", dest="log_n", type=float)
    p.add_argument("--epsilon", type=float)
    return parser


def split_arguments(ns: argparse.Namespace) -> tuple[Dict[str, Any], Dict[str, Any]]:
    """(settings overrides, experiment arguments)"""
    raw = {k: v for k, v in vars(ns).items() if k != "command"}
    overrides = {SETTINGS_FLAGS[k]: raw.pop(k) for k in list(raw) if k in SETTINGS_FLAGS}
    return overrides, raw


def main(argv: Optional[Sequence[str]] = None, settings: Optional[AppSettings] = None) -> int:
    ns = build_parser().parse_args(argv)
    overrides, arguments = split_arguments(ns)
    try:
        settings = (settings or load_settings()).with_overrides(**overrides)
    except ValidationError as e:
        print(f"❌ [cli] invalid settings: {e}", file=sys.stderr)
        return EXIT_ERROR
    setup_logging_from_settings(settings)
    logger.info(f"🚀 [cli] {ns.command} seed={settings.master_seed} replicas={settings.replicas} out={settings.out_dir}")
    try:
        result = run_pipeline(settings, ns.command, arguments)
    except RwreError as e:
        logger.error(f"❌ [cli] {type(e).__name__}: {e}")
        return EXIT_ERROR
    if result.get("error"):
        logger.error(f"❌ [cli] {result.get('error_type')}: {result['error']}")
        return EXIT_ERROR
    if result.get("manifest_path"):
        logger.info(f"💾 [cli] manifest: {result['manifest_path']}")
    return EXIT_OK if result.get("passed", True) else EXIT_FAILED_VERDICT


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
