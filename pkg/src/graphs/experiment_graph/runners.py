"""Command table: one runner per CLI subcommand, each returning the reports of that run."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Sequence

from src.core.settings import AppSettings
from src.domain.environment import EnvironmentSpec
from src.domain.reports import ExperimentReport
from src.infra.spec_file import load_spec, save_spec
from src.infra.tree_dump import save_tree
from src.services import clusters, envspec, experiments
from src.services.experiments import RunContext

logger = logging.getLogger(__name__)

Runner = Callable[[EnvironmentSpec, Mapping[str, Any], AppSettings], List[ExperimentReport]]

BUILTIN_SPECS: Dict[str, Callable[[], EnvironmentSpec]] = {
    "sym2": lambda: envspec.calibrate_two_point(symmetric=True),
    "skew2": lambda: envspec.calibrate_two_point(symmetric=False),
    "gauss2": envspec.calibrate_lognormal,
    "flat": envspec.flat_spec,
}


def resolve_spec(source: str) -> EnvironmentSpec:
    """A builtin name (sym2, skew2, gauss2, flat) or the path of a spec file."""
    if source in BUILTIN_SPECS:
        return BUILTIN_SPECS[source]()
    return load_spec(Path(source))


def parse_offspring(raw: str) -> Dict[int, float]:
    out: Dict[int, float] = {}
    for part in raw.split(","):
        if part.strip():
            k, p = part.split(":", 1)
            out[int(k)] = float(p)
    return out


def _ctx(settings: AppSettings, name: str) -> RunContext:
    return RunContext.from_settings(settings, name)


def _get(args: Mapping[str, Any], key: str, default: Any) -> Any:
    value = args.get(key)
    return default if value is None else value


def run_calibrate(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    rep = experiments.calibrate_report(spec)
    target = args.get("save_spec")
    if target:
        rep.notes.append(f"spec saved to {save_spec(spec, target)}")
    return [rep]


def run_grow(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    depth = int(_get(args, "depth", 10))
    ctx = _ctx(settings, "grow")
    rep = experiments.grow_report(spec, depth, ctx)
    if args.get("dump_tree"):
        arena = experiments.grow_tree(spec, depth, ctx.path(0, 0), ctx.node_cap)
        path = save_tree(arena, Path(settings.out_dir) / f"tree_{spec.name}_d{depth}.txt")
        rep.notes.append(f"replica 0 tree dumped to {path}")
    return [rep]


def run_walk(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    return [
        experiments.walk_experiment(
            spec,
            _ctx(settings, "walk"),
            steps=int(_get(args, "steps", 10**6)),
            n_returns=args.get("returns"),
            generations=tuple(_get(args, "generations", (1, 2, 4, 8))),
            delta=float(_get(args, "delta", 0.2)),
        )
    ]


def run_kstar(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    return [
        experiments.kstar_experiment(
            spec,
            _get(args, "log_n", (6.0, 8.0, 10.0, 12.0)),
            _get(args, "zeta", (0.5, 1.0, 1.5)),
            _ctx(settings, "kstar"),
            epsilon=float(_get(args, "epsilon", 0.1)),
            phi_choice=_get(args, "phi", "log_n"),
            spine_samples=int(_get(args, "spine_samples", 20000)),
        )
    ]


def run_phase_scan(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    zetas = _get(args, "zeta", tuple(round(0.25 * i, 2) for i in range(1, 8)))
    return [
        experiments.phase_scan(
            spec,
            float(_get(args, "log_n", 12.0)),
            zetas,
            _ctx(settings, "phase_scan"),
            spine_samples=int(_get(args, "spine_samples", 100000)),
            walk_returns=int(_get(args, "walk_returns", 100)),
        )
    ]


def run_minvbar(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    ns = _get(args, "n", (27, 64, 125))
    ctx = _ctx(settings, "minvbar")
    reports = [
        experiments.minvbar_experiment(
            spec,
            ns,
            _get(args, "b", (0.5, 1.0, 1.5, 2.0, 2.5)),
            _get(args, "mu", (1.0, 2.0, 3.0)),
            ctx,
        )
    ]
    if args.get("compare"):
        schroeder = envspec.calibrate_two_point(offspring={1: 0.5, 3: 0.5})
        boettcher = envspec.calibrate_two_point(offspring={2: 0.5, 3: 0.5})
        reports.append(
            experiments.minvbar_tail_comparison(schroeder, boettcher, max(ns), _get(args, "mu", (1.0, 2.0, 3.0)), _ctx(settings, "minvbar_tails"))
        )
    return reports


def run_lefttail(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    q = parse_offspring(args["q"]) if args.get("q") else dict(spec.offspring)
    return [
        experiments.lefttail_experiment(
            q,
            _get(args, "n", (8, 12, 16, 20)),
            _get(args, "kappa", (0.1, 0.25, 0.4)),
            _ctx(settings, "lefttail"),
        )
    ]


def run_spine_check(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    return [
        experiments.spine_check(
            spec,
            _ctx(settings, "spine_check"),
            mto_samples=int(_get(args, "samples", 100000)),
            window_method=_get(args, "window_method", "grid"),
        )
    ]


def run_clusters(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    zeta = float(_get(args, "zeta", 0.5))
    epsilon = float(_get(args, "epsilon", 0.1))
    reports = [
        experiments.cut_plan_report(spec, _get(args, "log_n", (10.0, 20.0, 50.0, 100.0)), zeta, epsilon, float(_get(args, "delta", 0.25)))
    ]
    k_n, r_n, h_n = (int(x) for x in _get(args, "scaled", (3, 2, 2)))
    steps = int(_get(args, "steps", 10**6))
    plan = clusters.scaled_cut_plan(spec, k_n, r_n, h_n, s_n=float(r_n), log_n=math.log(steps), epsilon=epsilon, zeta=zeta)
    if plan.feasible:
        reports.append(experiments.regular_cuts_experiment(spec, plan, _ctx(settings, "regular_cuts")))
    else:
        logger.warning(f"⚠️ [runners] scaled plan infeasible: {plan.violations}")
    reports.append(
        experiments.witness_experiment(
            spec,
            steps,
            zeta,
            epsilon,
            _ctx(settings, "witness"),
            offset=_get(args, "offset", "R_n"),
            plan=plan if plan.feasible else None,
            m=float(_get(args, "m", 0.0)),
            q=float(_get(args, "q_threshold", 1.0)),
        )
    )
    if args.get("rn_steps"):
        reports.append(experiments.rn_experiment(spec, args["rn_steps"], _ctx(settings, "rn")))
    return reports


def run_exact_check(spec: EnvironmentSpec, args: Mapping[str, Any], settings: AppSettings) -> List[ExperimentReport]:
    reports = [
        experiments.exact_check(
            spec,
            _ctx(settings, "exact_check"),
            trees=int(_get(args, "trees", 100)),
            depth=int(_get(args, "depth", 8)),
            excursions=int(_get(args, "excursions", 100000)),
            walks=int(_get(args, "walks", 500)),
            ell=int(_get(args, "ell", 5)),
            n_returns=int(_get(args, "n_returns", 100)),
        )
    ]
    if args.get("miss_bound"):
        reports.append(
            experiments.miss_bound_experiment(
                spec,
                _get(args, "depths", (4, 6, 8)),
                _get(args, "returns_grid", (100.0, 1000.0)),
                _ctx(settings, "miss_bound"),
                walks=int(_get(args, "miss_walks", 100)),
                surrogate=bool(args.get("surrogate")),
                kappa=args.get("kappa"),
            )
        )
    if args.get("coverage"):
        reports.append(
            experiments.accessible_coverage(
                spec,
                float(_get(args, "log_n", 8.0)),
                float(_get(args, "epsilon", 0.1)),
                int(_get(args, "ell", 5)),
                _ctx(settings, "coverage"),
            )
        )
    return reports


RUNNERS: Dict[str, Runner] = {
    "calibrate": run_calibrate,
    "grow": run_grow,
    "walk": run_walk,
    "kstar": run_kstar,
    "phase-scan": run_phase_scan,
    "minvbar": run_minvbar,
    "lefttail": run_lefttail,
    "spine-check": run_spine_check,
    "clusters": run_clusters,
    "exact-check": run_exact_check,
}


def commands() -> Sequence[str]:
    return tuple(RUNNERS)
