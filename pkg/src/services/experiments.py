from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import EllipticityRequiredError, RegimeViolationError, UnboundedFunctionalError
from src.core.rng import SeedPath
from src.core.settings import AppSettings
from src.domain.environment import DiscreteWeights, EnvironmentSpec
from src.domain.reports import Estimate, ExperimentReport
from src.services import clusters, envspec, exact, spine
from src.services.pool import fan_out
from src.services.tree import TreeArena, exact_generation_law, sample_generation_sizes
from src.services.walker import (
    WalkState,
    K_of,
    fully_visited_generations,
    run_steps,
    run_until_returns,
    summarize,
)
from src.utils.stats import Moments, linear_fit, mean_stderr, proportion, ratio, within_sigma

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# run context
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunContext:
    """Seeds, replica count, pool and caps shared by every experiment of one run."""

    seed: SeedPath
    replicas: int = 100
    threads: int = 1
    executor: Literal["thread", "process"] = "thread"
    node_cap: int = 10**8
    step_cap: int = 10**8
    r_cap: int = 200
    censor_warn_rate: float = 0.2

    @classmethod
    def from_settings(cls, settings: AppSettings, experiment: str) -> "RunContext":
        return cls(
            seed=SeedPath(settings.master_seed, experiment),
            replicas=settings.replicas,
            threads=settings.threads,
            executor=settings.executor,
            node_cap=settings.node_cap,
            step_cap=settings.step_cap,
            r_cap=settings.r_cap,
            censor_warn_rate=settings.censor_warn_rate,
        )

    def path(self, point: int, replica: int) -> SeedPath:
        return self.seed.at(point=point, replica=replica)

    def map(self, fn: Callable[[Any], Any], tasks: Sequence[Any], label: str) -> List[Any]:
        return fan_out(fn, tasks, threads=self.threads, executor=self.executor, label=label)


def _report(name: str, spec_name: str, ctx: RunContext, grid: Mapping[str, Sequence[Any]]) -> ExperimentReport:
    rep = ExperimentReport(experiment=name, spec=spec_name, grid={k: list(v) for k, v in grid.items()})
    rep.seeds = {"master": int(ctx.seed.master), "replicas": int(ctx.replicas)}
    return rep


def _add(
    report: ExperimentReport,
    check: str,
    params: Mapping[str, Any],
    estimate: float,
    stderr: float = 0.0,
    samples: int = 0,
    prediction: Optional[float] = None,
    seed: Optional[int] = None,
    flags: Sequence[str] = (),
) -> Estimate:
    e = Estimate(
        check=check,
        params=dict(params),
        estimate=float(estimate),
        stderr=float(stderr),
        samples=int(samples),
        prediction=None if prediction is None else float(prediction),
        ratio=ratio(estimate, prediction),
        seed=seed,
        flags=list(flags),
    )
    report.estimates.append(e)
    return e


def _censor_flags(report: ExperimentReport, censored: int, total: int, ctx: RunContext) -> List[str]:
    report.censored += censored
    if total and censored / total > ctx.censor_warn_rate:
        logger.warning(f"⚠️ [experiment] {report.experiment}: {censored}/{total} replicas censored")
        return ["degraded"]
    return []


def ell_for(log_n: float, zeta: float) -> int:
    """ell = (log n)^{1+zeta}, rounded, at least 1."""
    return max(1, int(round(log_n ** (1.0 + zeta))))


def _new_arena(spec: EnvironmentSpec, seed: SeedPath, node_cap: int) -> TreeArena:
    return TreeArena(spec, seed.generator("tree"), node_cap=node_cap)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def calibrate_report(spec: EnvironmentSpec) -> ExperimentReport:
    """Analytics table plus the calibration-exactness rule."""
    rep = ExperimentReport(experiment="calibrate", spec=spec.name)
    summ = envspec.summary(spec)
    for key, value in summ.items():
        _add(rep, key, {}, value)
    an = envspec.analytics_for(spec)
    if spec.calibrated:
        p1, d1 = summ["psi(1)"], summ["psi'(1)"]
        ok = abs(p1) < 1e-10 and abs(d1) < 1e-10
        detail = f"psi(1)={p1:.3g}, psi'(1)={d1:.3g}"
        if spec.kind == "lognormal":
            s2 = spec.weights.s2  # type: ignore[union-attr]
            lam_zero = all(abs(c) < 1e-6 for c in an.lambda_coeffs)
            gt = an.gamma_tilde if an.gamma_tilde is not None else math.nan
            ok = ok and abs(an.sigma2 - s2) < 1e-6 and lam_zero and abs(gt - 2.0 * s2) < 1e-6
            detail += f", sigma2={an.sigma2:.9g} (closed {s2:.9g}), gamma~={gt:.9g} (closed {2 * s2:.9g})"
        rep.add_verdict("calibration_exact", ok, detail)
    logger.info(f"🧪 [experiment] calibrate {spec.name}: {len(summ)} quantities")
    return rep


# ---------------------------------------------------------------------------
# grown trees and walk summaries
# ---------------------------------------------------------------------------


def grow_tree(spec: EnvironmentSpec, depth: int, seed: SeedPath, node_cap: int = 10**8) -> TreeArena:
    """Generations 0..depth of one survival-conditioned tree."""
    return _grown(spec, seed, depth, node_cap)


def _grow_task(task: Tuple[EnvironmentSpec, SeedPath, int, int]) -> Dict[str, Any]:
    spec, seed, depth, node_cap = task
    arena = _grown(spec, seed, depth, node_cap)
    stats = [arena.generation_stats(k) for k in range(1, depth + 1)]
    return {
        "seed": seed.seed_id("tree"),
        "resamples": arena.survival_resamples,
        "nodes": len(arena),
        "stats": [(s.k, s.Z, s.W, s.min_vbar, s.max_vbar) for s in stats],
    }


def grow_report(spec: EnvironmentSpec, depth: int, ctx: RunContext) -> ExperimentReport:
    """Z_k, W_k = Z_k e^{-psi(0) k} and the range of Vbar per generation, one tree per replica."""
    rep = _report("grow", spec.name, ctx, {"depth": [depth]})
    runs = ctx.map(_grow_task, [(spec, ctx.path(0, r), depth, ctx.node_cap) for r in range(ctx.replicas)], label="grow")
    rep.resamples = sum(r["resamples"] for r in runs)
    if rep.resamples:
        logger.warning(f"⚠️ [experiment] grow {spec.name}: {rep.resamples} extinct trees resampled")
    for k in range(1, depth + 1):
        w, se = mean_stderr([r["stats"][k - 1][2] for r in runs])
        _add(rep, "W_k", {"k": k}, w, se, len(runs), prediction=1.0 if spec.offspring[0][0] >= 1 else None)
        lo, lo_se = mean_stderr([r["stats"][k - 1][3] for r in runs])
        _add(rep, "min_Vbar", {"k": k}, lo, lo_se, len(runs))
    rep.records = [
        {"replica": i, "seed": r["seed"], "k": k, "Z": z, "W": w, "min_Vbar": lo, "max_Vbar": hi}
        for i, r in enumerate(runs)
        for k, z, w, lo, hi in r["stats"]
    ]
    return rep


@dataclass(frozen=True)
class _WalkTask:
    spec: EnvironmentSpec
    seed: SeedPath
    steps: int
    n_returns: Optional[int]
    generations: Tuple[int, ...]
    step_cap: int
    node_cap: int
    r_cap: int


def _walk_task(task: _WalkTask) -> Dict[str, Any]:
    arena = _new_arena(task.spec, task.seed, task.node_cap)
    walk = WalkState()
    rnd = task.seed.py_random("walk")
    if task.n_returns:
        run_until_returns(walk, arena, rnd, task.n_returns, task.step_cap)
    else:
        run_steps(walk, arena, rnd, task.steps)
    summary = summarize(walk, arena, task.seed.seed_id("walk"), task.generations, task.n_returns, task.r_cap)
    return summary.model_dump()


def walk_experiment(
    spec: EnvironmentSpec,
    ctx: RunContext,
    steps: int = 10**6,
    n_returns: Optional[int] = None,
    generations: Sequence[int] = (1, 2, 4, 8),
    delta: float = 0.2,
) -> ExperimentReport:
    """
    One trajectory summary per replica, run for `steps` steps or until `n_returns` returns.
    Rules: local time at the root above n^{1-delta} in 95% of replicas, completed excursions
    when running by returns.
    """
    rep = _report("walk", spec.name, ctx, {"steps": [steps], "generations": generations})
    tasks = [
        _WalkTask(spec, ctx.path(0, r), steps, n_returns, tuple(generations), ctx.step_cap, ctx.node_cap, ctx.r_cap)
        for r in range(ctx.replicas)
    ]
    runs = ctx.map(_walk_task, tasks, label="walk")
    censored = sum(1 for r in runs if r["censored"])
    flags = _censor_flags(rep, censored, len(runs), ctx)
    if n_returns:
        rep.add_verdict("walker.recurrence", censored == 0, f"{censored}/{len(runs)} runs hit the step cap")
    else:
        n = steps
        above = sum(1 for r in runs if r["root_local_time"] >= n ** (1.0 - delta))
        p, se = proportion(above, len(runs))
        _add(rep, "root_local_time_above", {"steps": n, "delta": delta}, p, se, len(runs), flags=flags)
        rep.add_verdict("walker.root_local_time", p >= 0.95, f"{above}/{len(runs)} replicas with L(root, n) >= n^(1-{delta})")
        x, xse = mean_stderr([r["Xstar"] / math.log(n) ** 3 for r in runs])
        _add(rep, "Xstar_over_log3", {"steps": n}, x, xse, len(runs))
        rr = np.asarray([r["R"] / math.log(n) for r in runs if r["R"] is not None])
        if rr.size:
            an = envspec.analytics_for(spec)
            pred = 1.0 / an.gamma_tilde if an.gamma_tilde else None
            _add(rep, "R_over_log_n_median", {"steps": n}, float(np.median(rr)), 0.0, int(rr.size), prediction=pred)
    for m in generations:
        ms = [r["M"].get(m, 0) for r in runs if r["M"]]
        if ms:
            v, s = mean_stderr(ms)
            _add(rep, "M_mean", {"m": m}, v, s, len(ms), flags=flags)
    rep.records = runs
    return rep


# ---------------------------------------------------------------------------
# accessible points K*
# ---------------------------------------------------------------------------


def _kstar_task(task: Tuple[EnvironmentSpec, SeedPath, int, float, int]) -> Tuple[int, int, int]:
    spec, seed, ell, phi, node_cap = task
    arena = _new_arena(spec, seed, node_cap)
    while True:
        count = arena.accessible_count(phi, ell, grow=True)
        # trees that die before ell are redrawn
        if count > 0 or not arena.condition_on_survival or arena.survives_to(ell):
            return count, seed.seed_id("tree"), arena.survival_resamples
        arena.resample(f"extinct before generation {ell}")


def kstar_experiment(
    spec: EnvironmentSpec,
    log_n_grid: Sequence[float],
    zeta_grid: Sequence[float],
    ctx: RunContext,
    epsilon: float = 0.1,
    phi_choice: Literal["log_n", "lower"] = "log_n",
    spine_samples: int = 20000,
) -> ExperimentReport:
    """
    log K*_Phi(ell)/Phi per replica against the bracket [(psi(0)/gamma~)(1 - eps), 1 + eps], and the
    mean of K* against e^{Phi f(Phi/ell)} (1/ell for zeta < 1, Phi ell^{-3/2} beyond).
    Phi is log n or (1 - eps) log n.
    """
    an = envspec.analytics_for(spec)
    floor = an.psi0 / an.gamma_tilde * (1.0 - epsilon) if an.gamma_tilde else math.nan
    rep = _report("kstar", spec.name, ctx, {"log_n": log_n_grid, "zeta": zeta_grid})
    rep.notes.append(f"lower bracket (psi(0)/gamma~)(1-eps) = {floor:.6g}")
    points = [(ln, z) for ln in log_n_grid for z in zeta_grid]
    tasks = []
    for pi, (ln, z) in enumerate(points):
        phi = ln if phi_choice == "log_n" else (1.0 - epsilon) * ln
        for r in range(ctx.replicas):
            tasks.append((spec, ctx.path(pi, r), ell_for(ln, z), phi, ctx.node_cap))
    results = ctx.map(_kstar_task, tasks, label="kstar")
    rep.resamples = sum(r for _, _, r in results)
    if rep.resamples:
        logger.warning(f"⚠️ [experiment] kstar {spec.name}: {rep.resamples} extinct trees resampled")

    shape: Dict[float, List[Tuple[float, float]]] = {}
    bracket_ok = True
    for pi, (ln, z) in enumerate(points):
        phi = ln if phi_choice == "log_n" else (1.0 - epsilon) * ln
        ell = ell_for(ln, z)
        counts = [c for c, _, _ in results[pi * ctx.replicas : (pi + 1) * ctx.replicas]]
        params = {"log_n": ln, "zeta": z, "ell": ell, "phi": phi}
        logs = np.asarray([math.log(c) / phi if c > 0 else -math.inf for c in counts])
        inside = int(np.sum((logs >= floor) & (logs <= 1.0 + epsilon)))
        p, se = proportion(inside, len(counts))
        _add(rep, "bracket_fraction", params, p, se, len(counts))
        median = float(np.median(logs))
        _add(rep, "log_kstar_over_phi_median", params, median, 0.0, len(counts), prediction=floor)
        bracket_ok &= median >= floor
        m, s = mean_stderr(counts)
        pred = spine.accessible_prediction(spec, ell, phi)["short" if z < 1.0 else "long"]
        _add(rep, "kstar_mean_tree", params, m, s, len(counts), prediction=pred)
        sp = spine.accessible_expectation(spec, ell, phi, spine_samples, ctx.path(pi, 0).generator("spine"))
        _add(rep, "kstar_mean_spine", params, sp.estimate, sp.stderr, sp.samples, prediction=pred)
        if sp.estimate > 0.0:
            y = math.log(sp.estimate) - phi * an.f_any(phi / ell)
            if z >= 1.0:
                y -= math.log(phi)
            shape.setdefault(z, []).append((math.log(ell), y))
    rep.add_verdict("kstar.lower_bracket", bracket_ok, f"median log K*/Phi >= {floor:.4g} at every point")
    for z, pts in sorted(shape.items()):
        if len(pts) < 2:
            continue
        fit = linear_fit([p[0] for p in pts], [p[1] for p in pts])
        target = -1.0 if z < 1.0 else -1.5
        _add(rep, "mean_shape_slope", {"zeta": z}, fit.slope, fit.stderr, fit.points, prediction=target)
        rep.add_verdict(f"kstar.mean_shape[zeta={z:g}]", abs(fit.slope - target) <= 0.4, f"slope {fit.slope:.3f} vs {target}")
    logger.info(f"📊 [experiment] kstar {spec.name}: {len(points)} points x {ctx.replicas} replicas")
    return rep


# ---------------------------------------------------------------------------
# phase transition of E[K_n(ell)]
# ---------------------------------------------------------------------------


def phase_prediction(spec: EnvironmentSpec, log_n: float, zeta: float) -> float:
    """e^{log n f((log n)^{-zeta})} / (log n)^{(1 + zeta~)/2}, zeta~ = 1 below 1 and zeta above."""
    an = envspec.analytics_for(spec)
    zt = 1.0 if zeta < 1.0 else zeta
    return math.exp(log_n * an.f_any(log_n ** (-zeta))) / log_n ** ((1.0 + zt) / 2.0)


@dataclass(frozen=True)
class _PhaseWalkTask:
    spec: EnvironmentSpec
    seed: SeedPath
    n_returns: int
    ells: Tuple[int, ...]
    step_cap: int
    node_cap: int
    exact_budget: float


def _phase_walk_task(task: _PhaseWalkTask) -> Dict[str, Any]:
    arena = _new_arena(task.spec, task.seed, task.node_cap)
    walk = run_until_returns(WalkState(), arena, task.seed.py_random("walk"), task.n_returns, task.step_cap)
    out: Dict[str, Any] = {"seed": task.seed.seed_id("walk"), "censored": walk.censored, "steps": walk.steps}
    K: Dict[int, Optional[int]] = {}
    Q: Dict[int, Optional[float]] = {}
    for ell in task.ells:
        K[ell] = None if walk.censored else K_of(walk, ell, task.n_returns)
        if task.spec.mean_offspring**ell <= task.exact_budget:
            arena.complete_to_depth(ell)
            Q[ell] = exact.quenched_mean_K(arena, task.n_returns, ell)
        else:
            Q[ell] = None
    out["K"], out["Q"] = K, Q
    return out


def phase_scan(
    spec: EnvironmentSpec,
    log_n: float,
    zeta_grid: Sequence[float],
    ctx: RunContext,
    spine_samples: int = 100000,
    walk_returns: int = 100,
    exact_budget: float = 2e5,
) -> ExperimentReport:
    """
    N_zeta = E[K_n(ell)], ell = (log n)^{1+zeta}.

    The large-n curve at effective log n integrates the exact quenched kernel along the spine.
    Walker replicas at n = walk_returns returns carry moderate n; on the same trees the exact
    quenched mean is evaluated wherever generation ell fits in exact_budget vertices.
    """
    rep = _report("phase_scan", spec.name, ctx, {"zeta": zeta_grid, "log_n": [log_n]})
    rep.notes.append("desk scale: the large-n curve uses the spine with the exact quenched kernel")
    curve: List[Tuple[float, float, float]] = []
    for zi, z in enumerate(zeta_grid):
        ell = ell_for(log_n, z)
        est = spine.annealed_mean_K(spec, ell, log_n, spine_samples, ctx.path(zi, 0).generator("spine"))
        pred = phase_prediction(spec, log_n, z)
        _add(rep, "N_zeta_kernel", {"zeta": z, "ell": ell, "log_n": log_n}, est.estimate, est.stderr, est.samples, pred)
        curve.append((z, est.estimate, est.stderr))

    if curve:
        zbest = max(curve, key=lambda c: c[1])[0]
        rep.add_verdict("phase.argmax", 0.7 <= zbest <= 1.3, f"argmax zeta = {zbest}")
        ok = True
        for (z0, v0, _), (z1, v1, _) in zip(curve, curve[1:]):
            if z1 <= 1.0:
                ok &= v1 > v0
            elif z0 >= 1.0:
                ok &= v1 < v0
        rep.add_verdict("phase.direction", ok, "increasing up to zeta = 1, decreasing beyond")

    log_w = math.log(walk_returns)
    ells = tuple(sorted({ell_for(log_w, z) for z in zeta_grid}))
    tasks = [
        _PhaseWalkTask(spec, ctx.path(0, r), walk_returns, ells, ctx.step_cap, ctx.node_cap, exact_budget)
        for r in range(ctx.replicas)
    ]
    runs = ctx.map(_phase_walk_task, tasks, label="phase_scan walks")
    censored = sum(1 for r in runs if r["censored"])
    flags = _censor_flags(rep, censored, len(runs), ctx)
    agree = True
    for zi, z in enumerate(zeta_grid):
        ell = ell_for(log_w, z)
        params = {"zeta": z, "ell": ell, "n_returns": walk_returns}
        ks = [r["K"][ell] for r in runs if r["K"][ell] is not None]
        km, ks_se = mean_stderr(ks) if ks else (math.nan, math.nan)
        kern = spine.annealed_mean_K(spec, ell, log_w, spine_samples, ctx.path(zi, 1).generator("spine"))
        _add(rep, "N_zeta_walker", params, km, ks_se, len(ks), prediction=kern.estimate, flags=flags)
        _add(rep, "N_zeta_kernel_walk_scale", params, kern.estimate, kern.stderr, kern.samples)
        if ks:
            agree &= within_sigma(km, ks_se, kern.estimate, kern.stderr)
        paired = [r["K"][ell] - r["Q"][ell] for r in runs if r["K"][ell] is not None and r["Q"][ell] is not None]
        if paired:
            qs = [r["Q"][ell] for r in runs if r["Q"][ell] is not None]
            qm, qse = mean_stderr(qs)
            _add(rep, "N_zeta_exact_quenched", params, qm, qse, len(qs))
            dm, dse = mean_stderr(paired)
            _add(rep, "walker_minus_exact", params, dm, dse, len(paired), prediction=0.0)
            agree &= within_sigma(dm, dse, 0.0)
    rep.add_verdict("phase.walker_vs_exact", agree, "walker means within 3 combined stderr of exact evaluations")
    rep.records = [{"replica": i, **r, "K": dict(r["K"]), "Q": dict(r["Q"])} for i, r in enumerate(runs)]
    logger.info(f"📊 [experiment] phase_scan {spec.name}: {len(zeta_grid)} zeta values, {censored} censored walks")
    return rep


# ---------------------------------------------------------------------------
# minimal barrier min_{|z|=n} Vbar(z)
# ---------------------------------------------------------------------------


def _minvbar_task(task: Tuple[EnvironmentSpec, SeedPath, Tuple[int, ...], int]) -> Dict[int, float]:
    spec, seed, ns, node_cap = task
    arena = TreeArena(spec, seed.generator("tree"), node_cap=node_cap, condition_on_survival=False)
    return {n: arena.min_vbar(n)[0] for n in ns}


def _min_vbar_samples(spec: EnvironmentSpec, ns: Sequence[int], ctx: RunContext, point: int) -> List[Dict[int, float]]:
    tasks = [(spec, ctx.path(point, r), tuple(ns), ctx.node_cap) for r in range(ctx.replicas)]
    return ctx.map(_minvbar_task, tasks, label=f"minvbar {spec.name}")


def minvbar_experiment(
    spec: EnvironmentSpec,
    n_grid: Sequence[int],
    b_grid: Sequence[float],
    mu_grid: Sequence[float],
    ctx: RunContext,
    min_hits: int = 5,
) -> ExperimentReport:
    """
    (1/a_n) log P(min Vbar <= b a_n) over b with a_n = n^{1/3}, its slope in b, and the upper tail
    P(min Vbar > mu a_n). Extinct trees are left out of both.
    """
    rep = _report("minvbar", spec.name, ctx, {"n": n_grid, "b": b_grid, "mu": mu_grid})
    samples = _min_vbar_samples(spec, n_grid, ctx, 0)
    monotone = True
    last_slope: Optional[float] = None
    for n in n_grid:
        a_n = n ** (1.0 / 3.0)
        vals = np.asarray([s[n] for s in samples])
        alive = vals[np.isfinite(vals)]
        extinct = int(vals.size - alive.size)
        rep.resamples += extinct
        prev = -1.0
        pts: List[Tuple[float, float]] = []
        for b in b_grid:
            hits = int(np.sum(alive <= b * a_n))
            p, se = proportion(hits, alive.size)
            flags = ["censored"] if hits < min_hits else []
            monotone &= p >= prev
            prev = p
            lp = math.log(p) / a_n if p > 0 else -math.inf
            lse = se / (p * a_n) if p > 0 else math.inf
            _add(rep, "log_p_below_over_an", {"n": n, "b": b, "a_n": a_n}, lp, lse, alive.size, flags=flags)
            if hits >= min_hits and p < 0.9:
                pts.append((b, lp))
        for mu in mu_grid:
            p, se = proportion(int(np.sum(alive > mu * a_n)), alive.size)
            _add(rep, "p_above", {"n": n, "mu": mu, "a_n": a_n}, p, se, alive.size)
        if len(pts) >= 2:
            fit = linear_fit([p[0] for p in pts], [p[1] for p in pts])
            _add(rep, "slope_in_b", {"n": n}, fit.slope, fit.stderr, fit.points, prediction=1.0)
            last_slope = fit.slope
    rep.add_verdict("minvbar.monotone_in_b", monotone, "P(min Vbar <= b a_n) non-decreasing in b")
    if last_slope is not None:
        rep.add_verdict("minvbar.slope", abs(last_slope - 1.0) <= 0.3, f"slope {last_slope:.3f} at the largest n")
    logger.info(f"📊 [experiment] minvbar {spec.name}: n in {list(n_grid)}")
    return rep


def minvbar_tail_comparison(
    schroeder: EnvironmentSpec,
    boettcher: EnvironmentSpec,
    n: int,
    mu_grid: Sequence[float],
    ctx: RunContext,
) -> ExperimentReport:
    """Upper tail P(min Vbar > mu a_n) of a Boettcher spec against a Schroeder spec at the same n."""
    if schroeder.schroeder is False or boettcher.schroeder:
        raise ValueError("need a Schroeder spec and a Boettcher spec, in that order")
    rep = _report("minvbar_tails", f"{schroeder.name}|{boettcher.name}", ctx, {"n": [n], "mu": mu_grid})
    a_n = n ** (1.0 / 3.0)
    tails: Dict[str, List[float]] = {}
    for point, spec in enumerate((schroeder, boettcher)):
        vals = np.asarray([s[n] for s in _min_vbar_samples(spec, [n], ctx, point)])
        alive = vals[np.isfinite(vals)]
        tails[spec.name] = []
        for mu in mu_grid:
            p, se = proportion(int(np.sum(alive > mu * a_n)), alive.size)
            _add(rep, "p_above", {"spec": spec.name, "n": n, "mu": mu}, p, se, alive.size)
            tails[spec.name].append(p)
    faster = all(
        pb <= ps for ps, pb in zip(tails[schroeder.name], tails[boettcher.name]) if ps > 0.0
    )
    rep.add_verdict("minvbar.boettcher_faster", faster, "Boettcher upper tail below the Schroeder one at each mu")
    return rep


# ---------------------------------------------------------------------------
# left tail of Z_n
# ---------------------------------------------------------------------------


def lefttail_experiment(
    offspring: Mapping[int, float],
    n_grid: Sequence[int],
    kappa_grid: Sequence[float],
    ctx: RunContext,
    exact_max_n: int = 20,
    cap: int = 4096,
) -> ExperimentReport:
    """
    -log P(Z_n <= e^{kappa psi(0) n}) regressed on psi(0)(1 - kappa) n. Small n use the exact pgf
    composition, larger n Monte Carlo generation sizes.
    """
    q = tuple(sorted((int(k), float(p)) for k, p in offspring.items()))
    mean = math.fsum(k * p for k, p in q)
    psi0 = math.log(mean)
    q0 = dict(q).get(0, 0.0)
    q1 = dict(q).get(1, 0.0)
    name = "q=" + ",".join(f"{k}:{p:g}" for k, p in q)
    rep = _report("lefttail", name, ctx, {"n": n_grid, "kappa": kappa_grid})
    xs: List[float] = []
    ys: List[float] = []
    anchor_ok = True
    mc_sizes: Optional[np.ndarray] = None
    top = max(n_grid)
    for n in n_grid:
        law = exact_generation_law(q, n, cap=cap) if n <= exact_max_n else None
        if law is not None and q0 == 0.0:
            anchor = float(law[1])
            want = q1**n
            ok = abs(anchor - want) <= 1e-12 * max(want, 1e-300)
            anchor_ok &= ok
            _add(rep, "P(Z_n=1)", {"n": n}, anchor, 0.0, 0, prediction=want, flags=[] if ok else ["mismatch"])
        for kappa in kappa_grid:
            thr = math.exp(kappa * psi0 * n)
            params = {"n": n, "kappa": kappa, "threshold": thr}
            if law is not None and thr <= cap:
                p, se, count, method = float(np.sum(law[: int(math.floor(thr)) + 1])), 0.0, 0, "exact"
                if q0 > 0.0:
                    p -= float(law[0])
            else:
                if mc_sizes is None:
                    mc_sizes = sample_generation_sizes(q, top, ctx.path(0, 0).generator("mc"), size=ctx.replicas)
                zn = mc_sizes[:, n - 1]
                zn = zn[zn > 0]
                hits = int(np.sum(zn <= thr))
                p, se = proportion(hits, zn.size)
                count, method = int(zn.size), "mc"
            flags = [method] + (["censored"] if p <= 0.0 else [])
            _add(rep, "P(Z_n<=threshold)", params, p, se, count, flags=flags)
            if p > 0.0:
                xs.append(psi0 * (1.0 - kappa) * n)
                ys.append(-math.log(p))
    if q0 == 0.0 and any(n <= exact_max_n for n in n_grid):
        rep.add_verdict("lefttail.anchor", anchor_ok, "P(Z_n = 1) = q1^n by pgf composition")
    if len(xs) >= 2:
        fit = linear_fit(xs, ys)
        nu_pred = -math.log(q1) / psi0 if q1 > 0.0 else math.nan
        _add(rep, "nu", {}, fit.slope, fit.stderr, fit.points, prediction=nu_pred)
        if math.isfinite(nu_pred):
            rep.add_verdict("lefttail.nu", 0.75 * nu_pred <= fit.slope <= 1.25 * nu_pred, f"nu {fit.slope:.3f} vs {nu_pred:.3f}")
    logger.info(f"📊 [experiment] lefttail {name}: {len(xs)} usable points")
    return rep


# ---------------------------------------------------------------------------
# R_n, witnesses, regular cuts
# ---------------------------------------------------------------------------


def _rn_task(task: Tuple[EnvironmentSpec, SeedPath, Tuple[int, ...], int, int]) -> Dict[int, int]:
    spec, seed, steps_grid, node_cap, r_cap = task
    arena = _new_arena(spec, seed, node_cap)
    walk = WalkState()
    rnd = seed.py_random("walk")
    out: Dict[int, int] = {}
    for n in steps_grid:
        run_steps(walk, arena, rnd, n)
        out[n] = fully_visited_generations(walk, arena, r_cap)
    return out


def rn_experiment(spec: EnvironmentSpec, steps_grid: Sequence[int], ctx: RunContext) -> ExperimentReport:
    """Median R_n / log n along one walk per replica, against 1/gamma~."""
    an = envspec.analytics_for(spec)
    target = 1.0 / an.gamma_tilde if an.gamma_tilde else math.nan
    grid = tuple(sorted(int(n) for n in steps_grid))
    rep = _report("rn", spec.name, ctx, {"steps": list(grid)})
    tasks = [(spec, ctx.path(0, r), grid, ctx.node_cap, ctx.r_cap) for r in range(ctx.replicas)]
    runs = ctx.map(_rn_task, tasks, label="rn")
    medians = []
    for n in grid:
        vals = np.asarray([r[n] / math.log(n) for r in runs])
        med = float(np.median(vals))
        medians.append(med)
        _add(rep, "R_over_log_n_median", {"steps": n}, med, float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0, vals.size, prediction=target)
    rep.add_verdict("rn.scale", abs(medians[-1] - target) <= 0.3 * target, f"median {medians[-1]:.4f} vs {target:.4f}")
    rep.add_verdict("rn.trend", all(b >= a for a, b in zip(medians, medians[1:])), f"medians {medians}")
    rep.records = [{"replica": i, **{f"R@{n}": r[n] for n in grid}} for i, r in enumerate(runs)]
    return rep


@dataclass(frozen=True)
class _WitnessTask:
    spec: EnvironmentSpec
    seed: SeedPath
    steps: int
    zeta: float
    epsilon: float
    offset: Literal["R_n", "gamma"]
    gamma_tilde: float
    plan: Optional[clusters.CutPlan]
    m: float
    q: float
    node_cap: int
    r_cap: int


def _witness_task(task: _WitnessTask) -> Dict[str, Any]:
    arena = _new_arena(task.spec, task.seed, task.node_cap)
    walk = run_steps(WalkState(), arena, task.seed.py_random("walk"), task.steps)
    log_n = math.log(task.steps)
    ell = ell_for(log_n, task.zeta)
    R = fully_visited_generations(walk, arena, task.r_cap)
    offset = R if task.offset == "R_n" else log_n / task.gamma_tilde
    root_gen, clamped = clusters.witness_root_generation(ell, offset)
    full = clusters.witness_full_cluster(arena, walk, ell, root_gen)
    anc = max(0, int(math.floor(task.epsilon * ell ** (1.0 / 3.0))))
    spread = clusters.witness_spread(arena, walk, ell, anc, skip_extinct=True)
    out: Dict[str, Any] = {
        "seed": task.seed.seed_id("walk"),
        "ell": ell,
        "R": R,
        "root_gen": root_gen,
        "clamped": clamped,
        "full_fraction": full.fraction,
        "full": full.full,
        "witness_id": full.z,
        "cluster_size": full.size,
        "ancestor_gen": anc,
        "spread_value": spread.value,
        "spread_extinct": spread.extinct,
        "spread": spread.indicator,
        "levels": [],
    }
    if task.plan is not None:
        events = clusters.scan_A_events(arena, walk, task.plan, task.m, task.q)
        out["levels"] = [e.as_record() for e in events]
    return out


def witness_experiment(
    spec: EnvironmentSpec,
    steps: int,
    zeta: float,
    epsilon: float,
    ctx: RunContext,
    offset: Literal["R_n", "gamma"] = "R_n",
    plan: Optional[clusters.CutPlan] = None,
    m: float = 0.0,
    q: float = 1.0,
) -> ExperimentReport:
    """
    Full-cluster witness at generation ell - offset and the spread witness at eps ell^{1/3};
    with a plan, the A_i(m, q) events of its regular cuts with scaled (m, q).
    """
    an = envspec.analytics_for(spec)
    gt = an.gamma_tilde or math.nan
    rep = _report("witness", spec.name, ctx, {"steps": [steps], "zeta": [zeta], "epsilon": [epsilon]})
    if plan is not None:
        rep.notes.append(f"plan {plan.as_dict()}; scaled m={m}, q={q}; nominal m={plan.m_nominal():.4g}")
    tasks = [
        _WitnessTask(spec, ctx.path(0, r), steps, zeta, epsilon, offset, gt, plan, m, q, ctx.node_cap, ctx.r_cap)
        for r in range(ctx.replicas)
    ]
    runs = ctx.map(_witness_task, tasks, label="witness")
    params = {"steps": steps, "zeta": zeta, "epsilon": epsilon, "offset": offset}
    full = sum(1 for r in runs if r["full"])
    spread = sum(1 for r in runs if r["spread"])
    p, se = proportion(full, len(runs))
    _add(rep, "full_cluster_rate", params, p, se, len(runs))
    rep.add_verdict("witness.full_cluster", p >= 0.8, f"{full}/{len(runs)} replicas")
    p2, se2 = proportion(spread, len(runs))
    _add(rep, "spread_rate", params, p2, se2, len(runs))
    rep.add_verdict("witness.spread", p2 >= 0.8, f"{spread}/{len(runs)} replicas")
    clamped = sum(1 for r in runs if r["clamped"])
    if clamped:
        rep.notes.append(f"root generation clamped in {clamped} replicas")
    if plan is not None:
        for lvl in plan.levels():
            held = [any(e["level"] == lvl and e["holds"] for e in r["levels"]) for r in runs]
            pl, sl = proportion(sum(held), len(runs))
            _add(rep, "A_event_rate", {**params, "level": lvl, "m": m, "q": q}, pl, sl, len(runs))
    rep.records = []
    for i, r in enumerate(runs):
        base = {k: v for k, v in r.items() if k != "levels"}
        if r["levels"]:
            rep.records.extend({"replica": i, **base, **lv} for lv in r["levels"])
        else:
            rep.records.append({"replica": i, **base})
    return rep


def cut_plan_report(
    spec: EnvironmentSpec,
    log_n_grid: Sequence[float],
    zeta: float,
    epsilon: float,
    delta: float,
) -> ExperimentReport:
    """Regular-cut sizes over a grid of log n, with the violated constraints of each plan."""
    rep = ExperimentReport(experiment="cut_plan", spec=spec.name, grid={"log_n": list(log_n_grid)})
    feasible_any = False
    for ln in log_n_grid:
        plan = clusters.build_cut_plan(spec, ln, zeta, epsilon, delta)
        row = plan.as_dict()
        rep.records.append(row)
        _add(rep, "slack", {"log_n": ln, "zeta": zeta, "case": plan.case}, plan.slack, flags=["infeasible"] if not plan.feasible else [])
        rep.notes.extend(f"log n={ln:g}: {v}" for v in plan.violations)
        feasible_any |= plan.feasible
    rep.add_verdict("cut_plan.feasible_somewhere", feasible_any, f"zeta={zeta}, delta={delta}, epsilon={epsilon}")
    return rep


def _cuts_task(task: Tuple[EnvironmentSpec, SeedPath, clusters.CutPlan, int]) -> Dict[str, Any]:
    spec, seed, plan, node_cap = task
    arena = _new_arena(spec, seed, node_cap)
    rc = clusters.regular_cut_clusters(arena, plan)
    return {
        "seed": seed.seed_id("tree"),
        "missing": rc.missing,
        "levels": [
            {"level": i + 1, "generation": cs.generation, "clusters": len(cs), "D": cs.D_statistic, "members": sum(len(c) for c in cs.clusters)}
            for i, cs in enumerate(rc.clusters)
        ],
    }


def regular_cuts_experiment(spec: EnvironmentSpec, plan: clusters.CutPlan, ctx: RunContext) -> ExperimentReport:
    """Recursive cluster construction on fresh trees: anchor success and the D statistic per level."""
    plan.require_feasible()
    rep = _report("regular_cuts", spec.name, ctx, {"k_n": [plan.k_n], "r_n": [plan.r_n], "h_n": [plan.h_n]})
    rep.notes.extend(plan.notes)
    runs = ctx.map(_cuts_task, [(spec, ctx.path(0, r), plan, ctx.node_cap) for r in range(ctx.replicas)], label="regular_cuts")
    ok = sum(1 for r in runs if r["missing"] == 0)
    p, se = proportion(ok, len(runs))
    _add(rep, "realised_rate", {"ell": plan.ell}, p, se, len(runs))
    for lvl in plan.levels():
        ds = [lv["D"] for r in runs for lv in r["levels"] if lv["level"] == lvl and math.isfinite(lv["D"])]
        if ds:
            _add(rep, "D_statistic_median", {"level": lvl}, float(np.median(ds)), 0.0, len(ds))
    rep.records = [{"replica": i, "seed": r["seed"], "missing": r["missing"], **lv} for i, r in enumerate(runs) for lv in r["levels"]]
    return rep


# ---------------------------------------------------------------------------
# miss bound and accessible coverage
# ---------------------------------------------------------------------------


def _grown(spec: EnvironmentSpec, seed: SeedPath, depth: int, node_cap: int) -> TreeArena:
    arena = _new_arena(spec, seed, node_cap)
    arena.grow_to_depth(depth)
    return arena


def _fit_task(task: Tuple[EnvironmentSpec, SeedPath, Tuple[int, ...], int, float]) -> float:
    spec, seed, depths, node_cap, safety = task
    arena = _grown(spec, seed, max(depths), node_cap)
    nodes = [z for d in depths for z in arena.generation(d)]
    return exact.fit_c7(arena, nodes, safety)


def _miss_task(task: Tuple[EnvironmentSpec, SeedPath, Tuple[int, ...], Tuple[int, ...], float, int, int, int, bool]) -> List[Dict[str, Any]]:
    spec, seed, depths, returns, c7, walks, step_cap, node_cap, surrogate = task
    arena = _grown(spec, seed, max(depths), node_cap)
    analytic_c7, _ = exact.miss_constant(spec, None, surrogate)
    by_depth = {d: arena.generation(d) for d in depths}
    nodes = [z for d in depths for z in by_depth[d]]
    rates, done, censored = exact.mc_miss_rates(arena, nodes, returns, walks, seed.py_random("walk"), step_cap)
    col = {z: i for i, z in enumerate(nodes)}
    rows = []
    for d in depths:
        for j, N in enumerate(returns):
            held = held_mc = held_analytic = 0
            worst = 0.0
            mc_sum = exact_sum = 0.0
            gap = 0.0
            for z in by_depth[d]:
                _, miss, bound = exact.closed_form_miss(arena, z, N, c7)
                mc = float(rates[j, col[z]])
                held += miss <= bound * (1.0 + 1e-12)
                held_mc += exact.mc_under_bound(mc, bound, done)
                held_analytic += miss <= exact.closed_form_miss(arena, z, N, analytic_c7)[2] * (1.0 + 1e-12)
                worst = max(worst, mc / bound if bound > 0 else math.inf)
                mc_sum += mc
                exact_sum += miss
                gap = max(gap, abs(mc - miss))
            union, closed = exact.union_miss_bound(arena, by_depth[d], N, c7)
            k = len(by_depth[d])
            rows.append(
                {
                    "tree_seed": seed.seed_id("tree"),
                    "depth": d,
                    "returns": N,
                    "nodes": k,
                    "walks": done,
                    "censored": censored,
                    "held_mc": held_mc,
                    "held_exact": held,
                    "held_analytic": held_analytic,
                    "worst_mc_ratio": worst,
                    "mc_miss_mean": mc_sum / k if k else math.nan,
                    "exact_miss_mean": exact_sum / k if k else math.nan,
                    "mc_exact_gap": gap,
                    "union_exact": union,
                    "union_closed": closed,
                }
            )
    return rows


def miss_bound_experiment(
    spec: EnvironmentSpec,
    depths: Sequence[int],
    returns_grid: Sequence[float],
    ctx: RunContext,
    calibration_trees: int = 20,
    test_trees: int = 50,
    walks: int = 100,
    safety: float = 0.5,
    surrogate: bool = False,
    kappa: Optional[Sequence[float]] = None,
) -> ExperimentReport:
    """
    c7 fitted on calibration trees (point 0) and frozen, then on fresh trees (point 1) the walk
    miss rate of every generation vertex, the share of `walks` quenched walks that never visit it
    by T_root^{N}, is checked against exp(-c7 N e^{-Vbar}/|z|). The exact (1 - p_z)^N and the
    ellipticity constant 1/(N0/eps0 + 1) are cross-checks. With `kappa`, N = ceil(n^kappa) for
    each n in `returns_grid` and each kappa.
    """
    if spec.alpha is None and not surrogate:
        raise EllipticityRequiredError(f"{spec.name} has ellipticity off: run with the surrogate alpha mode")
    if kappa:
        grid = tuple(dict.fromkeys(exact.excursion_count(n, k) for n in returns_grid for k in kappa))
    else:
        grid = tuple(dict.fromkeys(exact.excursion_count(n) for n in returns_grid))
    rep = _report("miss_bound", spec.name, ctx, {"depth": depths, "returns": grid})
    if surrogate and spec.alpha is None:
        rep.notes.append("surrogate-alpha mode: the ellipticity constant uses a |log A| quantile")
    deps = tuple(int(d) for d in depths)
    fits = ctx.map(
        _fit_task,
        [(spec, ctx.path(0, r), deps, ctx.node_cap, safety) for r in range(calibration_trees)],
        label="miss_bound calibration",
    )
    c7 = min(fits)
    _add(rep, "c7_fitted", {"safety": safety, "calibration_trees": calibration_trees}, c7)
    rows_nested = ctx.map(
        _miss_task,
        [(spec, ctx.path(1, r), deps, grid, c7, walks, ctx.step_cap, ctx.node_cap, surrogate) for r in range(test_trees)],
        label="miss_bound test",
    )
    rows = [row for part in rows_nested for row in part]
    cases = sum(r["nodes"] for r in rows)
    held_mc = sum(r["held_mc"] for r in rows)
    held = sum(r["held_exact"] for r in rows)
    held_a = sum(r["held_analytic"] for r in rows)
    for d in deps:
        for N in grid:
            sel = [r for r in rows if r["depth"] == d and r["returns"] == N]
            m, se = mean_stderr([r["mc_miss_mean"] for r in sel if math.isfinite(r["mc_miss_mean"])])
            want = float(np.mean([r["exact_miss_mean"] for r in sel if math.isfinite(r["exact_miss_mean"])] or [math.nan]))
            _add(rep, "mc_miss_rate", {"depth": d, "returns": N}, m, se, len(sel), prediction=want)
    _add(rep, "empirical_bound_rate", {"test_trees": test_trees, "walks": walks}, held_mc / cases if cases else math.nan, 0.0, cases)
    censored = sum(part[0]["censored"] for part in rows_nested if part)
    note = f", {censored} walks censored" if censored else ""
    rep.add_verdict("miss_bound.empirical", cases > 0 and held_mc == cases, f"{held_mc}/{cases} (tree, vertex, N) cases{note}")
    rep.add_verdict("miss_bound.fitted", held == cases, f"exact (1-p)^N: {held}/{cases} cases")
    rep.add_verdict("miss_bound.analytic", held_a == cases, f"{held_a}/{cases} cases")
    rep.records = rows
    return rep


def _coverage_task(task: Tuple[EnvironmentSpec, SeedPath, float, int, int, int, int]) -> Dict[str, Any]:
    spec, seed, level, ell, N, step_cap, node_cap = task
    arena = _new_arena(spec, seed, node_cap)
    nodes = arena.accessible_nodes(level, ell, grow=True)
    walk = run_until_returns(WalkState(), arena, seed.py_random("walk"), N, step_cap)
    missed = sum(1 for z in nodes if not walk.visited(z))
    union = math.fsum(math.exp(N * math.log1p(-exact.root_excursion_hit(arena, z))) for z in nodes)
    return {"seed": seed.seed_id("walk"), "nodes": len(nodes), "missed": missed, "union": union, "censored": walk.censored}


def accessible_coverage(
    spec: EnvironmentSpec,
    log_n: float,
    epsilon: float,
    ell: int,
    ctx: RunContext,
) -> ExperimentReport:
    """Accessible points with Vbar <= (1 - 2 eps) log n, visited within n^{1-eps} excursions."""
    level = (1.0 - 2.0 * epsilon) * log_n
    N = int(math.ceil(math.exp((1.0 - epsilon) * log_n)))
    rep = _report("coverage", spec.name, ctx, {"log_n": [log_n], "epsilon": [epsilon], "ell": [ell]})
    tasks = [(spec, ctx.path(0, r), level, ell, N, ctx.step_cap, ctx.node_cap) for r in range(ctx.replicas)]
    runs = ctx.map(_coverage_task, tasks, label="coverage")
    done = [r for r in runs if not r["censored"]]
    flags = _censor_flags(rep, len(runs) - len(done), len(runs), ctx)
    miss, se = proportion(sum(1 for r in done if r["missed"]), len(done))
    um, use = mean_stderr([r["union"] for r in done]) if done else (math.nan, math.nan)
    params = {"log_n": log_n, "epsilon": epsilon, "ell": ell, "returns": N}
    _add(rep, "miss_any_rate", params, miss, se, len(done), prediction=um, flags=flags)
    _add(rep, "union_bound_mean", params, um, use, len(done))
    rep.add_verdict("coverage.union_bound", miss <= um + 3.0 * math.hypot(se, use) + 1e-12, f"miss {miss:.4g} vs union {um:.4g}")
    rep.records = runs
    return rep


# ---------------------------------------------------------------------------
# check bundles
# ---------------------------------------------------------------------------


def spine_check(
    spec: EnvironmentSpec,
    ctx: RunContext,
    mto_samples: int = 100000,
    mto_mc_n: int = 5,
    ballot_m: Sequence[int] = (16, 64, 256, 1024),
    window_m: int = 400,
    window_r: Sequence[float] = (10.0, 20.0),
    window_method: Literal["mc", "grid"] = "grid",
    window_samples: int = 10**6,
    passage_grid: Sequence[Tuple[float, float]] = ((0.0, 3.0), (1.0, 3.0), (0.0, 10.0), (3.0, 10.0)),
    passage_m: int = 400,
    passage_samples: int = 20000,
    excursion_M: Sequence[float] = (10.0, 100.0, 1000.0),
    excursion_a: Sequence[float] = (1.0, 2.0, 4.0),
    excursion_samples: int = 20000,
) -> ExperimentReport:
    """Many-to-one, ballot, local window, passage and excursion-sum rules in one report."""
    rep = _report("spine_check", spec.name, ctx, {"ballot_m": ballot_m, "window_r": window_r})
    rng = lambda point: ctx.path(point, 0).generator("spine")  # noqa: E731

    # many-to-one
    discrete = isinstance(spec.weights, DiscreteWeights)
    ok = True
    for fi, (name, fn) in enumerate(spine.functional_library().items()):
        ns = range(1, 5) if discrete else (mto_mc_n,)
        for n in ns:
            try:
                res = spine.mto_check(spec, n, fn, samples=mto_samples, rng=rng(100 + fi))
            except UnboundedFunctionalError as exc:
                rep.notes.append(f"{name}: {exc}")
                break
            params = {"functional": name, "n": n, "method": res.method}
            _add(rep, "many_to_one_lhs", params, res.lhs, res.lhs_stderr, res.samples, prediction=res.rhs)
            if res.method == "exact":
                ok &= res.gap <= 1e-12 * max(1.0, abs(res.rhs))
            else:
                ok &= within_sigma(res.lhs, res.lhs_stderr, res.rhs, res.rhs_stderr)
    rep.add_verdict("many_to_one", ok, "exact to 1e-12 or within 3 combined stderr")

    # ballot
    F: Dict[int, float] = {}
    for m in ballot_m:
        est = spine.ballot_F(spec, m, method="grid")
        F[m] = est.estimate
        _add(rep, "ballot_F_normalized", {"m": m, "method": est.method}, est.normalized)
    norms = [F[m] * (m + 1) ** 1.5 for m in ballot_m]
    if norms and min(norms) > 0:
        rep.add_verdict("ballot.band", max(norms) / min(norms) <= 4.0, f"normalized range {min(norms):.4g}..{max(norms):.4g}")
    ms = sorted(ballot_m)
    ratios = [(b, F[b] / F[a]) for a, b in zip(ms, ms[1:]) if b == 4 * a and F[a] > 0]
    for b, rr in ratios:
        _add(rep, "ballot_ratio_4m", {"m": b}, rr, prediction=1.0 / 8.0)
    tail = ratios[-2:]
    if tail:
        rep.add_verdict("ballot.ratio", all(0.7 / 8 <= rr <= 1.4 / 8 for _, rr in tail), f"{[round(r, 5) for _, r in tail]}")

    # local window
    if spec.lattice:
        rep.notes.append("lattice spec: local window refused")
    else:
        ok = True
        for ri, r in enumerate(window_r):
            w = spine.local_window_check(spec, window_m, r, samples=window_samples, rng=rng(200 + ri), method=window_method)
            _add(rep, "local_window", {"m": window_m, "r": r, "regime": w.regime, "bare": w.prediction_bare}, w.empirical, w.stderr, window_samples if w.method == "mc" else 0, w.prediction)
            ok &= abs(w.ratio - 1.0) <= 0.25
        rep.add_verdict("local_window", ok, "within 25% of the prediction")

    # passage ratios
    ok = True
    for pi, (x, y) in enumerate(passage_grid):
        pr = spine.passage_check(spec, x, y, passage_m, passage_samples, rng(300 + pi))
        for label, value in pr.as_dict().items():
            _add(rep, "passage_ratio", {"x": x, "y": y, "m": passage_m, "statistic": label}, value, samples=passage_samples)
            ok &= 0.25 <= value <= 4.0
    rep.add_verdict("passage_ratios", ok, "all normalized statistics in [1/4, 4]")

    # excursion sums
    ok = True
    for i, (a, M) in enumerate((a, M) for a in excursion_a for M in excursion_M):
        v, s = spine.excursion_sum_check(spec, a, M, excursion_samples, rng(400 + i))
        _add(rep, "excursion_sum", {"a": a, "M": M}, v, s, excursion_samples, prediction=10.0)
        ok &= v <= 10.0
    rep.add_verdict("excursion_sum", ok, "M P(Y^- > M, tau+_a < tau-_0) <= 10")

    # barrier bound, reported only
    an = envspec.analytics_for(spec)
    m = window_m
    b = 0.5 * (an.sigma2 * math.sqrt(m) * math.log(m) + m * an.radius_guard)
    try:
        bc = spine.barrier_upper_check(spec, m, 1.0, b, passage_samples, rng(500))
        _add(rep, "barrier_upper", {"m": m, "a": 1.0, "b": b}, bc.estimate, bc.stderr, bc.samples, bc.bound_rhs)
    except RegimeViolationError as exc:
        rep.notes.append(f"barrier bound skipped: {exc}")
    logger.info(f"📊 [experiment] spine_check {spec.name}: {len(rep.verdicts)} rules")
    return rep


@dataclass(frozen=True)
class _ExactTreeTask:
    spec: EnvironmentSpec
    seed: SeedPath
    depth: int
    targets: int
    excursions: int
    walks: int
    ell: int
    n_returns: int
    step_cap: int
    node_cap: int


def _exact_tree_task(task: _ExactTreeTask) -> Dict[str, Any]:
    arena = _grown(task.spec, task.seed, task.depth, task.node_cap)
    pick = task.seed.generator("mc")
    gen = arena.generation(task.depth)
    zs = sorted(set([gen[0], gen[-1]] + [int(x) for x in pick.choice(gen, size=min(task.targets, len(gen)), replace=False)]))
    rows: List[Dict[str, Any]] = []
    worst = 0.0
    for z in zs:
        red = exact.root_excursion_hit(arena, z)
        sol = exact.solver_root_hit(arena, z)
        worst = max(worst, abs(red - sol))
        xp = arena.ancestor_at(z, int(pick.integers(0, arena.depth[z])))
        for start in ("child", "parent"):
            worst = max(worst, abs(exact.path_hitting(arena, xp, z, start) - exact.solver_path_hitting(arena, xp, z, start)))
        rows.append({"tree_seed": task.seed.seed_id("tree"), "z": z, "z_depth": arena.depth[z], "Vbar": arena.Vbar[z], "p_z_reduction": red, "p_z_solver": sol, "p_z_mc": None, "stderr": None})
    out: Dict[str, Any] = {"rows": rows, "worst": worst, "mc": [], "walk": None}
    if task.excursions:
        z = arena.generation(min(2, task.depth))[0]
        p, se, cens = exact.mc_root_hit(arena, z, task.excursions, task.seed.py_random("mc"))
        red = exact.root_excursion_hit(arena, z)
        out["mc"].append({"z": z, "reduction": red, "mc": p, "stderr": se, "censored": cens})
        rows.append({"tree_seed": task.seed.seed_id("tree"), "z": z, "z_depth": arena.depth[z], "Vbar": arena.Vbar[z], "p_z_reduction": red, "p_z_solver": exact.solver_root_hit(arena, z), "p_z_mc": p, "stderr": se})
    if task.walks:
        arena.complete_to_depth(task.ell)
        q = exact.quenched_mean_K(arena, task.n_returns, task.ell)
        rnd = task.seed.py_random("walk")
        acc = Moments()
        cens = 0
        for _ in range(task.walks):
            w = run_until_returns(WalkState(), arena, rnd, task.n_returns, task.step_cap)
            if w.censored:
                cens += 1
                continue
            acc.add(K_of(w, task.ell, task.n_returns))
        out["walk"] = {"quenched": q, "mean": acc.mean, "stderr": acc.stderr, "count": acc.count, "censored": cens}
    return out


def exact_check(
    spec: EnvironmentSpec,
    ctx: RunContext,
    trees: int = 100,
    depth: int = 8,
    targets: int = 6,
    mc_trees: int = 10,
    excursions: int = 100000,
    walk_trees: int = 5,
    walks: int = 500,
    ell: int = 5,
    n_returns: int = 100,
) -> ExperimentReport:
    """Reduction against the first-step solver, Monte Carlo excursions and walker K_n(ell)."""
    rep = _report("exact_check", spec.name, ctx, {"depth": [depth], "ell": [ell], "n_returns": [n_returns]})
    tasks = [
        _ExactTreeTask(
            spec,
            ctx.path(0, r),
            depth,
            targets,
            excursions if r < mc_trees else 0,
            walks if r < walk_trees else 0,
            ell,
            n_returns,
            ctx.step_cap,
            ctx.node_cap,
        )
        for r in range(trees)
    ]
    runs = ctx.map(_exact_tree_task, tasks, label="exact_check")
    worst = max(r["worst"] for r in runs)
    _add(rep, "max_abs_reduction_minus_solver", {"trees": trees, "depth": depth}, worst, prediction=0.0)
    rep.add_verdict("hitting_formulas.solver", worst <= 1e-10, f"max |reduction - solver| = {worst:.3g}")
    mc = [m for r in runs for m in r["mc"]]
    if mc:
        ok = all(within_sigma(m["mc"], m["stderr"], m["reduction"]) for m in mc)
        for m in mc:
            _add(rep, "p_z_mc", {"z": m["z"]}, m["mc"], m["stderr"], excursions, prediction=m["reduction"])
        rep.add_verdict("hitting_formulas.mc", ok, f"{len(mc)} trees within 3 stderr")
    ws = [r["walk"] for r in runs if r["walk"] is not None]
    if ws:
        ok = True
        for i, w in enumerate(ws):
            _add(rep, "K_walker_mean", {"tree": i, "ell": ell, "n_returns": n_returns}, w["mean"], w["stderr"], w["count"], prediction=w["quenched"])
            ok &= within_sigma(w["mean"], w["stderr"], w["quenched"])
            rep.censored += w["censored"]
        rep.add_verdict("quenched_mean", ok, f"{len(ws)} trees within 3 stderr")
    all_rows = [row for r in runs for row in r["rows"]]
    _add(rep, "p_z_rows", {"trees": trees}, float(len(all_rows)))
    rep.records = all_rows
    logger.info(f"📊 [experiment] exact_check {spec.name}: worst gap {worst:.3g}")
    return rep


# ---------------------------------------------------------------------------
# reproducibility
# ---------------------------------------------------------------------------


def reports_match(a: ExperimentReport, b: ExperimentReport, rtol: float = 1e-9) -> bool:
    """Same checks and parameters with estimates equal to rtol (nan and inf compare equal to themselves)."""
    fa, fb = a.estimates_frame(), b.estimates_frame()
    if list(fa.columns) != list(fb.columns) or len(fa) != len(fb):
        return False
    x = fa["estimate"].to_numpy(dtype=float)
    y = fb["estimate"].to_numpy(dtype=float)
    return bool(np.allclose(x, y, rtol=rtol, atol=0.0, equal_nan=True) and np.array_equal(np.isinf(x), np.isinf(y)))
