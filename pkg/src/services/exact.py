from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from src.core.errors import EllipticityRequiredError, NotAncestorError, SubtreeNotGrownError
from src.domain.environment import EnvironmentSpec
from src.services import envspec
from src.services.tree import FRONTIER, ROOT, TreeArena
from src.services.walker import WalkState, next_vertex, run_until_returns

logger = logging.getLogger(__name__)

SOLVER_NODE_LIMIT = 10**4


def _log_sum_exp(values: Sequence[float]) -> float:
    """log sum e^{v}, shifted by the max and summed with fsum."""
    top = max(values)
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


@dataclass(frozen=True)
class PathReduction:
    """The path top = z_0 < z_1 < ... < z_k = z with its potentials and prefix sums of e^{V}."""

    path: Tuple[int, ...]
    potentials: Tuple[float, ...]
    log_partial_sums: Tuple[float, ...]

    @property
    def conductances(self) -> Tuple[float, ...]:
        return tuple(math.exp(-v) for v in self.potentials)

    @property
    def partial_sums(self) -> Tuple[float, ...]:
        """sum_{i=1..j} e^{V(z_i)} for j = 1..k."""
        return tuple(math.exp(s) for s in self.log_partial_sums)

    @property
    def log_total(self) -> float:
        return self.log_partial_sums[-1]


def path_reduction(arena: TreeArena, top: int, z: int) -> PathReduction:
    if not arena.is_ancestor(top, z):
        raise NotAncestorError(f"node {top} is not a strict ancestor of {z}")
    path: List[int] = [z]
    while path[-1] != top:
        path.append(arena.parent[path[-1]])
    path.reverse()
    pots = [arena.V[u] for u in path]
    prefix: List[float] = []
    for j in range(1, len(path)):
        prefix.append(_log_sum_exp(pots[1 : j + 1]))
    return PathReduction(tuple(path), tuple(pots), tuple(prefix))


def path_hitting(
    arena: TreeArena,
    x_prime: int,
    x: int,
    start: Literal["child", "parent"] = "child",
) -> float:
    """
    start="child": P_{x'_x}(T_x < T_{x'}) = e^{V(x'_x)} / sum_{z in ]]x', x]]} e^{V(z)},
    with x'_x the child of x' on the path to x.
    start="parent": P_{x<-}(T_{x'} < T_x) = e^{V(x)} / sum_{z in ]]x', x]]} e^{V(z)}.
    """
    red = path_reduction(arena, x_prime, x)
    head = red.potentials[1] if start == "child" else red.potentials[-1]
    return math.exp(head - red.log_total)


def root_excursion_hit(arena: TreeArena, z: int) -> float:
    """p_z = P_root(T_z < T_root) = 1 / ((sum_{|y|=1} A(y) + 1) sum_{u in ]]root, z]]} e^{V(u)})."""
    if z == ROOT:
        raise ValueError("p_z is defined for z != root")
    if arena.is_frontier(ROOT):
        raise SubtreeNotGrownError("root has no children yet")
    red = path_reduction(arena, ROOT, z)
    return math.exp(-math.log(arena.child_weight_sum[ROOT] + 1.0) - red.log_total)


def generation_hits(arena: TreeArena, ell: int) -> Tuple[List[int], np.ndarray]:
    """(ids, p_z) for every generation-ell vertex in Neveu order, in one traversal."""
    ids = arena.generation(ell)
    if not ids:
        return [], np.zeros(0)
    log_d = math.log(arena.child_weight_sum[ROOT] + 1.0)
    log_sum: Dict[int, float] = {ROOT: -math.inf}
    for d in range(1, ell + 1):
        for u in arena.by_depth[d]:
            log_sum[u] = float(np.logaddexp(log_sum[arena.parent[u]], arena.V[u]))
    return ids, np.exp(-log_d - np.asarray([log_sum[z] for z in ids]))


def quenched_mean_K(arena: TreeArena, n: float, ell: int) -> float:
    """E^E[K_n(ell)] = sum_{|z|=ell} (1 - (1 - p_z)^n), evaluated as -expm1(n log1p(-p_z))."""
    if n <= 0:
        return 0.0
    _, p = generation_hits(arena, ell)
    if p.size == 0:
        return 0.0
    return float(np.sum(-np.expm1(n * np.log1p(-p))))


def pz_bound_constants(arena: TreeArena, nodes: Sequence[int]) -> Tuple[float, float]:
    """
    (c_-, c_+): min of p_z sum_{]]root,z]]} e^{V} and max of p_z e^{Vbar(z)} over `nodes`.
    """
    lows: List[float] = []
    highs: List[float] = []
    for z in nodes:
        p = root_excursion_hit(arena, z)
        red = path_reduction(arena, ROOT, z)
        lows.append(p * math.exp(red.log_total))
        highs.append(p * math.exp(arena.Vbar[z]))
    return min(lows), max(highs)


# ---------------------------------------------------------------------------
# first-step linear systems
# ---------------------------------------------------------------------------


def _solve(arena: TreeArena, target: int, avoid: int) -> np.ndarray:
    """
    h(x) = P_x(T_target < T_avoid) over every materialised vertex plus the vertex above the root
    (index len(arena)). Frontier vertices reflect to their parent: their unexplored subtree can
    only be left through them.
    """
    n = len(arena)
    if n > SOLVER_NODE_LIMIT:
        logger.warning(f"⚠️ [exact] solving a first-step system on {n} vertices")
    top = n
    rows: List[int] = []
    cols: List[int] = []
    vals: List[float] = []
    rhs = np.zeros(n + 1)

    def put(r: int, c: int, v: float) -> None:
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for x in range(n):
        put(x, x, 1.0)
        if x == target:
            rhs[x] = 1.0
            continue
        if x == avoid:
            continue
        par = arena.parent[x] if x != ROOT else top
        if arena.first_child[x] == FRONTIER:
            put(x, par, -1.0)
            continue
        denom = arena.child_weight_sum[x] + 1.0
        for c in arena.children(x):
            put(x, c, -arena.A[c] / denom)
        put(x, par, -1.0 / denom)
    put(top, top, 1.0)
    if top != avoid:
        put(top, ROOT, -1.0)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n + 1, n + 1))
    return np.asarray(spsolve(mat.tocsc(), rhs))


def solver_root_hit(arena: TreeArena, z: int) -> float:
    """p_z from the first-step equations with the root absorbing."""
    h = _solve(arena, target=z, avoid=ROOT)
    kids = arena.children(ROOT)
    denom = arena.child_weight_sum[ROOT] + 1.0
    return float(sum(arena.A[c] * h[c] for c in kids) / denom)


def solver_path_hitting(
    arena: TreeArena,
    x_prime: int,
    x: int,
    start: Literal["child", "parent"] = "child",
) -> float:
    if not arena.is_ancestor(x_prime, x):
        raise NotAncestorError(f"node {x_prime} is not a strict ancestor of {x}")
    if start == "child":
        s = arena.ancestor_at(x, arena.depth[x_prime] + 1)
        return float(_solve(arena, target=x, avoid=x_prime)[s])
    return float(_solve(arena, target=x_prime, avoid=x)[arena.parent[x]])


def mc_root_hit(
    arena: TreeArena,
    z: int,
    excursions: int,
    rng: random.Random,
    step_cap: int = 10**6,
) -> Tuple[float, float, int]:
    """Fraction of root excursions that reach z, its stderr and the number censored by step_cap."""
    hits = 0
    censored = 0
    for _ in range(excursions):
        x = next_vertex(arena, ROOT, rng.random())
        steps = 1
        while x != ROOT and x != z and steps < step_cap:
            x = next_vertex(arena, x, rng.random())
            steps += 1
        if x == z:
            hits += 1
        elif x != ROOT:
            censored += 1
    done = excursions - censored
    p = hits / done if done else math.nan
    se = math.sqrt(p * (1.0 - p) / done) if done else math.nan
    return p, se, censored


# ---------------------------------------------------------------------------
# miss probabilities
# ---------------------------------------------------------------------------


def ellipticity_c7(alpha: Optional[float], N0: Optional[int], surrogate_alpha: Optional[float] = None) -> float:
    """
    c7 = 1 / (N0 / eps0 + 1): then p_z >= c7 e^{-Vbar(z)} / |z| because D <= N0/eps0 + 1 and
    sum_{]]root,z]]} e^{V} <= |z| e^{Vbar(z)}.
    """
    alpha = alpha if alpha is not None else surrogate_alpha
    if alpha is None or N0 is None:
        raise EllipticityRequiredError("the miss-bound constant needs eps0 and N0")
    return 1.0 / (N0 * math.exp(alpha) + 1.0)


def excursion_count(n: float, kappa: Optional[float] = None) -> int:
    """N = ceil(n^kappa) root excursions (n itself without kappa), at least 1."""
    raw = float(n) if kappa is None else float(n) ** kappa
    if not math.isfinite(raw) or raw < 0:
        raise ValueError(f"bad excursion count n={n}, kappa={kappa}")
    near = round(raw)
    N = near if abs(raw - near) <= 1e-9 * max(1.0, raw) else math.ceil(raw)
    return max(1, int(N))


def mc_miss_rates(
    arena: TreeArena,
    nodes: Sequence[int],
    returns: Sequence[int],
    walks: int,
    rng: random.Random,
    step_cap: int = 10**7,
) -> Tuple[np.ndarray, int, int]:
    """
    Fraction of walks that have not visited each of `nodes` by T_root^{N}, one row per N in
    `returns`. Each walk is extended through the grid in increasing N; censored walks are dropped.
    Returns (rates, completed walks, censored walks).
    """
    grid = sorted(set(int(N) for N in returns))
    row_of = {N: i for i, N in enumerate(grid)}
    misses = np.zeros((len(grid), len(nodes)))
    done = 0
    censored = 0
    for _ in range(walks):
        walk = WalkState()
        rows = []
        for N in grid:
            run_until_returns(walk, arena, rng, N, step_cap)
            if walk.censored:
                break
            rows.append([0.0 if walk.visited(z) else 1.0 for z in nodes])
        if walk.censored:
            censored += 1
            continue
        done += 1
        misses += np.asarray(rows).reshape(misses.shape)
    if censored:
        logger.warning(f"⚠️ [exact] {censored}/{walks} miss walks censored at {step_cap} steps")
    if not done:
        return np.full((len(returns), len(nodes)), np.nan), 0, censored
    rates = misses / done
    return rates[[row_of[int(N)] for N in returns]], done, censored


def mc_under_bound(rate: float, bound: float, walks: int, sigmas: float = 3.0) -> bool:
    """rate <= bound up to `sigmas` binomial stderr at the bound (floored at one miss in `walks`)."""
    if walks <= 0 or math.isnan(rate):
        return False
    se = math.sqrt(max(bound * (1.0 - bound), 1.0 / walks) / walks)
    return rate <= bound + sigmas * se


@dataclass(frozen=True)
class MissBound:
    z: int
    depth: int
    vbar: float
    p_z: float
    returns: int
    exact_miss: float
    bound: float
    c7: float
    mode: str
    mc_miss: float = math.nan
    mc_stderr: float = math.nan
    walks: int = 0
    censored: int = 0

    @property
    def holds(self) -> bool:
        """(1 - p_z)^N under the bound."""
        return self.exact_miss <= self.bound * (1.0 + 1e-12)

    @property
    def mc_holds(self) -> Optional[bool]:
        if self.walks == 0:
            return None
        return mc_under_bound(self.mc_miss, self.bound, self.walks)

    def as_dict(self) -> Dict[str, object]:
        return {
            "z": self.z,
            "depth": self.depth,
            "vbar": self.vbar,
            "p_z": self.p_z,
            "returns": self.returns,
            "mc_miss": self.mc_miss,
            "mc_stderr": self.mc_stderr,
            "exact_miss": self.exact_miss,
            "bound": self.bound,
            "c7": self.c7,
            "mode": self.mode,
            "walks": self.walks,
        }


def fit_c7(arena: TreeArena, nodes: Sequence[int], safety: float = 0.5) -> float:
    """Largest c7 making the bound valid on `nodes`, times `safety`."""
    vals = []
    for z in nodes:
        p = root_excursion_hit(arena, z)
        vals.append(-math.log1p(-p) * arena.depth[z] * math.exp(arena.Vbar[z]))
    return safety * min(vals)


def miss_constant(spec: EnvironmentSpec, c7: Optional[float], surrogate: bool) -> Tuple[float, str]:
    if c7 is None:
        if spec.alpha is not None:
            return ellipticity_c7(spec.alpha, spec.N0), "ellipticity"
        if surrogate:
            return ellipticity_c7(None, spec.N0 or spec.max_offspring, envspec.require_alpha(spec, surrogate=True)), "surrogate_alpha"
        raise EllipticityRequiredError(f"{spec.name} has ellipticity off: pass surrogate=True or a fitted c7")
    if spec.alpha is None and not surrogate:
        raise EllipticityRequiredError(f"{spec.name} has ellipticity off: pass surrogate=True")
    return c7, "fitted" if spec.alpha is not None else "fitted_surrogate"


def closed_form_miss(arena: TreeArena, z: int, N: int, c7: float) -> Tuple[float, float, float]:
    """(p_z, (1 - p_z)^N, min(1, exp(-c7 N e^{-Vbar(z)} / |z|)))."""
    p = root_excursion_hit(arena, z)
    miss = math.exp(N * math.log1p(-p)) if p < 1.0 else 0.0
    bound = min(1.0, math.exp(-c7 * N * math.exp(-arena.Vbar[z]) / arena.depth[z]))
    return p, miss, bound


def miss_probability_bound(
    arena: TreeArena,
    z: int,
    n_returns: float,
    kappa: Optional[float] = None,
    c7: Optional[float] = None,
    surrogate: bool = False,
    walks: int = 0,
    rng: Optional[random.Random] = None,
    step_cap: int = 10**7,
) -> MissBound:
    """
    P(T_root^{N} < T_z) with N = ceil(n_returns^kappa): the walk estimate over `walks` quenched
    walks (skipped when walks == 0), the exact (1 - p_z)^N and the bound
    min(1, exp(-c7 N e^{-Vbar(z)} / |z|)).

    Without ellipticity the constant is refused unless `surrogate` asks for the |log A|
    quantile stand-in.
    """
    c7, mode = miss_constant(arena.spec, c7, surrogate)
    N = excursion_count(n_returns, kappa)
    p, miss, bound = closed_form_miss(arena, z, N, c7)
    mc, se, done, censored = math.nan, math.nan, 0, 0
    if walks > 0:
        if rng is None:
            raise ValueError("walks > 0 needs an rng")
        rates, done, censored = mc_miss_rates(arena, [z], [N], walks, rng, step_cap)
        mc = float(rates[0, 0])
        se = math.sqrt(mc * (1.0 - mc) / done) if done else math.nan
    return MissBound(z, arena.depth[z], arena.Vbar[z], p, N, miss, bound, c7, mode, mc, se, done, censored)


def union_miss_bound(arena: TreeArena, nodes: Sequence[int], n_returns: float, c7: float) -> Tuple[float, float]:
    """
    (sum_z (1 - p_z)^N, |nodes| exp(-c7 N e^{-max Vbar} / ell)): the exact union bound over
    `nodes` and its closed form, ell being the deepest generation among them.
    """
    if not nodes:
        return 0.0, 0.0
    exact = math.fsum(math.exp(n_returns * math.log1p(-root_excursion_hit(arena, z))) for z in nodes)
    vmax = max(arena.Vbar[z] for z in nodes)
    ell = max(arena.depth[z] for z in nodes)
    closed = len(nodes) * math.exp(-c7 * n_returns * math.exp(-vmax) / ell)
    return exact, closed
