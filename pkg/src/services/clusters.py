from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.errors import InfeasiblePlanError, OverlappingExtentsError
from src.domain.environment import EnvironmentSpec
from src.services import envspec
from src.services.tree import FRONTIER, ROOT, TreeArena
from src.services.walker import WalkState

logger = logging.getLogger(__name__)

Extent = Tuple[int, int]


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 700.0 else math.inf


# ---------------------------------------------------------------------------
# clusters and Neveu spacing
# ---------------------------------------------------------------------------


def cluster_of(arena: TreeArena, z: int, m: int) -> List[int]:
    """C_m(z): generation-m descendants of z in Neveu order; C_{|z|}(z) = [z]."""
    return arena.descendants_at(z, m)


def _ranks(arena: TreeArena, generation: int, nodes: Sequence[int]) -> List[int]:
    arena.require_generation(generation)
    rank = arena.neveu_rank(generation)
    try:
        return [rank[x] for x in nodes]
    except KeyError as exc:
        raise ValueError(f"node {exc.args[0]} is not in generation {generation}") from None


def neveu_distance(arena: TreeArena, generation: int, set_a: Sequence[int], set_b: Sequence[int]) -> int:
    """Number of generation individuals strictly between sup(set_a) and inf(set_b)."""
    ra = _ranks(arena, generation, set_a)
    rb = _ranks(arena, generation, set_b)
    if not ra or not rb:
        raise ValueError("neveu_distance needs two non-empty sets")
    if max(ra) >= min(rb):
        raise OverlappingExtentsError(f"sup of A (rank {max(ra)}) is not left of inf of B (rank {min(rb)})")
    return min(rb) - max(ra) - 1


def d_statistic(extents: Sequence[Extent]) -> float:
    """
    D = min_j (inf D_{j+2} - sup D_j), each term counting the individuals strictly between.

    Skips one cluster; families with fewer than three clusters have D = inf.
    """
    for (_, hi), (lo, _) in zip(extents, extents[1:]):
        if hi >= lo:
            raise OverlappingExtentsError(f"extent ending at rank {hi} overlaps the next one starting at {lo}")
    if len(extents) < 3:
        return math.inf
    return float(min(extents[j + 2][0] - extents[j][1] - 1 for j in range(len(extents) - 2)))


@dataclass
class ClusterSet:
    generation: int
    roots: List[int]
    clusters: List[List[int]]
    neveu_extents: List[Extent]

    @property
    def D_statistic(self) -> float:
        return d_statistic(self.neveu_extents)

    def __len__(self) -> int:
        return len(self.clusters)


def cluster_set(arena: TreeArena, roots: Sequence[int], m: int) -> ClusterSet:
    """Clusters C_m(z) for the given roots, ordered left to right; empty clusters are dropped."""
    arena.require_generation(m)
    rank = arena.neveu_rank(m)
    items = []
    for z in roots:
        members = cluster_of(arena, z, m)
        if members:
            items.append((rank[members[0]], rank[members[-1]], z, members))
    items.sort()
    return ClusterSet(
        generation=m,
        roots=[it[2] for it in items],
        clusters=[it[3] for it in items],
        neveu_extents=[(it[0], it[1]) for it in items],
    )


# ---------------------------------------------------------------------------
# regular cuts
# ---------------------------------------------------------------------------


@dataclass
class CutPlan:
    """
    Regular cuts: k_n levels, level i has clusters rooted at (i-1)(r_n + h_n) ending at
    i r_n + (i-1) h_n, with k_n r_n + (k_n - 1) h_n = ell.
    """

    zeta: float
    delta: float
    epsilon: float
    case: str
    k_exp: float
    r_exp: float
    s_exp: float
    log_n: float
    phi: float
    ell_target: float
    ell: int
    k_n: int
    r_n: int
    h_n: int
    s_n: float
    alpha: float
    psi0: float
    slack: float
    notes: List[str] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def degenerate(self) -> bool:
        return self.k_n < 2

    def require_feasible(self) -> "CutPlan":
        if self.violations:
            raise InfeasiblePlanError(f"cut plan infeasible: {self.violations[0]}", plan=self)
        return self

    def root_generation(self, i: int) -> int:
        return (i - 1) * (self.r_n + self.h_n)

    def end_generation(self, i: int) -> int:
        return i * self.r_n + (i - 1) * self.h_n

    def barrier(self, i: int) -> float:
        """Vbar bound i (alpha r_n + s_n) of the level-i recursion step."""
        return i * (self.alpha * self.r_n + self.s_n)

    def levels(self) -> range:
        return range(1, self.k_n + 1)

    def log_m_nominal(self) -> float:
        return self.psi0 * self.h_n / 2.0

    def log_q_nominal(self, i: int) -> float:
        return self.psi0 * self.r_n * (i - 1) / 2.0

    def m_nominal(self) -> float:
        return _exp_or_inf(self.log_m_nominal())

    def q_nominal(self, i: int) -> float:
        return _exp_or_inf(self.log_q_nominal(i))

    def as_dict(self) -> Dict[str, object]:
        return {
            "zeta": self.zeta,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "case": self.case,
            "k": self.k_exp,
            "r": self.r_exp,
            "s": self.s_exp,
            "log_n": self.log_n,
            "phi": self.phi,
            "ell_target": self.ell_target,
            "ell": self.ell,
            "k_n": self.k_n,
            "r_n": self.r_n,
            "h_n": self.h_n,
            "s_n": self.s_n,
            "alpha": self.alpha,
            "slack": self.slack,
            "feasible": self.feasible,
            "violations": list(self.violations),
            "notes": list(self.notes),
        }


def cut_exponents(zeta: float, delta: float) -> Tuple[str, float, float, float, Optional[str]]:
    """(case, k, r, s, problem) from the two zeta cases."""
    if zeta <= 1.0:
        problem = None if 0.0 < delta < zeta / 2.0 else f"delta={delta} outside (0, zeta/2) for zeta={zeta}"
        return "zeta<=1", delta / 2.0, (1.0 - zeta) / 2.0 + delta / 2.0, (1.0 + zeta) / 2.0 - delta, problem
    problem = None if 0.0 < delta < (2.0 - zeta) / 3.0 else f"delta={delta} outside (0, (2-zeta)/3) for zeta={zeta}"
    return "zeta>1", delta, (1.0 + zeta - 4.0 * delta) / 3.0, (1.0 + zeta) / 3.0, problem


def _plan_alpha(spec: EnvironmentSpec, notes: List[str]) -> float:
    if spec.alpha is not None:
        return spec.alpha
    notes.append("alpha from the |log A| surrogate quantile")
    return envspec.require_alpha(spec, surrogate=True)


def _finish_plan(plan: CutPlan, problems: List[str]) -> CutPlan:
    plan.violations.extend(problems)
    if plan.k_n < 2:
        plan.violations.append(f"k_n={plan.k_n} < 2 (degenerate plan)")
    if plan.r_n < 1:
        plan.violations.append(f"r_n={plan.r_n} < 1")
    if plan.k_n >= 2 and plan.h_n < 1:
        plan.violations.append(f"h_n={plan.h_n} < 1")
    if plan.slack < 0.0:
        plan.violations.append(f"k_n(alpha r_n + s_n) - s_n exceeds Phi(1 - 2 eps) by {-plan.slack:.6g}")
    if plan.violations:
        logger.warning(f"⚠️ [clusters] cut plan infeasible: {plan.violations[0]}")
    return plan


def build_cut_plan(
    spec: EnvironmentSpec,
    log_n: float,
    zeta: float,
    epsilon: float,
    delta: float,
    phi: Optional[float] = None,
) -> CutPlan:
    """
    Sizes k_n = floor(L^k), r_n = floor(L^r), s_n = L^s with L = log n and ell = floor(L^{1+zeta}).
    h_n = floor((ell - k_n r_n)/(k_n - 1)) and ell is then trimmed to k_n r_n + (k_n - 1) h_n, so the
    telescoping identity holds exactly; the trimmed amount is noted.
    """
    problems: List[str] = []
    notes: List[str] = []
    if not 0.0 < zeta < 2.0:
        problems.append(f"zeta={zeta} outside (0, 2)")
    if not 0.0 < epsilon < 0.5:
        problems.append(f"epsilon={epsilon} outside (0, 1/2)")
    if log_n <= 1.0:
        problems.append(f"log n={log_n} must exceed 1")
    case, k, r, s, delta_problem = cut_exponents(zeta, delta)
    if delta_problem:
        problems.append(delta_problem)
    phi = log_n if phi is None else phi
    L = max(log_n, 1.0)
    ell_target = L ** (1.0 + zeta)
    ell = int(math.floor(ell_target))
    k_n = int(math.floor(L**k))
    r_n = int(math.floor(L**r))
    s_n = L**s
    if k_n >= 2:
        h_n = (ell - k_n * r_n) // (k_n - 1)
        repaired = k_n * r_n + (k_n - 1) * h_n
        if repaired != ell:
            notes.append(f"ell trimmed from {ell} to {repaired} for the telescoping identity")
            ell = repaired
    else:
        h_n = 0
    alpha = _plan_alpha(spec, notes)
    slack = phi * (1.0 - 2.0 * epsilon) - (k_n * (alpha * r_n + s_n) - s_n)
    plan = CutPlan(
        zeta=zeta,
        delta=delta,
        epsilon=epsilon,
        case=case,
        k_exp=k,
        r_exp=r,
        s_exp=s,
        log_n=log_n,
        phi=phi,
        ell_target=ell_target,
        ell=ell,
        k_n=k_n,
        r_n=r_n,
        h_n=h_n,
        s_n=s_n,
        alpha=alpha,
        psi0=envspec.psi(spec, 0.0),
        slack=slack,
        notes=notes,
    )
    return _finish_plan(plan, problems)


def scaled_cut_plan(
    spec: EnvironmentSpec,
    k_n: int,
    r_n: int,
    h_n: int,
    s_n: float,
    log_n: float,
    epsilon: float = 0.1,
    zeta: float = math.nan,
) -> CutPlan:
    """Plan with explicit desk-scale sizes; the exponents are not used."""
    notes = ["scaled sizes"]
    alpha = _plan_alpha(spec, notes)
    ell = k_n * r_n + (k_n - 1) * h_n
    plan = CutPlan(
        zeta=zeta,
        delta=math.nan,
        epsilon=epsilon,
        case="scaled",
        k_exp=math.nan,
        r_exp=math.nan,
        s_exp=math.nan,
        log_n=log_n,
        phi=log_n,
        ell_target=float(ell),
        ell=ell,
        k_n=k_n,
        r_n=r_n,
        h_n=h_n,
        s_n=s_n,
        alpha=alpha,
        psi0=envspec.psi(spec, 0.0),
        slack=log_n * (1.0 - 2.0 * epsilon) - (k_n * (alpha * r_n + s_n) - s_n),
        notes=notes,
    )
    return _finish_plan(plan, [])


# ---------------------------------------------------------------------------
# events A_i(m, q)
# ---------------------------------------------------------------------------


def greedy_family(extents: Sequence[Extent], m: float) -> List[int]:
    """
    Largest family (indices into `extents`, left to right) with D >= m.

    Takes each cluster as soon as it is at least m individuals past the one picked two steps
    earlier; extents are disjoint and ordered, so the earliest choice never hurts later picks.
    """
    chosen: List[int] = []
    for idx, (lo, _) in enumerate(extents):
        if len(chosen) < 2 or lo - extents[chosen[-2]][1] - 1 >= m:
            chosen.append(idx)
    return chosen


def exhaustive_family(extents: Sequence[Extent], m: float) -> List[int]:
    """Largest family with D >= m by trying every subset, largest first (small inputs only)."""
    n = len(extents)
    if n > 20:
        raise ValueError(f"exhaustive search over {n} clusters is too large")
    for size in range(n, 0, -1):
        for combo in itertools.combinations(range(n), size):
            if d_statistic([extents[i] for i in combo]) >= m:
                return list(combo)
    return []


@dataclass
class LevelEvent:
    level: int
    root_gen: int
    end_gen: int
    m: float
    q: float
    candidates: int
    fully_visited: int
    q_found: int
    D_found: float
    family: List[int]
    holds: bool
    m_nominal: float
    q_nominal: float

    def as_record(self) -> Dict[str, object]:
        return {
            "level": self.level,
            "root_gen": self.root_gen,
            "end_gen": self.end_gen,
            "m": self.m,
            "q": self.q,
            "candidates": self.candidates,
            "fully_visited": self.fully_visited,
            "q_found": self.q_found,
            "D_found": self.D_found,
            "holds": self.holds,
            "m_nominal": self.m_nominal,
            "q_nominal": self.q_nominal,
            "witness_ids": list(self.family),
        }


def _fully_visited(walk: WalkState, members: Sequence[int]) -> bool:
    return all(walk.visited(y) for y in members)


def scan_A_events(
    arena: TreeArena,
    walk: WalkState,
    plan: CutPlan,
    m: float,
    q: float,
    levels: Optional[Sequence[int]] = None,
) -> List[LevelEvent]:
    """
    For each level i, whether some family of fully visited clusters C_{end}(z), |z| = root gen,
    has at least q members and spacing D >= m. The level's generations are grown on demand.
    """
    out: List[LevelEvent] = []
    for i in levels or plan.levels():
        g0, g1 = plan.root_generation(i), plan.end_generation(i)
        arena.complete_to_depth(g1)
        cs = cluster_set(arena, arena.generation(g0), g1)
        visited_idx = [j for j, members in enumerate(cs.clusters) if _fully_visited(walk, members)]
        extents = [cs.neveu_extents[j] for j in visited_idx]
        picked = greedy_family(extents, m)
        family = [cs.roots[visited_idx[j]] for j in picked]
        D = d_statistic([extents[j] for j in picked]) if picked else math.inf
        out.append(
            LevelEvent(
                level=i,
                root_gen=g0,
                end_gen=g1,
                m=m,
                q=q,
                candidates=len(cs),
                fully_visited=len(visited_idx),
                q_found=len(picked),
                D_found=D,
                family=family,
                holds=len(picked) >= q,
                m_nominal=plan.m_nominal(),
                q_nominal=plan.q_nominal(i),
            )
        )
    return out


# ---------------------------------------------------------------------------
# recursive construction along the cuts
# ---------------------------------------------------------------------------


def leftmost_below(arena: TreeArena, z: int, depth: int, bound: float) -> int:
    """Neveu-leftmost u > z with |u| = depth and Vbar(u) <= bound, or FRONTIER if none; grows lazily."""
    stack = [z]
    while stack:
        x = stack.pop()
        if arena.depth[x] == depth:
            return x
        kids = arena.extend_at(x)
        for c in reversed(kids):
            if arena.Vbar[c] <= bound:
                stack.append(c)
    return FRONTIER


@dataclass
class RegularCuts:
    plan: CutPlan
    anchors: List[List[int]]
    clusters: List[ClusterSet]
    missing: int

    @property
    def realised(self) -> bool:
        return self.missing == 0


def regular_cut_clusters(arena: TreeArena, plan: CutPlan) -> RegularCuts:
    """
    Starting from the root, level i takes the clusters C_{i r_n + (i-1) h_n}(z) of the current
    anchors, and every member z_i gets a new anchor: the leftmost u > z_i at generation
    i (r_n + h_n) with Vbar(u) <= i (alpha r_n + s_n). `missing` counts members with no anchor.
    """
    plan.require_feasible()
    anchors: List[List[int]] = [[ROOT]]
    sets: List[ClusterSet] = []
    missing = 0
    for i in plan.levels():
        g1 = plan.end_generation(i)
        members_by_root = {}
        for z in anchors[-1]:
            for y in arena.descendants_at(z, g1, grow=True):
                members_by_root.setdefault(z, []).append(y)
        arena.complete_to_depth(g1)
        sets.append(cluster_set(arena, list(members_by_root), g1))
        if i == plan.k_n:
            break
        nxt: List[int] = []
        for members in members_by_root.values():
            for zi in members:
                u = leftmost_below(arena, zi, i * (plan.r_n + plan.h_n), plan.barrier(i))
                if u == FRONTIER:
                    missing += 1
                else:
                    nxt.append(u)
        anchors.append(nxt)
    if missing:
        logger.info(f"🌳 [clusters] recursive cuts: {missing} members without an anchor")
    return RegularCuts(plan, anchors, sets, missing)


# ---------------------------------------------------------------------------
# witnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Witness:
    z: int
    root_gen: int
    ell: int
    fraction: float
    size: int
    scanned: int

    @property
    def full(self) -> bool:
        return self.size > 0 and self.fraction == 1.0


def witness_root_generation(ell: int, offset: float) -> Tuple[int, bool]:
    """ell - offset rounded down and clamped to [1, ell - 1]; the flag says whether it was clamped."""
    raw = int(math.floor(ell - offset))
    gen = min(max(raw, 1), max(ell - 1, 1))
    return gen, gen != raw


def visited_at(arena: TreeArena, walk: WalkState, generation: int) -> List[int]:
    """Visited generation vertices in first-visit order."""
    hits = [(t, x) for x, t in walk.first_visit.items() if arena.depth[x] == generation]
    hits.sort()
    return [x for _, x in hits]


def witness_full_cluster(arena: TreeArena, walk: WalkState, ell: int, root_gen: int) -> Witness:
    """
    The generation-root_gen vertex whose cluster at ell has the largest visited fraction.

    Only visited roots can score above 0 (visited sets are connected to the root), so the scan
    runs over them; their clusters are grown on demand.
    """
    if not 0 <= root_gen <= ell:
        raise ValueError(f"root_gen={root_gen} outside [0, {ell}]")
    roots = visited_at(arena, walk, root_gen) if root_gen else [ROOT]
    best = Witness(FRONTIER, root_gen, ell, 0.0, 0, len(roots))
    for z in roots:
        members = arena.descendants_at(z, ell, grow=True)
        if not members:
            continue
        frac = sum(1 for y in members if walk.visited(y)) / len(members)
        if frac > best.fraction or best.z == FRONTIER:
            best = Witness(z, root_gen, ell, frac, len(members), len(roots))
            if frac == 1.0:
                break
    return best


@dataclass(frozen=True)
class SpreadWitness:
    ancestor_gen: int
    ell: int
    value: Optional[int]
    worst: int
    ancestors: int
    extinct: int

    @property
    def indicator(self) -> bool:
        return self.value is not None and self.value >= 1


def witness_spread(
    arena: TreeArena,
    walk: WalkState,
    ell: int,
    ancestor_gen: int,
    skip_extinct: bool = False,
) -> SpreadWitness:
    """
    min over |z| = ancestor_gen of max_{y > z, |y| = ell} local time of y.

    An ancestor with no generation-ell descendant scores 0 unless skip_extinct leaves it out;
    value is None (worst FRONTIER) when no ancestor is left.
    """
    if not 0 <= ancestor_gen <= ell:
        raise ValueError(f"ancestor_gen={ancestor_gen} outside [0, {ell}]")
    arena.complete_to_depth(ancestor_gen)
    ancestors = arena.generation(ancestor_gen)
    best: Dict[int, int] = {z: 0 for z in ancestors}
    for y in visited_at(arena, walk, ell):
        z = arena.ancestor_at(y, ancestor_gen)
        best[z] = max(best[z], walk.local_time(y))
    value: Optional[int] = None
    worst = FRONTIER
    extinct = 0
    for z in ancestors:
        if best[z] == 0 and leftmost_below(arena, z, ell, math.inf) == FRONTIER:
            extinct += 1
            if skip_extinct:
                continue
        if value is None or best[z] < value:
            value, worst = best[z], z
    return SpreadWitness(ancestor_gen, ell, value, worst, len(ancestors), extinct)
