from __future__ import annotations

import bisect
import logging
import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from src.core.errors import ReturnIndexError
from src.domain.walk import WalkSummary
from src.services.tree import FRONTIER, ROOT, TreeArena

logger = logging.getLogger(__name__)

# the extra vertex above the root; p(PARENT_OF_ROOT, root) = 1
PARENT_OF_ROOT = FRONTIER


@dataclass
class WalkState:
    """
    Quenched walk X on one arena.

    local_times counts visits at times 1..steps (X_0 = root is not counted) and includes
    PARENT_OF_ROOT, so sum(local_times.values()) == steps. first_visits[m] lists, in increasing
    order, the first-visit times of the generation-m vertices seen so far.
    """

    position: int = ROOT
    steps: int = 0
    returns: int = 0
    return_times: List[int] = field(default_factory=list)
    local_times: Dict[int, int] = field(default_factory=dict)
    first_visit: Dict[int, int] = field(default_factory=dict)
    first_visits: List[List[int]] = field(default_factory=lambda: [[]])
    max_depth: int = 0
    censored: bool = False

    @property
    def Xstar(self) -> int:
        return self.max_depth

    def local_time(self, z: int) -> int:
        return self.local_times.get(z, 0)

    def visited(self, z: int) -> bool:
        return z in self.first_visit

    def M(self, m: int, t: Optional[int] = None) -> int:
        """M_t(m): generation-m vertices visited during times 1..t (t defaults to now)."""
        if m >= len(self.first_visits):
            return 0
        times = self.first_visits[m]
        if t is None or t >= self.steps:
            return len(times)
        return bisect.bisect_right(times, t)


def next_vertex(arena: TreeArena, x: int, u: float) -> int:
    """Transition from x driven by a uniform u in [0, 1)."""
    if x == PARENT_OF_ROOT:
        return ROOT
    kids = arena.extend_at(x)
    total = arena.child_weight_sum[x]
    target = u * (total + 1.0)
    if target >= total:
        return arena.parent[x]
    acc = 0.0
    A = arena.A
    for c in kids:
        acc += A[c]
        if target < acc:
            return c
    return kids[-1]


def _record(walk: WalkState, arena: TreeArena, y: int) -> None:
    walk.steps += 1
    t = walk.steps
    walk.position = y
    lt = walk.local_times
    lt[y] = lt.get(y, 0) + 1
    if y == PARENT_OF_ROOT:
        return
    if y not in walk.first_visit:
        walk.first_visit[y] = t
        d = arena.depth[y]
        while len(walk.first_visits) <= d:
            walk.first_visits.append([])
        walk.first_visits[d].append(t)
        if d > walk.max_depth:
            walk.max_depth = d
    if y == ROOT:
        walk.returns += 1
        walk.return_times.append(t)


def step(walk: WalkState, arena: TreeArena, rng: random.Random) -> int:
    y = next_vertex(arena, walk.position, rng.random())
    _record(walk, arena, y)
    return y


def _run(walk: WalkState, arena: TreeArena, rng: random.Random, n_returns: Optional[int], max_steps: int) -> WalkState:
    uniform = rng.random
    first_child = arena.first_child
    n_children = arena.n_children
    cws = arena.child_weight_sum
    A = arena.A
    parent = arena.parent
    record = _record
    x = walk.position
    while walk.steps < max_steps:
        if n_returns is not None and walk.returns >= n_returns:
            break
        if x == PARENT_OF_ROOT:
            y = ROOT
        else:
            if first_child[x] == FRONTIER:
                arena.extend_at(x)
            total = cws[x]
            target = uniform() * (total + 1.0)
            if target >= total:
                y = parent[x]
            else:
                start = first_child[x]
                end = start + n_children[x]
                acc = 0.0
                y = end - 1
                for c in range(start, end):
                    acc += A[c]
                    if target < acc:
                        y = c
                        break
        record(walk, arena, y)
        x = y
    return walk


def run_until_returns(
    walk: WalkState,
    arena: TreeArena,
    rng: random.Random,
    n_returns: int,
    step_cap: int,
) -> WalkState:
    """Advance to T_root^{n_returns}; hitting step_cap first marks the walk censored."""
    if n_returns < 1:
        raise ValueError("n_returns must be >= 1")
    _run(walk, arena, rng, n_returns, step_cap)
    if walk.returns < n_returns:
        walk.censored = True
        logger.debug(f"🚶 [walker] censored at {walk.steps} steps with {walk.returns}/{n_returns} returns")
    return walk


def run_steps(walk: WalkState, arena: TreeArena, rng: random.Random, n_steps: int) -> WalkState:
    """Advance until walk.steps == n_steps."""
    return _run(walk, arena, rng, None, n_steps)


@dataclass(frozen=True)
class Observables:
    M: Dict[int, int]
    R: int
    Xstar: int
    steps: int


def fully_visited_generations(walk: WalkState, arena: TreeArena, r_cap: int = 200) -> int:
    """
    R = sup{k : every generation-k vertex is visited}, growing each generation on demand
    (visited vertices may still be on the frontier). Stops at an empty generation or r_cap.
    """
    visited = walk.first_visit
    level = [ROOT]
    R = 0
    for k in range(1, r_cap + 1):
        nxt: List[int] = []
        for x in level:
            nxt.extend(arena.extend_at(x))
        if not nxt or any(c not in visited for c in nxt):
            return R
        R = k
        level = nxt
    logger.warning(f"⚠️ [walker] R reached r_cap={r_cap}")
    return R


def observables(walk: WalkState, arena: TreeArena, generations: Sequence[int], r_cap: int = 200) -> Observables:
    if walk.steps < 1:
        raise ValueError("walk has not moved")
    M = {int(m): walk.M(int(m)) for m in generations}
    return Observables(M, fully_visited_generations(walk, arena, r_cap), walk.max_depth, walk.steps)


def K_of(walk: WalkState, m: int, n_returns: int) -> int:
    """K_n(m) = M_{T^n}(m); T^0 = 0 so K_0(m) = 0 for m >= 1."""
    if n_returns < 0:
        raise ReturnIndexError("return index must be >= 0")
    if n_returns == 0:
        return 0
    if n_returns > walk.returns:
        raise ReturnIndexError(f"asked for return {n_returns}, walk completed {walk.returns}")
    return walk.M(m, walk.return_times[n_returns - 1])


def summarize(walk: WalkState, arena: TreeArena, seed: int, generations: Sequence[int], n_returns: Optional[int] = None, r_cap: int = 200) -> WalkSummary:
    obs = observables(walk, arena, generations, r_cap) if walk.steps else None
    K: Dict[int, int] = {}
    if n_returns is not None and walk.returns >= n_returns:
        K = {int(m): K_of(walk, int(m), n_returns) for m in generations}
    return WalkSummary(
        seed=seed,
        steps=walk.steps,
        returns=walk.returns,
        censored=walk.censored,
        Xstar=walk.max_depth,
        R=obs.R if obs else None,
        M=obs.M if obs else {},
        K=K,
        root_local_time=walk.local_time(ROOT),
    )
