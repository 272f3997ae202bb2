from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import ConvergenceError, NodeCapExceededError, NotAncestorError, SubtreeNotGrownError
from src.domain.environment import DiscreteWeights, EnvironmentSpec, LogNormalWeights, WeightLaw

logger = logging.getLogger(__name__)

ROOT = 0
FRONTIER = -1
MAX_SURVIVAL_RESAMPLES = 100_000


def sample_weights(law: WeightLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    """size i.i.d. draws of A."""
    if size == 0:
        return np.zeros(0)
    if isinstance(law, DiscreteWeights):
        if len(law.values) == 1:
            return np.full(size, law.values[0])
        return rng.choice(np.asarray(law.values), size=size, p=np.asarray(law.probs))
    if isinstance(law, LogNormalWeights):
        return np.exp(rng.normal(law.m, math.sqrt(law.s2), size=size))
    raise TypeError(f"unsupported weight law {type(law).__name__}")


@dataclass(frozen=True)
class Node:
    """Read-only view of one arena record."""

    id: int
    parent: int
    depth: int
    A: float
    V: float
    Vbar: float
    children: Tuple[int, ...]
    frontier: bool


@dataclass(frozen=True)
class GenerationStats:
    k: int
    Z: int
    W: float
    min_vbar: float
    max_vbar: float
    argmin: int


class TreeArena:
    """
    Append-only Galton-Watson tree with its environment.

    Records are parallel lists indexed by node id; node 0 is the root with V = 0 and
    Vbar = -inf (the running max is taken over ]]root, x]]). Children of a node are
    created in one call and occupy the contiguous id range
    first_child[x] .. first_child[x] + n_children[x] - 1; first_child[x] == -1 marks the
    frontier. Arena content is a deterministic function of the rng and of the sequence
    of growth calls.
    """

    def __init__(
        self,
        spec: EnvironmentSpec,
        rng: np.random.Generator,
        node_cap: int = 10**8,
        condition_on_survival: bool = True,
    ) -> None:
        self.spec = spec
        self.rng = rng
        self.node_cap = int(node_cap)
        self.condition_on_survival = condition_on_survival
        self.survival_resamples = 0
        self._ks, self._ps = spec.offspring_arrays()
        self._reset()

    # ------------------------------------------------------------------
    # storage
    # ------------------------------------------------------------------

    def _reset(self) -> None:
        self.parent: List[int] = [FRONTIER]
        self.depth: List[int] = [0]
        self.A: List[float] = [math.nan]
        self.V: List[float] = [0.0]
        self.Vbar: List[float] = [-math.inf]
        self.first_child: List[int] = [FRONTIER]
        self.n_children: List[int] = [0]
        self.child_weight_sum: List[float] = [0.0]
        self.by_depth: List[List[int]] = [[ROOT]]
        self.unextended: List[int] = [1]
        self._order_cache: Dict[int, Tuple[int, List[int], Dict[int, int]]] = {}

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def max_depth(self) -> int:
        return len(self.by_depth) - 1

    def is_frontier(self, x: int) -> bool:
        return self.first_child[x] == FRONTIER

    def children(self, x: int) -> range:
        start = self.first_child[x]
        if start == FRONTIER:
            raise SubtreeNotGrownError(f"node {x} is on the frontier: grow first")
        return range(start, start + self.n_children[x])

    def node(self, x: int) -> Node:
        frontier = self.is_frontier(x)
        kids: Tuple[int, ...] = () if frontier else tuple(self.children(x))
        return Node(x, self.parent[x], self.depth[x], self.A[x], self.V[x], self.Vbar[x], kids, frontier)

    def records(self) -> List[Tuple[int, int, int, float, float, float]]:
        return [
            (i, self.parent[i], self.depth[i], self.A[i], self.V[i], self.Vbar[i]) for i in range(len(self.parent))
        ]

    def frontier_ids(self) -> List[int]:
        return [i for i, f in enumerate(self.first_child) if f == FRONTIER]

    @classmethod
    def from_records(
        cls,
        spec: EnvironmentSpec,
        rows: Sequence[Tuple[int, int, int, float, float, float]],
        frontier: Sequence[int],
        rng: Optional[np.random.Generator] = None,
    ) -> "TreeArena":
        """Rebuild an arena from (id, parent, depth, A, V, Vbar) rows ordered by id."""
        arena = cls(spec, rng or np.random.default_rng(0), condition_on_survival=False)
        frontier_set = set(int(x) for x in frontier)
        if not rows or rows[0][0] != ROOT:
            raise ValueError("tree records must start with the root (id 0)")
        kids: Dict[int, List[int]] = {}
        for i, row in enumerate(rows):
            if row[0] != i:
                raise ValueError(f"tree records out of order at line {i}: id {row[0]}")
            if i:
                kids.setdefault(int(row[1]), []).append(i)
        arena.parent = [int(r[1]) for r in rows]
        arena.depth = [int(r[2]) for r in rows]
        arena.A = [float(r[3]) for r in rows]
        arena.V = [float(r[4]) for r in rows]
        arena.Vbar = [float(r[5]) for r in rows]
        n = len(rows)
        arena.first_child = [FRONTIER] * n
        arena.n_children = [0] * n
        arena.child_weight_sum = [0.0] * n
        top = max(arena.depth)
        arena.by_depth = [[] for _ in range(top + 1)]
        arena.unextended = [0] * (top + 1)
        for i in range(n):
            arena.by_depth[arena.depth[i]].append(i)
            if i in frontier_set:
                arena.unextended[arena.depth[i]] += 1
                continue
            c = kids.get(i, [])
            if c and c != list(range(c[0], c[0] + len(c))):
                raise ValueError(f"children of node {i} are not contiguous")
            arena.first_child[i] = c[0] if c else n
            arena.n_children[i] = len(c)
            arena.child_weight_sum[i] = math.fsum(arena.A[j] for j in c)
        return arena

    # ------------------------------------------------------------------
    # sampling
    # ------------------------------------------------------------------

    def _sample_counts(self, size: int) -> np.ndarray:
        if len(self._ks) == 1:
            return np.full(size, int(self._ks[0]), dtype=np.int64)
        return self.rng.choice(self._ks, size=size, p=self._ps)

    def _extend_many(self, nodes: Sequence[int]) -> int:
        todo = [x for x in nodes if self.first_child[x] == FRONTIER]
        if not todo:
            return 0
        counts = self._sample_counts(len(todo)).tolist()
        total = int(sum(counts))
        if len(self.parent) + total > self.node_cap:
            raise NodeCapExceededError(
                f"growing {len(todo)} nodes needs {len(self.parent) + total} > node_cap={self.node_cap}"
            )
        weights = sample_weights(self.spec.weights, self.rng, total).tolist()
        pos = 0
        for x, c in zip(todo, counts):
            start = len(self.parent)
            d = self.depth[x] + 1
            if d >= len(self.by_depth):
                self.by_depth.append([])
                self.unextended.append(0)
            vx, bx = self.V[x], self.Vbar[x]
            level = self.by_depth[d]
            acc = 0.0
            for a in weights[pos : pos + c]:
                v = vx - math.log(a)
                self.parent.append(x)
                self.depth.append(d)
                self.A.append(a)
                self.V.append(v)
                self.Vbar.append(v if v > bx else bx)
                self.first_child.append(FRONTIER)
                self.n_children.append(0)
                self.child_weight_sum.append(0.0)
                level.append(len(self.parent) - 1)
                acc += a
            pos += c
            self.first_child[x] = start
            self.n_children[x] = c
            self.child_weight_sum[x] = acc
            self.unextended[d - 1] -= 1
            self.unextended[d] += c
        return total

    def extend_at(self, x: int) -> range:
        """Sample the children of x once; later calls return the same handles."""
        if self.first_child[x] == FRONTIER:
            self._extend_many([x])
        return self.children(x)

    def ensure_children(self, x: int) -> range:
        return self.extend_at(x)

    def _grow(self, depth: int) -> List[int]:
        for d in range(depth):
            if d >= len(self.by_depth):
                break
            self._extend_many(list(self.by_depth[d]))
        while len(self.by_depth) <= depth:
            self.by_depth.append([])
            self.unextended.append(0)
        return [len(self.by_depth[d]) for d in range(1, depth + 1)]

    def grow_to_depth(self, depth: int) -> List[int]:
        """
        Materialise generations 1..depth and return (Z_1, ..., Z_depth).

        With condition_on_survival the whole tree is resampled until Z_depth > 0 and
        survival_resamples counts the discarded trees.
        """
        if depth < 1:
            raise ValueError("depth must be >= 1")
        while True:
            sizes = self._grow(depth)
            if sizes[-1] > 0 or not self.condition_on_survival:
                return sizes
            self.resample(f"extinct before depth {depth}")

    def resample(self, reason: str) -> None:
        """Drop the current tree for a fresh draw from the same rng stream; counted in survival_resamples."""
        self.survival_resamples += 1
        if self.survival_resamples > MAX_SURVIVAL_RESAMPLES:
            raise ConvergenceError(f"{reason}: gave up after {MAX_SURVIVAL_RESAMPLES} tries")
        if self.survival_resamples % 100 == 1:
            logger.warning(f"⚠️ [tree] {reason}, resampling (#{self.survival_resamples})")
        self._reset()

    def survives_to(self, depth: int) -> bool:
        """Some generation-depth vertex exists; depth-first, growing lazily, stops at the first one."""
        stack = [ROOT]
        while stack:
            x = stack.pop()
            if self.depth[x] == depth:
                return True
            stack.extend(reversed(self.extend_at(x)))
        return False

    def complete_to_depth(self, depth: int) -> List[int]:
        """Materialise generations 1..depth of the current tree; never resamples it."""
        return self._grow(depth) if depth >= 1 else []

    def generation_complete(self, k: int) -> bool:
        if k >= len(self.by_depth):
            return False
        return all(self.unextended[d] == 0 for d in range(k))

    def require_generation(self, k: int) -> None:
        if not self.generation_complete(k):
            raise SubtreeNotGrownError(f"generation {k} is not fully materialised: grow_to_depth({k}) first")

    def generation(self, k: int) -> List[int]:
        self.require_generation(k)
        return self.neveu_order(k)

    # ------------------------------------------------------------------
    # paths and order
    # ------------------------------------------------------------------

    def path_from_root(self, x: int) -> List[int]:
        path = [x]
        while path[-1] != ROOT:
            path.append(self.parent[path[-1]])
        path.reverse()
        return path

    def ancestor_at(self, x: int, d: int) -> int:
        if d > self.depth[x] or d < 0:
            raise NotAncestorError(f"node {x} at depth {self.depth[x]} has no ancestor at depth {d}")
        while self.depth[x] > d:
            x = self.parent[x]
        return x

    def is_ancestor(self, a: int, x: int, strict: bool = True) -> bool:
        if self.depth[a] > self.depth[x] or (strict and a == x):
            return False
        return self.ancestor_at(x, self.depth[a]) == a

    def recompute_V(self, x: int) -> float:
        return -math.fsum(math.log(self.A[u]) for u in self.path_from_root(x)[1:])

    def neveu_order(self, k: int) -> List[int]:
        """Materialised generation-k nodes from left to right (lexicographic in child indices)."""
        if k >= len(self.by_depth):
            return []
        count = len(self.by_depth[k])
        cached = self._order_cache.get(k)
        if cached is not None and cached[0] == count:
            return cached[1]
        if k == 0:
            order = [ROOT]
        else:
            parent_rank = self.neveu_rank(k - 1)
            order = sorted(self.by_depth[k], key=lambda x: (parent_rank[self.parent[x]], x))
        rank = {x: i for i, x in enumerate(order)}
        self._order_cache[k] = (count, order, rank)
        return order

    def neveu_rank(self, k: int) -> Dict[int, int]:
        self.neveu_order(k)
        return self._order_cache[k][2] if k in self._order_cache else {}

    def descendants_at(self, z: int, m: int, grow: bool = False) -> List[int]:
        """Generation-m descendants of z in Neveu order; [z] when m == depth(z)."""
        dz = self.depth[z]
        if m < dz:
            raise ValueError(f"generation {m} is above node {z} at depth {dz}")
        out: List[int] = []
        stack = [z]
        while stack:
            x = stack.pop()
            if self.depth[x] == m:
                out.append(x)
                continue
            if self.first_child[x] == FRONTIER:
                if not grow:
                    raise SubtreeNotGrownError(f"subtree of {z} not grown to generation {m} (frontier at {x})")
                self._extend_many([x])
            kids = self.children(x)
            stack.extend(reversed(kids))
        return out

    # ------------------------------------------------------------------
    # accessible points and generation statistics
    # ------------------------------------------------------------------

    def accessible_nodes(
        self,
        a: float,
        k: int,
        origin: int = ROOT,
        grow: bool = False,
        relative: bool = False,
    ) -> List[int]:
        """
        Generation-k descendants u of origin with barrier <= a, pruned depth-first.

        The barrier is Vbar(u) measured from the root, or with `relative` the running max of
        V(w) - V(origin) over w in ]]origin, u]].
        """
        if k <= self.depth[origin]:
            raise ValueError(f"k={k} must exceed depth(origin)={self.depth[origin]}")
        base = self.V[origin]
        out: List[int] = []
        stack: List[Tuple[int, float]] = [(origin, -math.inf)]
        while stack:
            x, bar = stack.pop()
            if self.first_child[x] == FRONTIER:
                if not grow:
                    raise SubtreeNotGrownError(f"node {x} at depth {self.depth[x]} is on the frontier: grow first")
                self._extend_many([x])
            start = self.first_child[x]
            for c in range(start + self.n_children[x] - 1, start - 1, -1):
                if relative:
                    rel = self.V[c] - base
                    b = rel if rel > bar else bar
                else:
                    b = self.Vbar[c]
                if b > a:
                    continue
                if self.depth[c] == k:
                    out.append(c)
                else:
                    stack.append((c, b))
        return out

    def accessible_count(
        self,
        a: float,
        k: int,
        origin: int = ROOT,
        grow: bool = False,
        relative: bool = False,
    ) -> int:
        """K*_a(k) = #{u > origin, |u| = k, Vbar(u) <= a}."""
        return len(self.accessible_nodes(a, k, origin=origin, grow=grow, relative=relative))

    def generation_stats(self, k: int) -> GenerationStats:
        self.require_generation(k)
        level = self.by_depth[k]
        z = len(level)
        w = z * math.exp(-self.spec.psi(0.0) * k)
        if z == 0:
            return GenerationStats(k, 0, 0.0, math.inf, -math.inf, FRONTIER)
        vb = np.asarray([self.Vbar[x] for x in level])
        i = int(np.argmin(vb))
        return GenerationStats(k, z, w, float(vb[i]), float(vb.max()), level[i])

    def min_vbar(self, k: int) -> Tuple[float, int]:
        """
        Exact min over |z| = k of Vbar(z) by best-first search, growing only the nodes it pops.

        Vbar is non-decreasing along rays, so the first generation-k node popped is the minimiser.
        Returns (inf, -1) when generation k is empty.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        heap: List[Tuple[float, int]] = [(-math.inf, ROOT)]
        while heap:
            vb, x = heapq.heappop(heap)
            if self.depth[x] == k:
                return vb, x
            kids = self.extend_at(x)
            for c in kids:
                heapq.heappush(heap, (self.Vbar[c], c))
        return math.inf, FRONTIER


# ----------------------------------------------------------------------
# generation sizes without an arena
# ----------------------------------------------------------------------


def _offspring(q: Sequence[Tuple[int, float]]) -> Tuple[np.ndarray, np.ndarray]:
    ks = np.asarray([k for k, _ in q], dtype=np.int64)
    ps = np.asarray([p for _, p in q], dtype=float)
    return ks, ps / ps.sum()


def sample_generation_sizes(
    q: Sequence[Tuple[int, float]],
    n: int,
    rng: np.random.Generator,
    size: int = 1,
    cap: int = 10**9,
) -> np.ndarray:
    """
    Z_1..Z_n for `size` independent trees, shape (size, n).

    The offspring total of Z parents is drawn as a multinomial split of Z over the counts of q;
    a population above `cap` is carried as `cap` (those rows are far from any left-tail event).
    """
    ks, ps = _offspring(q)
    out = np.zeros((size, n), dtype=np.int64)
    z = np.ones(size, dtype=np.int64)
    for g in range(n):
        draws = rng.multinomial(z, ps)
        z = np.minimum(draws @ ks, cap)
        out[:, g] = z
    return out


def exact_generation_law(q: Sequence[Tuple[int, float]], n: int, cap: int = 2048) -> np.ndarray:
    """
    P(Z_n = j) for j = 0..cap by composing the offspring pgf f_n = f(f_{n-1}).

    Coefficients of a power series composition up to degree cap only involve coefficients up to
    cap, so truncation is exact for every j <= cap.
    """
    ks, ps = _offspring(q)
    f = np.zeros(cap + 1)
    for k, p in zip(ks.tolist(), ps.tolist()):
        if k <= cap:
            f[k] += p
    g = np.zeros(cap + 1)
    g[1] = 1.0
    for _ in range(n):
        new = np.zeros(cap + 1)
        power = np.zeros(cap + 1)
        power[0] = 1.0
        kmax = int(ks.max())
        for k in range(kmax + 1):
            if k > 0:
                power = np.convolve(power, g)[: cap + 1]
            if k < len(f) and f[k] != 0.0:
                new += f[k] * power
        g = new
    return g
