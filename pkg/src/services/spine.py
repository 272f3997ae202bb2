from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, signal, stats
from scipy.special import logsumexp

from src.core.errors import (
    EnumerationTooLargeError,
    LatticeRefusedError,
    RegimeViolationError,
    UnboundedFunctionalError,
)
from src.domain.environment import DiscreteWeights, EnvironmentSpec, LogNormalWeights
from src.services import envspec
from src.services.tree import sample_weights
from src.utils.stats import Moments

logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10**7
BATCH_ELEMENTS = 1 << 22
LOW_PRECISION = 0.10


# ---------------------------------------------------------------------------
# increment law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpineLaw:
    """
    Law of the spine increment S_1, possibly exponentially tilted.

    `theta` records the tilt relative to the untilted law: a path of m increments drawn from
    law.tilted(t) has likelihood ratio exp(-t S_m + m K(t)) against the base law, where
    K = base.log_mgf.
    """

    kind: Literal["discrete", "gaussian"]
    values: Tuple[float, ...] = ()
    probs: Tuple[float, ...] = ()
    loc: float = 0.0
    var: float = 0.0
    theta: float = 0.0
    lattice: bool = False

    def sample(self, rng: np.random.Generator, size: int | Tuple[int, ...]) -> np.ndarray:
        if self.kind == "discrete":
            if len(self.values) == 1:
                return np.full(size, self.values[0])
            return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))
        return rng.normal(self.loc, math.sqrt(self.var), size=size)

    def log_mgf(self, t: float) -> float:
        if self.kind == "discrete":
            return float(logsumexp(np.log(np.asarray(self.probs)) + t * np.asarray(self.values)))
        return t * self.loc + 0.5 * t * t * self.var

    def tilted_mean(self, t: float) -> float:
        if self.kind == "discrete":
            v = np.asarray(self.values)
            lw = np.log(np.asarray(self.probs)) + t * v
            return float(np.sum(np.exp(lw - logsumexp(lw)) * v))
        return self.loc + t * self.var

    def tilted(self, t: float) -> "SpineLaw":
        if t == 0.0:
            return self
        if self.kind == "discrete":
            v = np.asarray(self.values)
            lw = np.log(np.asarray(self.probs)) + t * v
            w = np.exp(lw - logsumexp(lw))
            return SpineLaw("discrete", self.values, tuple(float(x) for x in w), theta=self.theta + t, lattice=self.lattice)
        return SpineLaw("gaussian", loc=self.loc + t * self.var, var=self.var, theta=self.theta + t)

    def solve_tilt(self, drift: float) -> float:
        """t with E_t[S_1] = drift."""
        if self.kind == "gaussian":
            return (drift - self.loc) / self.var
        lo_v, hi_v = min(self.values), max(self.values)
        if not lo_v < drift < hi_v:
            raise RegimeViolationError(f"drift {drift} outside the support ({lo_v}, {hi_v}) of S_1")
        lo, hi = -1.0, 1.0
        while self.tilted_mean(lo) > drift:
            lo *= 2.0
        while self.tilted_mean(hi) < drift:
            hi *= 2.0
        return float(optimize.brentq(lambda t: self.tilted_mean(t) - drift, lo, hi, xtol=1e-13))

    @property
    def mean(self) -> float:
        return self.tilted_mean(0.0)

    @property
    def variance(self) -> float:
        if self.kind == "discrete":
            v = np.asarray(self.values)
            p = np.asarray(self.probs)
            mu = float(np.dot(p, v))
            return float(np.dot(p, (v - mu) ** 2))
        return self.var

    @property
    def bound(self) -> float:
        """sup |S_1|."""
        if self.kind == "discrete":
            return float(max(abs(v) for v in self.values))
        return math.inf

    def exp_moment(self) -> float:
        """E[e^{S_1}]."""
        return math.exp(self.log_mgf(1.0))

    def cdf(self, x: np.ndarray | float) -> np.ndarray:
        if self.kind == "discrete":
            v = np.asarray(self.values)
            p = np.asarray(self.probs)
            xs = np.atleast_1d(np.asarray(x, dtype=float))
            return np.asarray([p[v <= xi].sum() for xi in xs])
        return stats.norm.cdf(x, loc=self.loc, scale=math.sqrt(self.var))


def spine_increment_law(spec: EnvironmentSpec) -> SpineLaw:
    """
    S_1 = -log A under the size-biased tilt: P(S_1 = -log a) = E[N] P(A = a) a.

    The masses sum to e^{psi(1)}, so the spec must be calibrated.
    """
    envspec.require_calibrated(spec)
    w = spec.weights
    if isinstance(w, DiscreteWeights):
        mu = spec.mean_offspring
        vals = [-math.log(a) for a in w.values]
        probs = [mu * p * a for a, p in zip(w.values, w.probs)]
        total = math.fsum(probs)
        probs = [p / total for p in probs]
        return SpineLaw("discrete", tuple(vals), tuple(probs), lattice=spec.lattice)
    if isinstance(w, LogNormalWeights):
        return SpineLaw("gaussian", loc=-w.m - w.s2, var=w.s2)
    raise TypeError(f"unsupported weight law {type(w).__name__}")


def likelihood_ratio(base: SpineLaw, t: float, s_final: np.ndarray, m: int) -> np.ndarray:
    """dP/dQ_t for paths of m increments ending at s_final (increment sums)."""
    return np.exp(-t * s_final + m * base.log_mgf(t))


def _batches(samples: int, m: int) -> Iterator[int]:
    per = max(1, BATCH_ELEMENTS // max(1, m))
    left = int(samples)
    while left > 0:
        b = min(per, left)
        yield b
        left -= b


def sample_paths(law: SpineLaw, rng: np.random.Generator, samples: int, m: int, start: float = 0.0) -> np.ndarray:
    """(samples, m) array of S_1..S_m."""
    return start + np.cumsum(law.sample(rng, (samples, m)), axis=1)


# ---------------------------------------------------------------------------
# path statistics
# ---------------------------------------------------------------------------


@dataclass
class SpineTrace:
    """Streaming statistics of one spine path; tau levels use n >= 1 and non-strict inequalities."""

    start: float = 0.0
    up: float = math.inf
    down: float = -math.inf
    steps: int = 0
    S: float = 0.0
    smax: float = -math.inf
    smin: float = math.inf
    tau_plus: Optional[int] = None
    tau_minus: Optional[int] = None
    y_plus: float = 0.0
    y_minus: float = 0.0
    path: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.S = self.start

    def push(self, x: float) -> None:
        self.steps += 1
        self.S += x
        s = self.S
        self.path.append(s)
        if s > self.smax:
            self.smax = s
        if s < self.smin:
            self.smin = s
        if self.tau_plus is None and s >= self.up:
            self.tau_plus = self.steps
        if self.tau_minus is None and s <= self.down:
            self.tau_minus = self.steps
        self.y_plus += math.exp(s)
        self.y_minus += math.exp(-s)


class SpineWalk:
    """Sampler of spine paths for one replica."""

    def __init__(self, law: SpineLaw, rng: np.random.Generator) -> None:
        self.law = law
        self.rng = rng

    def run(self, m: int, start: float = 0.0, up: float = math.inf, down: float = -math.inf) -> SpineTrace:
        trace = SpineTrace(start=start, up=up, down=down)
        for x in self.law.sample(self.rng, m).tolist():
            trace.push(x)
        return trace

    def paths(self, samples: int, m: int, start: float = 0.0) -> np.ndarray:
        return sample_paths(self.law, self.rng, samples, m, start)


def _first_index(mask: np.ndarray) -> np.ndarray:
    """1-based index of the first True per row, -1 when none."""
    hit = mask.any(axis=1)
    idx = np.argmax(mask, axis=1) + 1
    return np.where(hit, idx, -1)


def path_statistics(paths: np.ndarray, up: float = math.inf, down: float = -math.inf) -> Dict[str, np.ndarray]:
    """Vectorised counterpart of SpineTrace for a (samples, m) array of S_1..S_m."""
    return {
        "final": paths[:, -1],
        "smax": paths.max(axis=1),
        "smin": paths.min(axis=1),
        "tau_plus": _first_index(paths >= up),
        "tau_minus": _first_index(paths <= down),
        "y_plus": np.exp(paths).sum(axis=1),
        "y_minus": np.exp(-paths).sum(axis=1),
    }


# ---------------------------------------------------------------------------
# many-to-one
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Functional:
    """F(V(x_1), ..., V(x_n)) applied row-wise to a (batch, n) array."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: Optional[float] = 1.0
    degree: int = 0

    def __call__(self, paths: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(paths), dtype=float)


def functional_library() -> Dict[str, Functional]:
    ind = lambda cond: cond.astype(float)  # noqa: E731
    lib = [
        Functional("one", lambda p: np.ones(p.shape[0])),
        Functional("all_positive", lambda p: ind((p > 0).all(axis=1))),
        Functional("all_negative", lambda p: ind((p < 0).all(axis=1))),
        Functional("final_positive", lambda p: ind(p[:, -1] > 0)),
        Functional("max_le_1", lambda p: ind(p.max(axis=1) <= 1.0)),
        Functional("min_ge_-1", lambda p: ind(p.min(axis=1) >= -1.0)),
        Functional("final_in_-1_1", lambda p: ind(np.abs(p[:, -1]) < 1.0)),
        Functional("ever_above_2", lambda p: ind((p >= 2.0).any(axis=1))),
        Functional("fraction_positive", lambda p: (p > 0).mean(axis=1)),
        Functional("final_squared", lambda p: p[:, -1] ** 2, bound=None, degree=2),
        Functional("mean_abs", lambda p: np.abs(p).mean(axis=1), bound=None, degree=1),
    ]
    return {f.name: f for f in lib}


def _check_bounded(spec: EnvironmentSpec, functional: Functional, n: int) -> Optional[float]:
    if functional.bound is not None:
        return functional.bound
    if spec.alpha is not None:
        return (n * spec.alpha) ** functional.degree
    if isinstance(spec.weights, DiscreteWeights):
        top = max(abs(math.log(v)) for v in spec.weights.values)
        return (n * top) ** functional.degree
    raise UnboundedFunctionalError(f"functional {functional.name} is unbounded under {spec.name}")


@dataclass(frozen=True)
class MtoResult:
    functional: str
    n: int
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    method: str
    samples: int = 0

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def _enumerate_rows(k: int, n: int, chunk: int = 1 << 16) -> Iterator[np.ndarray]:
    it = itertools.product(range(k), repeat=n)
    while True:
        rows = list(itertools.islice(it, chunk))
        if not rows:
            return
        yield np.asarray(rows, dtype=np.int64)


def _mto_exact(spec: EnvironmentSpec, n: int, functional: Functional) -> Tuple[float, float]:
    w = spec.weights
    assert isinstance(w, DiscreteWeights)
    law = spine_increment_law(spec)
    logs = np.log(np.asarray(w.values))
    lp = np.log(np.asarray(w.probs))
    mu = spec.mean_offspring
    svals = -logs
    slp = np.log(np.asarray(law.probs))
    lhs_parts: List[float] = []
    rhs_parts: List[float] = []
    for rows in _enumerate_rows(len(logs), n):
        V = -np.cumsum(logs[rows], axis=1)
        # E[sum_{|x|=n} g] = mu^n E[g(A_1..A_n)] for weights i.i.d. given N
        lw = n * math.log(mu) + lp[rows].sum(axis=1) - V[:, -1]
        lhs_parts.append(float(np.sum(np.exp(lw) * functional(V))))
        S = np.cumsum(svals[rows], axis=1)
        rhs_parts.append(float(np.sum(np.exp(slp[rows].sum(axis=1)) * functional(S))))
    return math.fsum(lhs_parts), math.fsum(rhs_parts)


def generation_sum_samples(
    spec: EnvironmentSpec,
    n: int,
    trees: int,
    rng: np.random.Generator,
    fn: Callable[[np.ndarray], np.ndarray],
) -> np.ndarray:
    """
    Per tree: sum over |x| = n of e^{-V(x)} F(V(x_1..x_n)), grown generation by generation
    for a whole batch of trees at once.
    """
    ks, ps = spec.offspring_arrays()
    out = np.zeros(trees)
    per_tree = max(1.0, spec.mean_offspring**n)
    per = max(1, int((1 << 20) / per_tree))
    done = 0
    while done < trees:
        b = min(per, trees - done)
        tree_id = np.arange(b)
        hist = np.zeros((b, 0))
        V = np.zeros(b)
        for _ in range(n):
            counts = rng.choice(ks, size=len(tree_id), p=ps) if len(ks) > 1 else np.full(len(tree_id), ks[0])
            tree_id = np.repeat(tree_id, counts)
            hist = np.repeat(hist, counts, axis=0)
            V = np.repeat(V, counts) - np.log(sample_weights(spec.weights, rng, len(tree_id)))
            hist = np.column_stack([hist, V])
        if len(tree_id):
            vals = np.exp(-V) * fn(hist)
            out[done : done + b] = np.bincount(tree_id, weights=vals, minlength=b)
        done += b
    return out


def mto_check(
    spec: EnvironmentSpec,
    n: int,
    functional: Functional,
    samples: int = 0,
    rng: Optional[np.random.Generator] = None,
    exact: Optional[bool] = None,
) -> MtoResult:
    """Both sides of E[sum_{|x|=n} e^{-V(x)} F(V(x_i), i <= n)] = E[F(S_i, i <= n)]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_bounded(spec, functional, n)
    discrete = isinstance(spec.weights, DiscreteWeights)
    size = len(spec.weights.values) ** n if discrete else math.inf
    if exact is None:
        exact = discrete and size <= ENUMERATION_LIMIT and n <= 8
    if exact:
        if not discrete or size > ENUMERATION_LIMIT:
            raise EnumerationTooLargeError(f"enumeration needs {size} paths > {ENUMERATION_LIMIT}")
        lhs, rhs = _mto_exact(spec, n, functional)
        return MtoResult(functional.name, n, lhs, 0.0, rhs, 0.0, "exact")

    if rng is None or samples <= 0:
        raise ValueError("Monte Carlo many-to-one needs samples > 0 and an rng")
    law = spine_increment_law(spec)
    lhs = Moments.of(generation_sum_samples(spec, n, samples, rng, functional))
    rhs = Moments()
    for b in _batches(samples, n):
        rhs.extend(functional(sample_paths(law, rng, b, n)))
    return MtoResult(functional.name, n, lhs.mean, lhs.stderr, rhs.mean, rhs.stderr, "monte_carlo", samples)


# ---------------------------------------------------------------------------
# killed transfer operators (deterministic oracles)
# ---------------------------------------------------------------------------


def _lattice_step(law: SpineLaw) -> Optional[Tuple[float, np.ndarray, np.ndarray]]:
    if law.kind != "discrete":
        return None
    v = np.asarray(law.values)
    c = float(np.min(np.abs(v[v != 0]))) if np.any(v != 0) else 1.0
    k = np.rint(v / c)
    if np.max(np.abs(k * c - v)) > 1e-9 * max(1.0, c):
        return None
    return c, k.astype(np.int64), np.asarray(law.probs)


def killed_law(
    law: SpineLaw,
    m: int,
    side: Literal["below", "above"],
    start: float = 0.0,
    width_sd: float = 10.0,
    h: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sub-probability law of S_m on {S_i < 0 for i <= m} (below) or {S_i > 0 for i <= m} (above),
    as (positions, masses). Exact on the lattice for lattice discrete laws; a midpoint-grid
    transfer operator for Gaussian increments.
    """
    lattice = _lattice_step(law)
    if lattice is not None:
        c, ks, ps = lattice
        if abs(start / c - round(start / c)) > 1e-9:
            raise ValueError("start must lie on the lattice")
        j0 = int(round(start / c))
        span = int(np.abs(ks).max()) * m
        lo, hi = j0 - span - 1, j0 + span + 1
        size = hi - lo + 1
        mass = np.zeros(size)
        mass[j0 - lo] = 1.0
        idx = np.arange(lo, hi + 1)
        alive = idx < 0 if side == "below" else idx > 0
        for _ in range(m):
            new = np.zeros(size)
            for k, p in zip(ks.tolist(), ps.tolist()):
                if k >= 0:
                    new[k:] += p * mass[: size - k]
                else:
                    new[:k] += p * mass[-k:]
            mass = np.where(alive, new, 0.0)
        keep = mass > 0.0
        return idx[keep] * c, mass[keep]

    if law.kind != "gaussian":
        raise ValueError("killed_law needs a lattice discrete law or Gaussian increments")
    sd = math.sqrt(law.var)
    spread = width_sd * sd * math.sqrt(m) + abs(law.loc) * m + abs(start) + 5.0
    h = h or min(0.05, sd / 20.0)
    n = int(math.ceil(spread / h))
    x = (np.arange(n) + 0.5) * h
    if side == "below":
        x = -x[::-1]
    J = int(math.ceil(width_sd * sd / h)) + int(math.ceil(abs(law.loc) / h))
    offsets = np.arange(-J, J + 1) * h
    kernel = stats.norm.pdf(offsets, loc=law.loc, scale=sd) * h
    mass = stats.norm.pdf(x - start, loc=law.loc, scale=sd) * h
    for _ in range(m - 1):
        mass = signal.fftconvolve(mass, kernel)[J : J + n]
        np.clip(mass, 0.0, None, out=mass)
    return x, mass


# ---------------------------------------------------------------------------
# ballot functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BallotEstimate:
    m: int
    side: str
    method: str
    estimate: float
    stderr: float
    samples: int

    @property
    def normalized(self) -> float:
        return self.estimate * (self.m + 1) ** 1.5

    @property
    def low_precision(self) -> bool:
        return self.estimate <= 0.0 or self.stderr / self.estimate > LOW_PRECISION


def ballot_F(
    spec: EnvironmentSpec,
    m: int,
    samples: int = 0,
    rng: Optional[np.random.Generator] = None,
    side: Literal["below", "above"] = "below",
    method: Literal["mc", "grid"] = "mc",
) -> BallotEstimate:
    """
    F_m = E[e^{S_m} 1{S_i < 0, i <= m}] (side="below", the quantity of order (m+1)^{-3/2}),
    or E[e^{S_m} 1{S_i > 0, i <= m}] (side="above").

    "above" is sampled under the e^{s} tilt, where the weight is the constant e^{m psi(0)};
    "below" has bounded weights e^{S_m} <= 1 and is sampled directly.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    law = spine_increment_law(spec)
    if method == "grid":
        if side != "below":
            raise ValueError("grid evaluation is only offered for side='below'")
        x, mass = killed_law(law, m, "below")
        return BallotEstimate(m, side, "grid", float(np.sum(mass * np.exp(x))), 0.0, 0)

    if rng is None or samples <= 0:
        raise ValueError("Monte Carlo ballot estimate needs samples > 0 and an rng")
    acc = Moments()
    if side == "below":
        for b in _batches(samples, m):
            p = sample_paths(law, rng, b, m)
            acc.extend(np.where(p.max(axis=1) < 0.0, np.exp(p[:, -1]), 0.0))
    else:
        tilted = law.tilted(1.0)
        weight = math.exp(m * law.log_mgf(1.0))
        for b in _batches(samples, m):
            p = sample_paths(tilted, rng, b, m)
            acc.extend(np.where(p.min(axis=1) > 0.0, weight, 0.0))
    est = BallotEstimate(m, side, "mc", acc.mean, acc.stderr, acc.count)
    if est.low_precision:
        logger.warning(f"⚠️ [spine] ballot F_{m} ({side}) low precision: {acc.mean:.4g} ± {acc.stderr:.2g}")
    return est


# ---------------------------------------------------------------------------
# stopped walks
# ---------------------------------------------------------------------------


@dataclass
class StoppedPaths:
    tau: np.ndarray
    exit_up: np.ndarray
    censored: np.ndarray
    final: np.ndarray
    y_minus: np.ndarray


def run_until_exit(
    law: SpineLaw,
    rng: np.random.Generator,
    starts: np.ndarray,
    up: float,
    down: float,
    max_steps: int,
) -> StoppedPaths:
    """Run each path until tau^+_up or tau^-_down (first n >= 1 with S_n >= up / S_n <= down)."""
    count = len(starts)
    S = np.asarray(starts, dtype=float).copy()
    tau = np.zeros(count, dtype=np.int64)
    exit_up = np.zeros(count, dtype=bool)
    censored = np.zeros(count, dtype=bool)
    y_minus = np.zeros(count)
    alive = np.arange(count)
    step = 0
    while alive.size and step < max_steps:
        step += 1
        S[alive] += law.sample(rng, alive.size)
        y_minus[alive] += np.exp(-S[alive])
        s = S[alive]
        hit_up = s >= up
        hit_down = (s <= down) & ~hit_up
        done = hit_up | hit_down
        tau[alive[done]] = step
        exit_up[alive[hit_up]] = True
        alive = alive[~done]
    if alive.size:
        censored[alive] = True
        tau[alive] = step
    return StoppedPaths(tau, exit_up, censored, S, y_minus)


def survival_probability(
    law: SpineLaw, rng: np.random.Generator, start: float, m: int, samples: int
) -> Tuple[float, float]:
    """P_start(S_i > 0 for i = 1..m) by killing below 0."""
    acc = Moments()
    for b in _batches(samples, 1):
        S = np.full(b, start, dtype=float)
        alive = np.arange(b)
        for _ in range(m):
            if not alive.size:
                break
            S[alive] += law.sample(rng, alive.size)
            alive = alive[S[alive] > 0.0]
        ind = np.zeros(b)
        ind[alive] = 1.0
        acc.extend(ind)
    return acc.mean, acc.stderr


@dataclass(frozen=True)
class PassageRatios:
    x: float
    y: float
    m: int
    hit_ratio: float
    hit_stderr: float
    time_ratio: float
    time_stderr: float
    survival_ratio: float
    survival_stderr: float
    censored: int

    def as_dict(self) -> Dict[str, float]:
        return {
            "P_x(tau+_y<tau-_0)(y+1)/(x+1)": self.hit_ratio,
            "E[tau+_y^tau-_0]/y": self.time_ratio,
            "P_x(tau-_0>m)sqrt(m)/(x+1)": self.survival_ratio,
        }


def passage_check(
    spec: EnvironmentSpec,
    x: float,
    y: float,
    m: int,
    samples: int,
    rng: np.random.Generator,
) -> PassageRatios:
    if not 0.0 <= x <= y:
        raise RegimeViolationError(f"need 0 <= x <= y, got x={x}, y={y}")
    if m < 100:
        raise RegimeViolationError(f"need m >= 100 for the survival ratio, got m={m}")
    law = spine_increment_law(spec)
    max_steps = int(200 * (y + 1.0) ** 2 / max(law.variance, 1e-12)) + 1000
    res = run_until_exit(law, rng, np.full(samples, x), up=y, down=0.0, max_steps=max_steps)
    hit = Moments.of(res.exit_up.astype(float))
    dur = Moments.of(res.tau.astype(float))
    surv, surv_se = survival_probability(law, rng, x, m, samples)
    scale_hit = (y + 1.0) / (x + 1.0)
    scale_t = 1.0 / y if y > 0 else 1.0
    scale_s = math.sqrt(m) / (x + 1.0)
    censored = int(res.censored.sum())
    if censored:
        logger.warning(f"⚠️ [spine] passage check: {censored} paths hit the step cap {max_steps}")
    return PassageRatios(
        x, y, m,
        hit.mean * scale_hit, hit.stderr * scale_hit,
        dur.mean * scale_t, dur.stderr * scale_t,
        surv * scale_s, surv_se * scale_s,
        censored,
    )


def excursion_sum_check(
    spec: EnvironmentSpec,
    a: float,
    M: float,
    samples: int,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """M * P(Y^-(tau^+_a) > M, tau^+_a < tau^-_0) with its standard error."""
    if a < 0.0 or M <= 0.0:
        raise RegimeViolationError(f"need a >= 0 and M > 0, got a={a}, M={M}")
    law = spine_increment_law(spec)
    max_steps = int(200 * (a + 1.0) ** 2 / max(law.variance, 1e-12)) + 1000
    res = run_until_exit(law, rng, np.zeros(samples), up=a, down=0.0, max_steps=max_steps)
    ind = (res.exit_up & (res.y_minus > M)).astype(float)
    acc = Moments.of(ind)
    return acc.mean * M, acc.stderr * M


# ---------------------------------------------------------------------------
# local windows and the barrier bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowCheck:
    m: int
    r: float
    regime: str
    empirical: float
    stderr: float
    prediction: float
    prediction_bare: float
    method: str

    @property
    def ratio(self) -> float:
        return self.empirical / self.prediction if self.prediction > 0 else math.nan


def window_constant(law: SpineLaw) -> float:
    """1/(sigma^2 sqrt(pi)) for symmetric continuous increments (Sparre Andersen times the meander density)."""
    return 1.0 / (law.variance * math.sqrt(math.pi))


def local_window_check(
    spec: EnvironmentSpec,
    m: int,
    r: float,
    samples: int = 0,
    rng: Optional[np.random.Generator] = None,
    A: float = 1.0,
    eps: float = 0.05,
    method: Literal["mc", "grid"] = "mc",
) -> WindowCheck:
    """
    P(S_m in (r, r+1], min S > 0) against r m^{-3/2} e^{-r^2/(2 sigma^2 m)} when r <= A sqrt(m),
    or against (1/m) e^{r g(r/m)} beyond. Non-lattice laws only.
    """
    if spec.lattice:
        raise LatticeRefusedError(f"{spec.name} is lattice: local window estimates need a non-lattice law")
    if not 1.0 <= r <= eps * m:
        raise RegimeViolationError(f"need 1 <= r <= eps*m = {eps * m}, got r={r}")
    law = spine_increment_law(spec)
    an = envspec.analytics_for(spec)
    sigma2 = an.sigma2
    if r <= A * math.sqrt(m):
        regime = "gaussian"
        bare = r * m**-1.5 * math.exp(-r * r / (2.0 * sigma2 * m))
        pred = bare * window_constant(law)
    else:
        regime = "moderate"
        bare = math.exp(r * (an.f_any(r / m) - 1.0)) / m
        pred = bare

    if method == "grid":
        x, mass = killed_law(law, m, "above")
        sel = (x > r) & (x <= r + 1.0)
        return WindowCheck(m, r, regime, float(mass[sel].sum()), 0.0, pred, bare, "grid")

    if rng is None or samples <= 0:
        raise ValueError("Monte Carlo window estimate needs samples > 0 and an rng")
    acc = Moments()
    for b in _batches(samples, m):
        p = sample_paths(law, rng, b, m)
        acc.extend(((p.min(axis=1) > 0.0) & (p[:, -1] > r) & (p[:, -1] <= r + 1.0)).astype(float))
    return WindowCheck(m, r, regime, acc.mean, acc.stderr, pred, bare, "mc")


@dataclass(frozen=True)
class BarrierCheck:
    m: int
    a: float
    b: float
    estimate: float
    stderr: float
    bound_rhs: float
    samples: int

    @property
    def ratio(self) -> Optional[float]:
        return self.estimate / self.bound_rhs if self.bound_rhs > 0 else None


def barrier_upper_check(
    spec: EnvironmentSpec,
    m: int,
    a: float,
    b: float,
    samples: int,
    rng: np.random.Generator,
) -> BarrierCheck:
    """
    P_a(S_m > b, min S > 0) under the tilt that moves the mean of S_m to b, against
    (a/b) e^{b g(b/m)}.
    """
    an = envspec.analytics_for(spec)
    floor_b = an.sigma2 * math.sqrt(m) * math.log(m)
    if b < floor_b:
        raise RegimeViolationError(f"need b >= sigma^2 sqrt(m) log m = {floor_b:.4g}, got b={b}")
    if not 0.0 <= a <= math.sqrt(m):
        raise RegimeViolationError(f"need 0 <= a <= sqrt(m) = {math.sqrt(m):.4g}, got a={a}")
    if b >= m * an.radius_guard:
        raise RegimeViolationError(f"need b < m * radius_guard = {m * an.radius_guard}, got b={b}")
    law = spine_increment_law(spec)
    t = law.solve_tilt((b - a) / m)
    tilted = law.tilted(t)
    acc = Moments()
    for batch in _batches(samples, m):
        p = sample_paths(tilted, rng, batch, m, start=a)
        ok = (p.min(axis=1) > 0.0) & (p[:, -1] > b)
        lr = likelihood_ratio(law, t, p[:, -1] - a, m)
        acc.extend(np.where(ok, lr, 0.0))
    rhs = (a / b) * math.exp(b * (an.f_any(b / m) - 1.0)) if a > 0 else 0.0
    return BarrierCheck(m, a, b, acc.mean, acc.stderr, rhs, acc.count)


# ---------------------------------------------------------------------------
# expectations along the spine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpineExpectation:
    estimate: float
    stderr: float
    samples: int
    theta: float


def accessible_expectation(
    spec: EnvironmentSpec,
    ell: int,
    phi: float,
    samples: int,
    rng: np.random.Generator,
) -> SpineExpectation:
    """E[K*_phi(ell)] = E[e^{S_ell} 1{max S <= phi}], sampled under the tilt with drift phi/ell."""
    law = spine_increment_law(spec)
    drift = phi / ell
    t = law.solve_tilt(min(drift, 0.9 * law.bound)) if law.kind == "discrete" else law.solve_tilt(drift)
    tilted = law.tilted(t)
    acc = Moments()
    for b in _batches(samples, ell):
        p = sample_paths(tilted, rng, b, ell)
        lr = likelihood_ratio(law, t, p[:, -1], ell)
        acc.extend(np.where(p.max(axis=1) <= phi, np.exp(p[:, -1]) * lr, 0.0))
    return SpineExpectation(acc.mean, acc.stderr, acc.count, t)


def accessible_prediction(spec: EnvironmentSpec, ell: int, phi: float) -> Dict[str, float]:
    """e^{phi f(phi/ell)} times 1/ell and phi ell^{-3/2}."""
    an = envspec.analytics_for(spec)
    core = math.exp(phi * an.f_any(phi / ell))
    return {"core": core, "short": core / ell, "long": core * phi * ell**-1.5}


def _tilt_for(law: SpineLaw, drift: float) -> float:
    if law.kind == "discrete":
        drift = max(min(drift, 0.9 * law.bound), -0.9 * law.bound)
    return law.solve_tilt(drift)


def annealed_terms(
    spec: EnvironmentSpec,
    ell: int,
    log_n: float,
    samples: int,
    rng: np.random.Generator,
    c_minus: float = 1.0,
    c_plus: float = 1.0,
) -> Dict[str, SpineExpectation]:
    """
    The four spine functionals bracketing E[K_n(ell)]:
    A+ = E[e^{S - max S} 1{sum e^{S_i} > c_- n}], B+ = E[e^{S} 1{max S <= log(c_+ n)}],
    A- = E[e^{S}/sum e^{S_i} 1{max S > log(c_+ n)}], B- = E[e^{S} 1{sum e^{S_i} <= c_- n}],
    with S = S_ell.
    """
    law = spine_increment_law(spec)
    t = _tilt_for(law, log_n / ell)
    tilted = law.tilted(t)
    lo = math.log(c_minus) + log_n
    hi = math.log(c_plus) + log_n
    acc = {k: Moments() for k in ("A+", "B+", "A-", "B-")}
    for b in _batches(samples, ell):
        p = sample_paths(tilted, rng, b, ell)
        lr = likelihood_ratio(law, t, p[:, -1], ell)
        final = p[:, -1]
        smax = p.max(axis=1)
        lse = logsumexp(p, axis=1)
        acc["A+"].extend(np.where(lse > lo, np.exp(final - smax) * lr, 0.0))
        acc["B+"].extend(np.where(smax <= hi, np.exp(final) * lr, 0.0))
        acc["A-"].extend(np.where(smax > hi, np.exp(final - lse) * lr, 0.0))
        acc["B-"].extend(np.where(lse <= lo, np.exp(final) * lr, 0.0))
    return {k: SpineExpectation(v.mean, v.stderr, v.count, t) for k, v in acc.items()}


def annealed_mean_K(
    spec: EnvironmentSpec,
    ell: int,
    log_n: float,
    samples: int,
    rng: np.random.Generator,
) -> SpineExpectation:
    """
    E[K_n(ell)] = E[sum_{|z|=ell} (1 - (1 - p_z)^n)] with n = e^{log_n}.

    The root offspring is sampled directly (it fixes D = sum A + 1); below each first-generation
    vertex y the remaining ell - 1 generations go through the spine, so that
    p_z = 1 / (D e^{V(y)} (1 + sum_{i < ell} e^{S_i})).
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    law = spine_increment_law(spec)
    n = math.exp(log_n)
    steps = ell - 1
    t = _tilt_for(law, log_n / max(steps, 1)) if steps else 0.0
    tilted = law.tilted(t)
    ks, ps = spec.offspring_arrays()
    acc = Moments()
    for b in _batches(samples, max(steps, 1) * max(1, spec.max_offspring)):
        counts = rng.choice(ks, size=b, p=ps) if len(ks) > 1 else np.full(b, ks[0])
        tree_id = np.repeat(np.arange(b), counts)
        A = sample_weights(spec.weights, rng, len(tree_id))
        D = np.bincount(tree_id, weights=A, minlength=b) + 1.0
        Vy = -np.log(A)
        if steps:
            p = sample_paths(tilted, rng, len(tree_id), steps)
            log_tail = np.logaddexp(0.0, logsumexp(p, axis=1))
            weight = np.exp(p[:, -1]) * likelihood_ratio(law, t, p[:, -1], steps)
        else:
            log_tail = np.zeros(len(tree_id))
            weight = np.ones(len(tree_id))
        log_p = -np.log(D[tree_id]) - Vy - log_tail
        hit = -np.expm1(n * np.log1p(-np.exp(log_p)))
        acc.extend(np.bincount(tree_id, weights=hit * weight, minlength=b))
    return SpineExpectation(acc.mean, acc.stderr, acc.count, t)
