from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize, stats

from src.core.errors import (
    ConvergenceError,
    EllipticityRequiredError,
    NotCalibratedError,
    RadiusExceededError,
)
from src.domain.environment import DiscreteWeights, EnvironmentSpec, LogNormalWeights

logger = logging.getLogger(__name__)

BINARY = {2: 1.0}


def _offspring_tuple(offspring: Optional[Mapping[int, float]]) -> Tuple[Tuple[int, float], ...]:
    q = dict(offspring or BINARY)
    return tuple(sorted((int(k), float(p)) for k, p in q.items()))


def _mean(q: Tuple[Tuple[int, float], ...]) -> float:
    return math.fsum(k * p for k, p in q)


def _short_name(prefix: str, q: Tuple[Tuple[int, float], ...]) -> str:
    if q == ((2, 1.0),):
        return f"{prefix}2"
    return prefix + "-q" + "_".join(f"{k}x{p:g}" for k, p in q)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def calibrate_two_point(
    symmetric: bool = True,
    offspring: Optional[Mapping[int, float]] = None,
    tilt_mass: float = 1.0 / 3.0,
    cramer_order: int = 3,
) -> EnvironmentSpec:
    """
    Two-point weights calibrated to psi(1) = psi'(1) = 0.

    symmetric: A in {a, 1/a}, a = mu - sqrt(mu^2 - 1), P(A=a) = 1/(2 mu a); for N = 2 this is
    "sym2" with a = 2 - sqrt(3). Otherwise A in {a, b} where the spine puts mass `tilt_mass`
    on -log a ("skew2" for N = 2).
    """
    q = _offspring_tuple(offspring)
    mu = _mean(q)
    if mu <= 1.0:
        raise ValueError(f"E[N] = {mu} is not supercritical")
    n0 = max(k for k, p in q if p > 0.0)

    if symmetric:
        a = mu - math.sqrt(mu * mu - 1.0)
        p = 1.0 / (2.0 * mu * a)
        values, probs = (a, 1.0 / a), (p, 1.0 - p)
        name = _short_name("sym", q)
    else:
        w = float(tilt_mass)
        if not 0.0 < w < 1.0 or w == 0.5:
            raise ValueError("tilt_mass must lie in (0, 1) and differ from 1/2")

        def gap(rho: float) -> float:
            return mu * rho ** (-(1.0 - w)) - w - (1.0 - w) / rho

        hi = 2.0
        while gap(hi) > 0.0:
            hi *= 2.0
            if hi > 1e12:
                raise ConvergenceError("two-point calibration: no bracket for the weight ratio")
        rho = optimize.brentq(gap, 1.0 + 1e-12, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        a = rho ** (-(1.0 - w))
        b = rho * a
        p = w / (mu * a)
        values, probs = (a, b), (p, 1.0 - p)
        name = _short_name("skew", q)

    eps0 = min(min(values), 1.0 / max(values))
    spec = EnvironmentSpec(
        name=name,
        kind="two_point",
        offspring=q,
        weights=DiscreteWeights(values=values, probs=probs),
        ellipticity=True,
        epsilon0=eps0,
        N0=n0,
        calibrated=True,
        cramer_order=cramer_order,
    )
    logger.info(f"🧪 [envspec] calibrated {spec.name}: values={values}, probs={probs}")
    return spec


def calibrate_lognormal(
    offspring: Optional[Mapping[int, float]] = None,
    cramer_order: int = 3,
) -> EnvironmentSpec:
    """log A ~ Normal(m, s2) with s2 = 2 log mu, m = -s2 ("gauss2" for N = 2). Ellipticity is off."""
    q = _offspring_tuple(offspring)
    mu = _mean(q)
    if mu <= 1.0:
        raise ValueError(f"E[N] = {mu} is not supercritical")
    s2 = 2.0 * math.log(mu)
    spec = EnvironmentSpec(
        name=_short_name("gauss", q),
        kind="lognormal",
        offspring=q,
        weights=LogNormalWeights(m=-s2, s2=s2),
        ellipticity=False,
        N0=max(k for k, p in q if p > 0.0),
        calibrated=True,
        cramer_order=cramer_order,
    )
    logger.info(f"🧪 [envspec] calibrated {spec.name}: m={-s2}, s2={s2} (ellipticity off)")
    return spec


def table_spec(
    name: str,
    offspring: Mapping[int, float],
    values: Sequence[float],
    probs: Sequence[float],
    calibrated: bool = False,
    ellipticity: bool = True,
    cramer_order: int = 3,
) -> EnvironmentSpec:
    q = _offspring_tuple(offspring)
    eps0 = min(min(values), 1.0 / max(values)) if ellipticity else None
    return EnvironmentSpec(
        name=name,
        kind="table",
        offspring=q,
        weights=DiscreteWeights(values=tuple(float(v) for v in values), probs=tuple(float(p) for p in probs)),
        ellipticity=ellipticity,
        epsilon0=eps0,
        N0=max(k for k, p in q if p > 0.0),
        calibrated=calibrated,
        cramer_order=cramer_order,
    )


def flat_spec(offspring: Optional[Mapping[int, float]] = None) -> EnvironmentSpec:
    """A ≡ 1, hence V ≡ 0. Not calibrated; used for plumbing checks."""
    return table_spec("flat", offspring or BINARY, values=(1.0,), probs=(1.0,))


# ---------------------------------------------------------------------------
# psi and friends
# ---------------------------------------------------------------------------


def psi(spec: EnvironmentSpec, t: float) -> float:
    value = spec.psi(float(t))
    if not math.isfinite(value):
        raise ArithmeticError(f"psi({t}) diverges for {spec.name}")
    return value


def psi_prime(spec: EnvironmentSpec, t: float) -> float:
    return spec.psi_derivatives(float(t), 1)[1]


def require_calibrated(spec: EnvironmentSpec) -> None:
    if not spec.calibrated:
        raise NotCalibratedError(f"{spec.name} is not calibrated to psi(1) = psi'(1) = 0")


def require_alpha(spec: EnvironmentSpec, surrogate: bool = False, quantile: float = 0.999) -> float:
    """
    alpha = |log epsilon0| (bound on |S_1|). Without ellipticity either refuse, or, with
    `surrogate`, return the `quantile` of |log A| and log that the surrogate is in use.
    """
    if spec.alpha is not None:
        return spec.alpha
    if not surrogate:
        raise EllipticityRequiredError(f"{spec.name} has ellipticity off: alpha = |log eps0| is undefined")
    w = spec.weights
    if isinstance(w, LogNormalWeights):
        s = math.sqrt(w.s2)
        value = float(stats.foldnorm(c=abs(w.m) / s, scale=s).ppf(quantile))
    else:
        value = float(np.quantile(np.abs(np.log(np.asarray(w.values))), quantile))
    logger.warning(f"⚠️ [envspec] {spec.name}: surrogate alpha={value:.6g} (q={quantile} of |log A|)")
    return value


# ---------------------------------------------------------------------------
# cumulants and the Cramer series
# ---------------------------------------------------------------------------


def _trunc_mul(a: np.ndarray, b: np.ndarray, degree: int) -> np.ndarray:
    out = P.polymul(a, b)[: degree + 1]
    return np.pad(out, (0, degree + 1 - len(out)))


def _revert_derivative_series(kappa: Sequence[float], degree: int) -> np.ndarray:
    """
    Invert y = K'(theta) = sum_{j>=1} kappa_{j+1} theta^j / j! as theta = sum_k b_k y^k.

    kappa[j] is the j-th cumulant of S_1 (kappa[0] unused). Returns b[0..degree].
    """
    d = np.zeros(degree + 1)
    for j in range(1, degree + 1):
        d[j] = kappa[j + 1] / math.factorial(j) if j + 1 < len(kappa) else 0.0
    if d[1] <= 0.0:
        raise ConvergenceError("Cramer series needs sigma^2 > 0")
    identity = np.zeros(degree + 1)
    identity[1] = 1.0
    theta = identity / d[1]
    for _ in range(degree):
        power = theta.copy()
        higher = np.zeros(degree + 1)
        for j in range(2, degree + 1):
            power = _trunc_mul(power, theta, degree)
            higher += d[j] * power
        theta = (identity - higher) / d[1]
    return theta


@dataclass(frozen=True)
class Analytics:
    """
    Derived analytics of a spec.

    cumulants[j-1] = u_j = psi^(j)(1). The spine increment S_1 has cumulants (-1)^j u_j, and
    its rate function is I(y) = sum_k b_k y^(k+1)/(k+1) where theta(y) = sum_k b_k y^k inverts
    y = d/dtheta psi(1 - theta). Then f(x) = 1 - I(x)/x = 1 - x/(2 sigma^2) + x^2 lambda(x).
    """

    spec: EnvironmentSpec
    psi0: float
    sigma2: float
    cumulants: Tuple[float, ...]
    cramer_order: int
    theta_coeffs: Tuple[float, ...]
    radius_guard: float
    gamma_tilde: Optional[float] = None
    extras: Dict[str, float] = field(default_factory=dict)

    def u(self, j: int) -> float:
        return self.cumulants[j - 1]

    @property
    def lambda_coeffs(self) -> Tuple[float, ...]:
        b = self.theta_coeffs
        return tuple(-b[k] / (k + 1) for k in range(2, len(b)))

    def lam(self, x: float) -> float:
        return float(P.polyval(x, np.asarray(self.lambda_coeffs))) if self.lambda_coeffs else 0.0

    def f(self, x: float) -> float:
        return cramer_f(self, x)

    def g(self, x: float) -> float:
        return cramer_f(self, x) - 1.0

    def f_exact(self, x: float) -> float:
        return f_exact(self.spec, x)

    def f_any(self, x: float) -> float:
        """Series inside the radius guard, exact Legendre transform beyond it."""
        if abs(x) < self.radius_guard:
            return self.f(x)
        return self.f_exact(x)

    def Jtilde(self, a: float) -> float:
        return jtilde(self.spec, a)


def cumulants(spec: EnvironmentSpec, order: int) -> Analytics:
    if order < 2:
        raise ValueError("cumulant order must be >= 2")
    needed = max(order, spec.cramer_order + 2)
    derivs = spec.psi_derivatives(1.0, needed)
    u = tuple(float(x) for x in derivs[1 : needed + 1])
    sigma2 = u[1]
    kappa = [0.0] + [((-1) ** j) * u[j - 1] for j in range(1, needed + 1)]
    if spec.calibrated:
        theta = _revert_derivative_series(kappa, spec.cramer_order + 1)
        gt: Optional[float] = gamma_tilde(spec)
    else:
        theta, gt = np.zeros(0), None
    analytics = Analytics(
        spec=spec,
        psi0=spec.psi(0.0),
        sigma2=sigma2,
        cumulants=u[:order],
        cramer_order=spec.cramer_order,
        theta_coeffs=tuple(float(b) for b in theta),
        radius_guard=spec.radius_guard,
        gamma_tilde=gt,
    )
    logger.debug(f"🧪 [envspec] {spec.name}: sigma2={sigma2:.6g}, lambda={analytics.lambda_coeffs}")
    return analytics


_ANALYTICS: Dict[str, Analytics] = {}


def analytics_for(spec: EnvironmentSpec) -> Analytics:
    """Cached per spec content."""
    key = spec.model_dump_json()
    cached = _ANALYTICS.get(key)
    if cached is None:
        cached = _ANALYTICS[key] = cumulants(spec, max(2, spec.cramer_order + 2))
    return cached


def cramer_f(analytics: Analytics, x: float) -> float:
    """Truncated f(x) = 1 - x/(2 sigma^2) + x^2 lambda(x)."""
    require_calibrated(analytics.spec)
    if abs(x) >= analytics.radius_guard:
        raise RadiusExceededError(f"|x| = {abs(x)} >= radius guard {analytics.radius_guard}")
    b = analytics.theta_coeffs
    acc = 1.0
    xk = 1.0
    for k in range(1, len(b)):
        xk *= x
        acc -= b[k] * xk / (k + 1)
    return acc


def rate_function(spec: EnvironmentSpec, y: float) -> float:
    """I(y) = sup_theta {theta y - psi(1 - theta)}: exact Legendre transform of the spine log-mgf."""
    psi1 = spec.psi(1.0)

    def slope(theta: float) -> float:
        # K'(theta) - y with K(theta) = psi(1 - theta) - psi(1)
        return -spec.psi_derivatives(1.0 - theta, 1)[1] - y

    lo, hi = -1.0, 1.0
    while slope(lo) > 0.0:
        lo *= 2.0
        if lo < -1e6:
            return math.inf
    while slope(hi) < 0.0:
        hi *= 2.0
        if hi > 1e6:
            return math.inf
    theta = optimize.brentq(slope, lo, hi, xtol=1e-14)
    return max(0.0, theta * y - (spec.psi(1.0 - theta) - psi1))


def f_exact(spec: EnvironmentSpec, x: float) -> float:
    if x == 0.0:
        return 1.0
    return 1.0 - rate_function(spec, x) / x


# ---------------------------------------------------------------------------
# gamma tilde
# ---------------------------------------------------------------------------


def jtilde(spec: EnvironmentSpec, a: float, xatol: float = 1e-10) -> float:
    """J~(a) = inf_{t >= 0} {psi(-t) - a t}; convex inner problem."""

    def objective(t: float) -> float:
        return spec.psi(-t) - a * t

    def slope(t: float) -> float:
        return -spec.psi_derivatives(-t, 1)[1] - a

    if slope(0.0) >= 0.0:
        return spec.psi(0.0)
    hi = 1.0
    while slope(hi) < 0.0:
        hi *= 2.0
        if hi > 1e8:
            raise ConvergenceError(f"J~({a}): inner minimisation has no bracket")
    res = optimize.minimize_scalar(objective, bounds=(0.0, hi), method="bounded", options={"xatol": xatol})
    return float(min(res.fun, objective(0.0)))


def gamma_tilde(spec: EnvironmentSpec, xtol: float = 1e-8) -> float:
    """gamma~ = sup{a : J~(a) > 0}, by bisection on a in (0, 10 sigma^2 + 10)."""
    require_calibrated(spec)
    sigma2 = spec.psi_derivatives(1.0, 2)[2]
    cap = 10.0 * sigma2 + 10.0
    lo, hi = 0.0, 1.0
    while jtilde(spec, hi) > 0.0:
        lo, hi = hi, hi * 2.0
        if hi > cap:
            if jtilde(spec, cap) > 0.0:
                raise ConvergenceError(f"gamma~: J~ still positive at a = {cap}")
            hi = cap
            break
    return float(optimize.bisect(lambda a: jtilde(spec, a), lo, hi, xtol=xtol))


def summary(spec: EnvironmentSpec) -> Dict[str, float]:
    """Flat dict for the `calibrate` subcommand."""
    an = analytics_for(spec)
    out: Dict[str, float] = {
        "psi(0)": an.psi0,
        "psi(1)": spec.psi(1.0),
        "psi'(1)": spec.psi_derivatives(1.0, 1)[1],
        "sigma2": an.sigma2,
        "lattice": float(spec.lattice),
        "E[N]": spec.mean_offspring,
    }
    for j, uj in enumerate(an.cumulants, start=1):
        out[f"u{j}"] = uj
    for k, lk in enumerate(an.lambda_coeffs):
        out[f"lambda{k}"] = lk
    if an.gamma_tilde is not None:
        out["gamma_tilde"] = an.gamma_tilde
        out["psi0/gamma_tilde"] = an.psi0 / an.gamma_tilde
    return out


def weight_sampler_arrays(spec: EnvironmentSpec) -> Tuple[np.ndarray, np.ndarray]:
    """(values, cumulative probs) for discrete weight tables."""
    w = spec.weights
    if not isinstance(w, DiscreteWeights):
        raise TypeError("weight table requested for a parametric law")
    return np.asarray(w.values, dtype=float), np.cumsum(np.asarray(w.probs, dtype=float))


def offspring_cdf(spec: EnvironmentSpec) -> Tuple[List[int], np.ndarray]:
    ks, ps = spec.offspring_arrays()
    return [int(k) for k in ks], np.cumsum(ps)
