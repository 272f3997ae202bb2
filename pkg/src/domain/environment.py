from __future__ import annotations

import math
from fractions import Fraction
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import logsumexp

PROB_TOL = 1e-12
LATTICE_TOL = 1e-9


def _cumulants_from_moments(raw: List[float]) -> List[float]:
    """raw[k] = E[L^k] for k = 0..J; returns kappa[1..J] (index 0 unused)."""
    order = len(raw) - 1
    kappa = [0.0] * (order + 1)
    for n in range(1, order + 1):
        acc = raw[n]
        for m in range(1, n):
            acc -= math.comb(n - 1, m - 1) * kappa[m] * raw[n - m]
        kappa[n] = acc
    return kappa


class DiscreteWeights(BaseModel):
    """Finite table of (value, probability) pairs for A."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["table"] = "table"
    values: Tuple[float, ...]
    probs: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_table(self) -> "DiscreteWeights":
        if len(self.values) == 0 or len(self.values) != len(self.probs):
            raise ValueError("weights table needs matching non-empty values/probs")
        if any(v <= 0.0 for v in self.values):
            raise ValueError("weight values must be positive")
        if any(p < 0.0 for p in self.probs):
            raise ValueError("weight probabilities must be non-negative")
        if abs(math.fsum(self.probs) - 1.0) > PROB_TOL:
            raise ValueError(f"weight probabilities sum to {math.fsum(self.probs)!r}, not 1")
        return self

    def log_moment(self, t: float) -> float:
        """log E[A^t]."""
        logs = np.log(np.asarray(self.values))
        return float(logsumexp(np.log(np.asarray(self.probs)) + t * logs))

    def log_moment_derivatives(self, t: float, order: int) -> List[float]:
        """[K(t), K'(t), ..., K^(order)(t)] for K(t) = log E[A^t]: cumulants of log A under the A^t tilt."""
        logs = np.log(np.asarray(self.values))
        logw = np.log(np.asarray(self.probs)) + t * logs
        w = np.exp(logw - logsumexp(logw))
        raw = [float(np.sum(w * logs**k)) for k in range(order + 1)]
        kappa = _cumulants_from_moments(raw)
        kappa[0] = self.log_moment(t)
        return kappa

    def log_support(self) -> np.ndarray:
        return np.log(np.asarray([v for v, p in zip(self.values, self.probs) if p > 0.0]))

    def is_lattice(self) -> bool:
        logs = sorted(set(float(x) for x in self.log_support()))
        if len(logs) <= 2:
            return True
        diffs = [x - logs[0] for x in logs[1:]]
        base = diffs[0]
        for d in diffs[1:]:
            ratio = d / base
            approx = Fraction(ratio).limit_denominator(1000)
            if abs(ratio - float(approx)) > LATTICE_TOL:
                return False
        return True


class LogNormalWeights(BaseModel):
    """log A ~ Normal(m, s2)."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["lognormal"] = "lognormal"
    m: float
    s2: float = Field(gt=0.0)

    def log_moment(self, t: float) -> float:
        return t * self.m + 0.5 * t * t * self.s2

    def log_moment_derivatives(self, t: float, order: int) -> List[float]:
        out = [self.log_moment(t), self.m + t * self.s2, self.s2]
        out += [0.0] * max(0, order - 2)
        return out[: order + 1]

    def is_lattice(self) -> bool:
        return False


WeightLaw = Annotated[Union[DiscreteWeights, LogNormalWeights], Field(discriminator="kind")]


class EnvironmentSpec(BaseModel):
    """
    Law of (A_i, i <= N): offspring law q, weight law, ellipticity bounds.

    Weights are i.i.d. given N. A spec marked `calibrated` is checked to satisfy
    |psi(1)| and |psi'(1)| below `tolerance` at construction.
    """

    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal["two_point", "lognormal", "table"]
    offspring: Tuple[Tuple[int, float], ...]
    weights: WeightLaw
    weights_iid_given_N: bool = True
    ellipticity: bool = True
    epsilon0: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    N0: Optional[int] = Field(default=None, ge=1)
    calibrated: bool = False
    cramer_order: int = Field(default=3, ge=1, le=12)
    tolerance: float = Field(default=1e-10, gt=0.0)
    radius_guard: float = Field(default=0.5, gt=0.0)

    @field_validator("offspring")
    @classmethod
    def _v_offspring(cls, v: Tuple[Tuple[int, float], ...]) -> Tuple[Tuple[int, float], ...]:
        if not v:
            raise ValueError("offspring law is empty")
        ks = [k for k, _ in v]
        if len(set(ks)) != len(ks):
            raise ValueError("offspring law repeats a count")
        if any(k < 0 for k in ks) or any(p < 0.0 for _, p in v):
            raise ValueError("offspring counts and probabilities must be non-negative")
        total = math.fsum(p for _, p in v)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"offspring probabilities sum to {total!r}, not 1")
        return tuple(sorted((int(k), float(p)) for k, p in v))

    @model_validator(mode="after")
    def _check_spec(self) -> "EnvironmentSpec":
        if not self.weights_iid_given_N:
            raise ValueError("only weights i.i.d. given N are supported")
        if self.mean_offspring <= 1.0:
            raise ValueError(f"E[N] = {self.mean_offspring} is not supercritical")
        if self.ellipticity:
            if isinstance(self.weights, LogNormalWeights):
                raise ValueError("log-normal weights are unbounded: set ellipticity off")
            if self.epsilon0 is None or self.N0 is None:
                raise ValueError("ellipticity needs epsilon0 and N0")
            lo, hi = self.epsilon0, 1.0 / self.epsilon0
            for v in self.weights.values:
                if not (lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12)):
                    raise ValueError(f"weight {v} outside [{lo}, {hi}]")
            if any(k > self.N0 and p > 0.0 for k, p in self.offspring):
                raise ValueError(f"offspring law charges counts above N0={self.N0}")
        if self.calibrated:
            psi1 = self.psi(1.0)
            dpsi1 = self.psi_derivatives(1.0, 1)[1]
            if abs(psi1) >= self.tolerance or abs(dpsi1) >= self.tolerance:
                raise ValueError(f"spec marked calibrated but psi(1)={psi1!r}, psi'(1)={dpsi1!r}")
        return self

    # ---- offspring law ----
    @property
    def mean_offspring(self) -> float:
        return math.fsum(k * p for k, p in self.offspring)

    @property
    def max_offspring(self) -> int:
        return max(k for k, p in self.offspring if p > 0.0)

    @property
    def lattice(self) -> bool:
        return self.weights.is_lattice()

    @property
    def schroeder(self) -> bool:
        """q0 + q1 > 0 (Schroeder case); False means Boettcher."""
        return any(k <= 1 and p > 0.0 for k, p in self.offspring)

    @property
    def alpha(self) -> Optional[float]:
        """|log epsilon0| when ellipticity holds."""
        if not self.ellipticity or self.epsilon0 is None:
            return None
        return abs(math.log(self.epsilon0))

    def offspring_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        ks = np.asarray([k for k, _ in self.offspring], dtype=np.int64)
        ps = np.asarray([p for _, p in self.offspring], dtype=float)
        return ks, ps

    # ---- log-Laplace transform ----
    def psi(self, t: float) -> float:
        """psi(t) = log(E[N] E[A^t]) for i.i.d. weights."""
        return math.log(self.mean_offspring) + self.weights.log_moment(t)

    def psi_derivatives(self, t: float, order: int) -> List[float]:
        out = list(self.weights.log_moment_derivatives(t, order))
        out[0] = self.psi(t)
        return out
