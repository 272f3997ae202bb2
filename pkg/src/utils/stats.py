from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass
class Moments:
    """
    Streaming (count, sum, sumsq) accumulator.

    merge() is associative and commutative up to floating-point reordering of the sums.
    """

    count: int = 0
    total: float = 0.0
    sumsq: float = 0.0

    def add(self, x: float) -> None:
        self.count += 1
        self.total += x
        self.sumsq += x * x

    def extend(self, xs: Iterable[float]) -> "Moments":
        arr = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=float)
        self.count += int(arr.size)
        self.total += float(arr.sum())
        self.sumsq += float(np.dot(arr, arr))
        return self

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.count + other.count, self.total + other.total, self.sumsq + other.sumsq)

    @classmethod
    def of(cls, xs: Iterable[float]) -> "Moments":
        return cls().extend(xs)

    @classmethod
    def merge_all(cls, parts: Iterable["Moments"]) -> "Moments":
        out = cls()
        for p in parts:
            out = out.merge(p)
        return out

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else math.nan

    @property
    def variance(self) -> float:
        if self.count < 2:
            return 0.0
        mean = self.mean
        return max(0.0, (self.sumsq - self.count * mean * mean) / (self.count - 1))

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count else math.nan

    @property
    def rel_stderr(self) -> float:
        m = self.mean
        return abs(self.stderr / m) if m else math.inf


def mean_stderr(xs: Sequence[float]) -> Tuple[float, float]:
    m = Moments.of(xs)
    return m.mean, m.stderr


def within_sigma(a: float, sa: float, b: float, sb: float = 0.0, k: float = 3.0, floor: float = 1e-12) -> bool:
    """|a - b| <= k * sqrt(sa^2 + sb^2), with an absolute floor for zero-variance estimates."""
    return abs(a - b) <= k * math.sqrt(sa * sa + sb * sb) + floor


@dataclass(frozen=True)
class Fit:
    slope: float
    intercept: float
    stderr: float
    rvalue: float
    points: int


def linear_fit(x: Sequence[float], y: Sequence[float]) -> Fit:
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    mask = np.isfinite(xs) & np.isfinite(ys)
    if mask.sum() < 2:
        return Fit(math.nan, math.nan, math.nan, math.nan, int(mask.sum()))
    res = stats.linregress(xs[mask], ys[mask])
    return Fit(float(res.slope), float(res.intercept), float(res.stderr), float(res.rvalue), int(mask.sum()))


def proportion(successes: int, trials: int) -> Tuple[float, float]:
    """Binomial proportion with its standard error."""
    if trials <= 0:
        return math.nan, math.nan
    p = successes / trials
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / trials)


def quantiles(xs: Sequence[float], qs: Sequence[float] = (0.1, 0.5, 0.9)) -> List[float]:
    arr = np.asarray(xs, dtype=float)
    if arr.size == 0:
        return [math.nan for _ in qs]
    return [float(v) for v in np.quantile(arr, qs)]


def aggregate_estimates(df: pd.DataFrame, by: Sequence[str], value: str = "estimate") -> pd.DataFrame:
    """
    按参数分组汇总 replica 级结果

    Returns:
        pd.DataFrame: by 列 + mean / stderr / samples / median
    """
    if df.empty:
        logger.warning("⚠️ [stats] 没有可汇总的数据")
        return pd.DataFrame(columns=[*by, "mean", "stderr", "samples", "median"])
    grouped = df.groupby(list(by), sort=True)[value]
    out = grouped.agg(mean="mean", std="std", samples="count", median="median").reset_index()
    out["stderr"] = (out["std"].fillna(0.0) / np.sqrt(out["samples"])).astype(float)
    out = out.drop(columns=["std"])
    logger.info(f"📊 [stats] 汇总 {len(df)} 条记录 → {len(out)} 组")
    return out


def safe_log(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def ratio(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None or b == 0.0 or not math.isfinite(b):
        return None
    return a / b
