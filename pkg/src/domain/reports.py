from __future__ import annotations

from typing import Any, Dict, List, Optional

import pandas as pd
from pydantic import BaseModel, Field


class Estimate(BaseModel):
    """One grid point of an experiment: estimate, its standard error and what it is compared with."""

    check: str
    params: Dict[str, Any] = Field(default_factory=dict)
    estimate: float
    stderr: float = 0.0
    samples: int = 0
    prediction: Optional[float] = None
    ratio: Optional[float] = None
    seed: Optional[int] = None
    flags: List[str] = Field(default_factory=list)


class Verdict(BaseModel):
    rule: str
    passed: bool
    detail: str = ""


class ExperimentReport(BaseModel):
    experiment: str
    spec: str
    grid: Dict[str, List[Any]] = Field(default_factory=dict)
    estimates: List[Estimate] = Field(default_factory=list)
    verdicts: List[Verdict] = Field(default_factory=list)
    records: List[Dict[str, Any]] = Field(default_factory=list)
    censored: int = 0
    resamples: int = 0
    seeds: Dict[str, int] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    def add_verdict(self, rule: str, passed: bool, detail: str = "") -> Verdict:
        v = Verdict(rule=rule, passed=bool(passed), detail=detail)
        self.verdicts.append(v)
        return v

    def verdict(self, rule: str) -> Verdict:
        for v in self.verdicts:
            if v.rule == rule:
                return v
        raise KeyError(rule)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def estimates_frame(self) -> pd.DataFrame:
        """Long-format table: one row per estimate, params flattened into columns."""
        rows = []
        for e in self.estimates:
            row: Dict[str, Any] = {"check": e.check, "spec": self.spec}
            row.update(e.params)
            row.update(
                {
                    "estimate": e.estimate,
                    "stderr": e.stderr,
                    "prediction": e.prediction,
                    "ratio": e.ratio,
                    "samples": e.samples,
                    "seed": e.seed,
                    "flags": ";".join(e.flags),
                }
            )
            rows.append(row)
        return pd.DataFrame(rows)
