"""Output files: long-format tables (CSV / JSONL) per experiment plus one manifest.json per run."""

from __future__ import annotations

import json
import logging
import math
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from src.core.settings import AppSettings
from src.domain.environment import EnvironmentSpec
from src.domain.reports import ExperimentReport

logger = logging.getLogger(__name__)

PACKAGES = ("numpy", "scipy", "pandas", "pydantic", "pydantic-settings", "langgraph", "hypothesis")

Format = Literal["csv", "jsonl"]


class ResultJSONEncoder(json.JSONEncoder):
    """JSON 编码器: numpy 标量/数组, pydantic 模型, datetime"""

    def default(self, obj: Any) -> Any:
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, BaseModel):
            return obj.model_dump()
        if isinstance(obj, datetime):
            return obj.isoformat()
        if isinstance(obj, (set, frozenset, tuple)):
            return list(obj)
        return super().default(obj)


def _dumps(obj: Any, **kw: Any) -> str:
    return json.dumps(obj, cls=ResultJSONEncoder, ensure_ascii=False, **kw)


def write_frame(df: pd.DataFrame, path: Path, fmt: Format) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        df.to_csv(path, index=False)
    else:
        with path.open("w", encoding="utf-8") as fh:
            for row in df.to_dict(orient="records"):
                fh.write(_dumps(row) + "\n")
    return path


def write_records(records: Sequence[Dict[str, Any]], path: Path, fmt: Format) -> Path:
    """Nested fields stay nested in JSONL; CSV flattens them to dotted columns."""
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for r in records:
                fh.write(_dumps(r) + "\n")
        return path
    frame = pd.json_normalize([json.loads(_dumps(r)) for r in records], sep=".")
    frame.to_csv(path, index=False)
    return path


def write_report(report: ExperimentReport, out_dir: str | Path, fmt: Format = "csv") -> List[Path]:
    """
    写出单个实验结果

    `<experiment>.<fmt>` holds the estimates, `<experiment>_records.<fmt>` the per-replica records
    and `<experiment>_verdicts.json` the verdicts and notes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: List[Path] = []
    frame = report.estimates_frame()
    if not frame.empty:
        paths.append(write_frame(frame, out / f"{report.experiment}.{fmt}", fmt))
    if report.records:
        paths.append(write_records(report.records, out / f"{report.experiment}_records.{fmt}", fmt))
    verdicts = {
        "experiment": report.experiment,
        "spec": report.spec,
        "passed": report.passed,
        "verdicts": [v.model_dump() for v in report.verdicts],
        "censored": report.censored,
        "resamples": report.resamples,
        "notes": report.notes,
    }
    vpath = out / f"{report.experiment}_verdicts.json"
    vpath.write_text(_dumps(verdicts, indent=2), encoding="utf-8")
    paths.append(vpath)
    logger.info(f"💾 [writers] {report.experiment}: {len(paths)} files → {out}")
    return paths


def package_versions(names: Iterable[str] = PACKAGES) -> Dict[str, Optional[str]]:
    out: Dict[str, Optional[str]] = {"python": platform.python_version()}
    for name in names:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = None
    return out


def write_manifest(
    out_dir: str | Path,
    settings: AppSettings,
    command: str,
    arguments: Dict[str, Any],
    spec: Optional[EnvironmentSpec],
    reports: Sequence[ExperimentReport],
    files: Sequence[Path] = (),
) -> Path:
    """manifest.json: config echo, package versions, seeds and the verdict summary of the run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "arguments": {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in arguments.items()},
        "settings": settings.model_dump(),
        "spec": spec.model_dump() if spec is not None else None,
        "versions": package_versions(),
        "seeds": {"master": settings.master_seed, "replicas": settings.replicas, "per_report": {r.experiment: r.seeds for r in reports}},
        "verdicts": {r.experiment: {v.rule: v.passed for v in r.verdicts} for r in reports},
        "files": [str(p) for p in files],
        "created_at": datetime.now(timezone.utc),
    }
    path = out / "manifest.json"
    path.write_text(_dumps(manifest, indent=2), encoding="utf-8")
    logger.info(f"💾 [writers] manifest → {path}")
    return path
