"""Environment spec files: flat `section.key = value` lines."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Tuple

from pydantic import ValidationError

from src.core.errors import SpecValidationError
from src.core.keyvalue import parse_key_values, read_key_values
from src.domain.environment import DiscreteWeights, EnvironmentSpec, LogNormalWeights

logger = logging.getLogger(__name__)

_BOOL = {"true": True, "false": False, "1": True, "0": False, "on": True, "off": False, "yes": True, "no": False}


def _pairs(raw: str, key: str) -> List[Tuple[str, str]]:
    out = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise SpecValidationError(f"{key}: expected `x:y` pairs, got {part!r}")
        a, b = part.split(":", 1)
        out.append((a.strip(), b.strip()))
    if not out:
        raise SpecValidationError(f"{key} is empty")
    return out


def _bool(raw: str, key: str) -> bool:
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError:
        raise SpecValidationError(f"{key}: not a boolean: {raw!r}") from None


def spec_from_mapping(kv: Dict[str, str]) -> EnvironmentSpec:
    """
    Keys: environment.{name, kind, q, weights, ellipticity, epsilon0, N0, calibrated} and
    analytics.{cramer_order, tolerance, radius_guard}. `q` and `weights` are comma-separated
    `x:y` pairs; log-normal weights are the single pair `m:s2`.
    """
    try:
        kind = kv["environment.kind"].strip()
        q = tuple((int(k), float(p)) for k, p in _pairs(kv["environment.q"], "environment.q"))
        wpairs = _pairs(kv["environment.weights"], "environment.weights")
        if kind == "lognormal":
            if len(wpairs) != 1:
                raise SpecValidationError("log-normal weights take one `m:s2` pair")
            weights: DiscreteWeights | LogNormalWeights = LogNormalWeights(m=float(wpairs[0][0]), s2=float(wpairs[0][1]))
        else:
            weights = DiscreteWeights(values=tuple(float(v) for v, _ in wpairs), probs=tuple(float(p) for _, p in wpairs))
        fields: Dict[str, object] = {
            "name": kv.get("environment.name", "custom").strip(),
            "kind": kind,
            "offspring": q,
            "weights": weights,
        }
        if "environment.ellipticity" in kv:
            fields["ellipticity"] = _bool(kv["environment.ellipticity"], "environment.ellipticity")
        if "environment.calibrated" in kv:
            fields["calibrated"] = _bool(kv["environment.calibrated"], "environment.calibrated")
        for key, field, conv in (
            ("environment.epsilon0", "epsilon0", float),
            ("environment.N0", "N0", int),
            ("analytics.cramer_order", "cramer_order", int),
            ("analytics.tolerance", "tolerance", float),
            ("analytics.radius_guard", "radius_guard", float),
        ):
            if key in kv and kv[key].strip().lower() not in ("", "none"):
                fields[field] = conv(kv[key])
        return EnvironmentSpec(**fields)
    except KeyError as e:
        raise SpecValidationError(f"missing key {e.args[0]}") from None
    except (ValidationError, ValueError) as e:
        raise SpecValidationError(str(e)) from e


def parse_spec(text: str) -> EnvironmentSpec:
    return spec_from_mapping(parse_key_values(text))


def load_spec(path: str | Path) -> EnvironmentSpec:
    p = Path(path)
    if not p.exists():
        raise SpecValidationError(f"spec file not found: {p}")
    spec = spec_from_mapping(read_key_values(p))
    logger.info(f"📄 [spec_file] loaded {spec.name} ({spec.kind}) from {p}")
    return spec


def dump_spec(spec: EnvironmentSpec) -> str:
    """Canonical text; floats use repr so parse_spec(dump_spec(s)) == s."""
    w = spec.weights
    if isinstance(w, LogNormalWeights):
        weights = f"{w.m!r}:{w.s2!r}"
    else:
        weights = ", ".join(f"{v!r}:{p!r}" for v, p in zip(w.values, w.probs))
    lines = [
        "# environment spec",
        f"environment.name = {spec.name}",
        f"environment.kind = {spec.kind}",
        "environment.q = " + ", ".join(f"{k}:{p!r}" for k, p in spec.offspring),
        f"environment.weights = {weights}",
        f"environment.ellipticity = {str(spec.ellipticity).lower()}",
        f"environment.epsilon0 = {spec.epsilon0!r}",
        f"environment.N0 = {spec.N0!r}",
        f"environment.calibrated = {str(spec.calibrated).lower()}",
        f"analytics.cramer_order = {spec.cramer_order}",
        f"analytics.tolerance = {spec.tolerance!r}",
        f"analytics.radius_guard = {spec.radius_guard!r}",
    ]
    return "\n".join(lines) + "\n"


def save_spec(spec: EnvironmentSpec, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dump_spec(spec), encoding="utf-8")
    return p
