from __future__ import annotations

import os
from pathlib import Path
from typing import Dict


def parse_key_values(text: str) -> Dict[str, str]:
    """
    Parse flat `key = value` lines.
    - Supports: KEY=VALUE and dotted keys (environment.kind = two_point)
    - Supports: # comments
    - Supports: quoted VALUE (single/double quotes)
    Later keys override earlier ones.
    """
    out: Dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            continue

        k, v = line.split("=", 1)
        k = k.strip()
        v = v.strip()

        if k.startswith("export "):
            k = k[len("export ") :].strip()

        is_quoted = len(v) >= 2 and ((v[0] == v[-1] == '"') or (v[0] == v[-1] == "'"))

        # quoted values may contain '#'
        if not is_quoted and "#" in v:
            v = v.split("#", 1)[0].strip()

        if is_quoted:
            v = v[1:-1]

        out[k] = v
    return out


def read_key_values(path: str | Path) -> Dict[str, str]:
    p = Path(path)
    return parse_key_values(p.read_text(encoding="utf-8", errors="ignore"))


def load_dotenv(dotenv_path: str = ".env", override: bool = False) -> None:
    """Apply a dotenv file to os.environ (no python-dotenv dependency)."""
    p = Path(dotenv_path)
    if not p.exists():
        return

    for k, v in read_key_values(p).items():
        if not override and k in os.environ:
            continue
        os.environ[k] = v
