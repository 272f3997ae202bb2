"""Text dumps of grown trees: one `id parent depth A V Vbar` line per vertex, ordered by id."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Tuple

from src.core.errors import SpecValidationError
from src.domain.environment import EnvironmentSpec
from src.services.tree import TreeArena

logger = logging.getLogger(__name__)

HEADER = "# id parent depth A V Vbar"
FRONTIER_PREFIX = "# frontier"


def dump_tree(arena: TreeArena) -> str:
    lines = [HEADER]
    for i in range(len(arena)):
        lines.append(f"{i} {arena.parent[i]} {arena.depth[i]} {arena.A[i]!r} {arena.V[i]!r} {arena.Vbar[i]!r}")
    frontier = [i for i in range(len(arena)) if arena.is_frontier(i)]
    lines.append(FRONTIER_PREFIX + "".join(f" {i}" for i in frontier))
    return "\n".join(lines) + "\n"


def parse_tree(spec: EnvironmentSpec, text: str) -> TreeArena:
    rows: List[Tuple[int, int, int, float, float, float]] = []
    frontier: List[int] = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(FRONTIER_PREFIX):
            frontier = [int(x) for x in line[len(FRONTIER_PREFIX) :].split()]
            continue
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 6:
            raise SpecValidationError(f"tree dump line {no}: expected 6 fields, got {len(parts)}")
        rows.append((int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]), float(parts[5])))
    try:
        return TreeArena.from_records(spec, rows, frontier)
    except ValueError as e:
        raise SpecValidationError(f"tree dump: {e}") from e


def save_tree(arena: TreeArena, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dump_tree(arena), encoding="utf-8")
    logger.info(f"🌳 [tree_dump] {len(arena)} vertices → {p}")
    return p


def load_tree(spec: EnvironmentSpec, path: str | Path) -> TreeArena:
    return parse_tree(spec, Path(path).read_text(encoding="utf-8"))
