from __future__ import annotations

from typing import Dict, Optional

from pydantic import BaseModel, Field


class WalkSummary(BaseModel):
    """Trajectory summary record, one per replica (JSONL)."""

    seed: int
    steps: int
    returns: int
    censored: bool
    Xstar: int
    R: Optional[int] = None
    M: Dict[int, int] = Field(default_factory=dict)
    K: Dict[int, int] = Field(default_factory=dict)
    root_local_time: int = 0
