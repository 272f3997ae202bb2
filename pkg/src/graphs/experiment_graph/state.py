from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, TypedDict

from src.domain.environment import EnvironmentSpec
from src.domain.reports import ExperimentReport


class ExperimentState(TypedDict, total=False):
    """一次 CLI 运行的状态"""

    # 输入
    command: str
    arguments: Dict[str, Any]

    # prepare
    spec: Optional[EnvironmentSpec]
    spec_source: Optional[str]

    # run_experiment
    reports: List[ExperimentReport]

    # judge
    passed: Optional[bool]

    # write_outputs
    files: List[Path]
    manifest_path: Optional[Path]

    # 错误处理
    error: Optional[str]
    error_type: Optional[str]
