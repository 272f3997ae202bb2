from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Any, Dict, List

from src.core.errors import RwreError
from src.core.settings import AppSettings
from src.graphs.experiment_graph.runners import RUNNERS, resolve_spec
from src.infra.writers import write_manifest, write_report

logger = logging.getLogger(__name__)


def _failure(node: str, exc: RwreError) -> Dict[str, Any]:
    logger.error(f"❌ [节点错误] {node} - {type(exc).__name__}: {exc}")
    return {"error": str(exc), "error_type": type(exc).__name__}


def prepare_node(settings: AppSettings):
    """准备节点：解析环境 spec (内置名称或 spec 文件)"""

    def _node(state: Dict[str, Any]) -> Dict[str, Any]:
        command = state.get("command")
        args = state.get("arguments") or {}
        logger.info(f"🔍 [节点执行] prepare - 命令: {command}")
        if command not in RUNNERS:
            return _failure("prepare", RwreError(f"unknown command {command!r}"))
        source = args.get("spec") or settings.config_path or "sym2"
        try:
            spec = resolve_spec(str(source))
        except RwreError as e:
            return _failure("prepare", e)
        logger.info(f"✅ [节点结果] prepare - spec {spec.name} ({spec.kind}, calibrated={spec.calibrated})")
        return {"spec": spec, "spec_source": str(source)}

    return _node


def run_experiment_node(settings: AppSettings):
    """实验节点：按命令表执行，收集 ExperimentReport"""

    def _node(state: Dict[str, Any]) -> Dict[str, Any]:
        command = state["command"]
        spec = state["spec"]
        start = time.time()
        logger.info(f"🚀 [节点执行] run_experiment - {command} on {spec.name}, replicas={settings.replicas}, threads={settings.threads}")
        try:
            reports = RUNNERS[command](spec, state.get("arguments") or {}, settings)
        except RwreError as e:
            return _failure("run_experiment", e)
        records = sum(len(r.records) + len(r.estimates) for r in reports)
        logger.info(f"✅ [节点结果] run_experiment - {len(reports)} reports, {records} rows, 耗时 {time.time() - start:.2f}s")
        return {"reports": reports}

    return _node


def judge_node(settings: AppSettings):
    """判定节点：汇总 verdict"""

    def _node(state: Dict[str, Any]) -> Dict[str, Any]:
        reports = state.get("reports") or []
        passed = True
        for rep in reports:
            for v in rep.verdicts:
                mark = "✅" if v.passed else "❌"
                logger.info(f"{mark} [judge] {rep.experiment}.{v.rule}: {v.detail}")
            if rep.censored:
                logger.warning(f"⚠️ [judge] {rep.experiment}: {rep.censored} censored runs")
            for note in rep.notes:
                logger.info(f"📝 [judge] {rep.experiment}: {note}")
            passed &= rep.passed
        logger.info(f"📊 [judge] overall: {'PASS' if passed else 'FAIL'}")
        return {"passed": passed}

    return _node


def write_outputs_node(settings: AppSettings):
    """输出节点：写出表格与 manifest.json"""

    def _node(state: Dict[str, Any]) -> Dict[str, Any]:
        out_dir = Path(settings.out_dir)
        files: List[Path] = []
        reports = state.get("reports") or []
        for rep in reports:
            files.extend(write_report(rep, out_dir, settings.output_format))
        manifest = write_manifest(
            out_dir,
            settings,
            state["command"],
            dict(state.get("arguments") or {}),
            state.get("spec"),
            reports,
            files,
        )
        return {"files": files, "manifest_path": manifest}

    return _node
