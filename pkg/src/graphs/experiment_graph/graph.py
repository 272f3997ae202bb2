from __future__ import annotations

import logging
from typing import Any, Dict

from langgraph.graph import END, START, StateGraph

from src.core.settings import AppSettings
from src.graphs.experiment_graph.nodes import judge_node, prepare_node, run_experiment_node, write_outputs_node
from src.graphs.experiment_graph.state import ExperimentState

logger = logging.getLogger(__name__)


def route_after_prepare(state: Dict[str, Any]) -> str:
    if state.get("error"):
        logger.info("➡️ [路由决策] route_after_prepare - 准备失败，直接结束")
        return "end"
    return "run_experiment"


def route_after_run(state: Dict[str, Any]) -> str:
    if state.get("error"):
        logger.info("➡️ [路由决策] route_after_run - 实验失败，直接结束")
        return "end"
    return "judge"


def route_after_judge(state: Dict[str, Any]) -> str:
    """没有任何结果行时跳过写出"""
    reports = state.get("reports") or []
    if not any(r.records or r.estimates for r in reports):
        logger.warning("⚠️ [路由决策] route_after_judge - 没有结果，跳过写出")
        return "end"
    return "write_outputs"


def build_experiment_graph(settings: AppSettings):
    """
    构建实验 Graph

    流程：
    START → prepare → run_experiment → judge → write_outputs → END
    prepare / run_experiment 失败时直接 END；没有结果时 judge 之后直接 END。
    """
    g = StateGraph(ExperimentState)
    g.add_node("prepare", prepare_node(settings))
    g.add_node("run_experiment", run_experiment_node(settings))
    g.add_node("judge", judge_node(settings))
    g.add_node("write_outputs", write_outputs_node(settings))

    g.add_edge(START, "prepare")
    g.add_conditional_edges("prepare", route_after_prepare, {"run_experiment": "run_experiment", "end": END})
    g.add_conditional_edges("run_experiment", route_after_run, {"judge": "judge", "end": END})
    g.add_conditional_edges("judge", route_after_judge, {"write_outputs": "write_outputs", "end": END})
    g.add_edge("write_outputs", END)
    return g.compile()


def run_pipeline(settings: AppSettings, command: str, arguments: Dict[str, Any]) -> Dict[str, Any]:
    graph = build_experiment_graph(settings)
    return graph.invoke({"command": command, "arguments": arguments})
