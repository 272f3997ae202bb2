from __future__ import annotations

import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor, as_completed
from typing import Callable, List, Literal, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def _executor(kind: str, workers: int) -> Executor:
    if kind == "process":
        return ProcessPoolExecutor(max_workers=workers)
    return ThreadPoolExecutor(max_workers=workers)


def fan_out(
    fn: Callable[[T], R],
    tasks: Sequence[T],
    threads: int = 1,
    executor: Literal["thread", "process"] = "thread",
    label: str = "tasks",
) -> List[R]:
    """
    并发执行 replica / 网格点任务

    Results come back in task order whatever the completion order, so callers aggregate
    deterministically. With threads == 1 tasks run inline. A failing task is logged and
    re-raised once the pool is shut down.

    Args:
        fn: 单个任务函数 (process 模式下必须可 pickle)
        tasks: 任务参数列表
        threads: 并发数
        executor: "thread" | "process"
        label: 日志标签
    """
    total = len(tasks)
    if total == 0:
        logger.warning(f"⚠️ [pool] {label}: 没有任务")
        return []
    start = time.time()
    if threads <= 1:
        out = []
        for i, t in enumerate(tasks, 1):
            out.append(fn(t))
            if i % 10 == 0:
                logger.info(f"📊 [pool] {label} 进度: {i}/{total}")
        logger.info(f"✅ [pool] {label} 完成 {total} 个任务, 耗时 {time.time() - start:.2f}s")
        return out

    logger.info(f"🚀 [pool] {label}: {total} 个任务, 并发数 {threads} ({executor})")
    results: List[R] = [None] * total  # type: ignore[list-item]
    failure: BaseException | None = None
    with _executor(executor, threads) as ex:
        future_to_index = {ex.submit(fn, t): i for i, t in enumerate(tasks)}
        completed = 0
        for future in as_completed(future_to_index):
            idx = future_to_index[future]
            try:
                results[idx] = future.result()
            except Exception as e:
                logger.error(f"❌ [pool] {label} 任务 #{idx} 失败: {e}")
                if failure is None:
                    failure = e
                    for f in future_to_index:
                        f.cancel()
                continue
            completed += 1
            if completed % 10 == 0:
                logger.info(f"📊 [pool] {label} 进度: {completed}/{total}")
    if failure is not None:
        raise failure
    logger.info(f"✅ [pool] {label} 完成 {total} 个任务, 耗时 {time.time() - start:.2f}s")
    return results
