"""
日志配置模块

One rotating log file plus an optional console stream on the root logger.
"""

from __future__ import annotations

import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Iterable

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# third-party loggers that flood INFO during graph compilation and numeric solves
NOISY_LOGGERS = ("langgraph", "httpx", "numexpr")

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}


def parse_level(level: str | int) -> int:
    if isinstance(level, int):
        return level
    return _LEVELS.get(str(level).upper(), logging.INFO)


def setup_logging(
    log_dir: str = "logs",
    log_file: str = "rwre.log",
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5,
    level: str | int = logging.INFO,
    console_output: bool = True,
    quiet: Iterable[str] = NOISY_LOGGERS,
) -> Path:
    """
    配置日志系统, 返回日志文件路径

    Args:
        log_dir: 日志文件目录（相对路径按当前工作目录解析）
        log_file: 日志文件名
        max_bytes: 单个日志文件最大大小（字节），超过后轮转
        backup_count: 保留的备份文件数量
        level: 日志级别 (名称或数值)
        console_output: 是否同时输出到控制台
        quiet: 压到 WARNING 的第三方 logger
    """
    lvl = parse_level(level)
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)
    log_file_path = log_path / log_file

    root_logger = logging.getLogger()
    root_logger.setLevel(lvl)

    # 重复调用 (测试 / 连续运行多个命令) 时先关闭旧 handler
    for h in list(root_logger.handlers):
        h.close()
        root_logger.removeHandler(h)

    formatter = logging.Formatter(LOG_FORMAT, DATE_FORMAT)
    file_handler = RotatingFileHandler(
        filename=str(log_file_path),
        maxBytes=max_bytes,
        backupCount=backup_count,
        encoding="utf-8",
    )
    file_handler.setLevel(lvl)
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)

    if console_output:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(lvl)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    for name in quiet:
        logging.getLogger(name).setLevel(max(lvl, logging.WARNING))

    logger = logging.getLogger(__name__)
    logger.info(f"📝 [logging] file: {log_file_path}, level: {logging.getLevelName(lvl)}, rotate at {max_bytes / 1024 / 1024:.1f}MB x {backup_count}")
    return log_file_path


def setup_logging_from_settings(settings) -> Path:
    """
    从settings配置日志

    Args:
        settings: AppSettings实例
    """
    return setup_logging(
        log_dir=settings.log_dir,
        log_file=settings.log_file,
        max_bytes=settings.log_max_bytes,
        backup_count=settings.log_backup_count,
        level=settings.log_level,
        console_output=settings.log_console_output,
    )
