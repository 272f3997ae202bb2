from __future__ import annotations

import os
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from .keyvalue import load_dotenv


class AppSettings(BaseSettings):
    """
    Central settings for the toolkit.
    - Loads from environment variables (optionally from a dotenv file).
    - Keeps "config/runtime" separate: settings only stores configuration, never arenas or walks.
    """

    model_config = SettingsConfigDict(env_file=None, extra="ignore", populate_by_name=True)

    # ---- dotenv ----
    dotenv_path: str = Field(default=".env", validation_alias="RWRE_ENV_FILE")

    # ---- reproducibility ----
    master_seed: int = Field(default=20240611, ge=0, lt=2**64, validation_alias="RWRE_SEED")
    replicas: int = Field(default=100, ge=1, validation_alias="RWRE_REPLICAS")

    # ---- worker pool ----
    threads: int = Field(default=1, ge=1, le=256, validation_alias="RWRE_THREADS")
    executor: Literal["thread", "process"] = Field(default="thread", validation_alias="RWRE_EXECUTOR")

    # ---- outputs ----
    out_dir: str = Field(default="out", validation_alias="RWRE_OUT_DIR")
    output_format: Literal["csv", "jsonl"] = Field(default="csv", validation_alias="RWRE_FORMAT")
    config_path: Optional[str] = Field(default=None, validation_alias="RWRE_CONFIG")

    # ---- simulation caps ----
    node_cap: int = Field(default=10**8, ge=1, validation_alias="RWRE_NODE_CAP")
    step_cap: int = Field(default=10**8, ge=1, validation_alias="RWRE_STEP_CAP")
    r_cap: int = Field(default=200, ge=1, validation_alias="RWRE_R_CAP")
    censor_warn_rate: float = Field(default=0.2, ge=0.0, le=1.0, validation_alias="RWRE_CENSOR_WARN")

    # ---- 日志配置 ----
    log_dir: str = Field(default="logs", validation_alias="LOG_DIR")
    log_file: str = Field(default="rwre.log", validation_alias="LOG_FILE")
    log_max_bytes: int = Field(default=10 * 1024 * 1024, ge=1024 * 1024, validation_alias="LOG_MAX_BYTES")  # 默认10MB
    log_backup_count: int = Field(default=5, ge=1, le=20, validation_alias="LOG_BACKUP_COUNT")
    log_level: str = Field(default="INFO", validation_alias="LOG_LEVEL")  # DEBUG, INFO, WARNING, ERROR, CRITICAL
    log_console_output: bool = Field(default=True, validation_alias="LOG_CONSOLE_OUTPUT")

    def with_overrides(self, **overrides: object) -> "AppSettings":
        """Return a validated copy with CLI overrides applied; None values are ignored."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        return self.model_validate({**self.model_dump(), **clean})


def load_settings() -> AppSettings:
    dotenv_path = os.getenv("RWRE_ENV_FILE", ".env")
    load_dotenv(dotenv_path, override=False)
    return AppSettings()
