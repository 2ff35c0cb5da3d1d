from __future__ import annotations

import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


@dataclass
class Settings:
    env: str = os.getenv("ENV", "dev")
    log_level: str = os.getenv("LOG_LEVEL", "INFO")

    # Outputs
    output_dir: str = os.getenv("OUTPUT_DIR", "./results")
    # Prometheus textfile sink; unset disables the export
    metrics_textfile: str | None = os.getenv("METRICS_TEXTFILE")

    # Sweep cells executed concurrently in worker threads
    sweep_concurrency: int = int(os.getenv("SWEEP_CONCURRENCY", "4"))

    # Retry/backoff defaults for file writes
    retry_max_attempts: int = int(os.getenv("RETRY_MAX_ATTEMPTS", "5"))
    retry_initial_delay: float = float(os.getenv("RETRY_INITIAL_DELAY", "0.05"))
    retry_max_delay: float = float(os.getenv("RETRY_MAX_DELAY", "1"))


settings = Settings()
