from __future__ import annotations

import contextvars
import json
import logging
import time
from typing import Any

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

# Prometheus custom registry and metrics
registry = CollectorRegistry()

slots_total = Counter(
    "sliceguard_slots_total",
    "Simulated slots",
    ["algorithm"],
    registry=registry,
)
admm_iterations = Histogram(
    "sliceguard_admm_iterations",
    "ADMM iterations per solve",
    registry=registry,
    buckets=(1, 5, 10, 25, 50, 100, 250, 500, 1000),
)
admm_max_iter_hits_total = Counter(
    "sliceguard_admm_max_iter_hits_total",
    "ADMM solves stopped by max_iters before reaching tolerance",
    registry=registry,
)
attack_flags_total = Counter(
    "sliceguard_attack_flags_total",
    "Slice-node pairs flagged as under attack",
    ["algorithm"],
    registry=registry,
)
infeasible_deployments_total = Counter(
    "sliceguard_infeasible_deployments_total",
    "Deployed allocations failing validation",
    ["algorithm"],
    registry=registry,
)
sweep_cells_total = Counter(
    "sliceguard_sweep_cells_total", "Completed sweep cells", registry=registry
)


def export_textfile(path: str) -> None:
    """Write the registry in Prometheus text format (node_exporter textfile collector)."""
    write_to_textfile(path, registry)


# Run id context: set per simulation run so interleaved sweep logs stay attributable
run_id: contextvars.ContextVar[str | None] = contextvars.ContextVar("run_id", default=None)


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "time": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
            "run_id": run_id.get(),
        }
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False)


def setup_logging(level: str = "INFO") -> None:
    root = logging.getLogger()
    root.handlers.clear()
    h = logging.StreamHandler()
    h.setFormatter(JsonFormatter())
    root.addHandler(h)
    root.setLevel(level)
