from __future__ import annotations

import os as _os

# Default directory for CSV outputs (override via env OUTPUT_DIR)
OUTPUT_DIR = _os.getenv("OUTPUT_DIR", "./results")
# Shipped scenario files
SCENARIO_DIR = _os.path.abspath(
    _os.path.join(_os.path.dirname(__file__), "..", "..", "..", "scenarios")
)


def scenario_path(name: str) -> str:
    """Resolve a shipped scenario by bare name, e.g. ``single_node_attack``."""
    if not name.endswith(".toml"):
        name = name + ".toml"
    return _os.path.join(SCENARIO_DIR, name)
