import os
import sys

import pytest

# Ensure tests can import `app` when running from different cwd
THIS_DIR = os.path.dirname(__file__)
PROJECT_ROOT = os.path.abspath(os.path.join(THIS_DIR, '..'))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)


@pytest.fixture
def make_config():
    """Factory for small scenarios; extra keyword tables (admm=..., attacks=...) pass through."""
    from app.scenario import scenario_from_dict

    def _make(
        num_slices=2,
        num_nodes=2,
        kinds=("compute",),
        capacity=100,
        sla=100,
        horizon=10,
        **tables,
    ):
        def table(v):
            return {"values": v} if isinstance(v, list) and v and isinstance(v[0], list) else {"default": v}

        doc = {
            "topology": {
                "num_slices": num_slices,
                "num_nodes": num_nodes,
                "horizon": horizon,
                "resource_kinds": list(kinds),
            },
            "capacity": table(capacity),
            "sla": table(sla),
        }
        doc.update(tables)
        return scenario_from_dict(doc)

    return _make
