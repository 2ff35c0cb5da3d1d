from services.slice_simulator.app.node_orchestrator import *  # noqa: F401,F403
