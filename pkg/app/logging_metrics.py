from services.slice_simulator.app.logging_metrics import *  # noqa: F401,F403
