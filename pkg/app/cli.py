from services.slice_simulator.app.cli import *  # noqa: F401,F403
