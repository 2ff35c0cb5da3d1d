from services.slice_simulator.app.paths import *  # noqa: F401,F403
