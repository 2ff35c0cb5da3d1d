from services.slice_simulator.app.scenario import *  # noqa: F401,F403
