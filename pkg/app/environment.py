from services.slice_simulator.app.environment import *  # noqa: F401,F403
