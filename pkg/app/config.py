from services.slice_simulator.app.config import *  # noqa: F401,F403
