from services.slice_simulator.app.retry import *  # noqa: F401,F403
