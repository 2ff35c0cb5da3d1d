from services.slice_simulator.app.oracle import *  # noqa: F401,F403
