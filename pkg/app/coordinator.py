from services.slice_simulator.app.coordinator import *  # noqa: F401,F403
