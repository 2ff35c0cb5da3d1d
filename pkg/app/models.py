from services.slice_simulator.app.models import *  # noqa: F401,F403
