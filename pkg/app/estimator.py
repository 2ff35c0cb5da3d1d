from services.slice_simulator.app.estimator import *  # noqa: F401,F403
