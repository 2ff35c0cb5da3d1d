from services.slice_simulator.app.csv_io import *  # noqa: F401,F403
