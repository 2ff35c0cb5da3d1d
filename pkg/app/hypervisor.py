from services.slice_simulator.app.hypervisor import *  # noqa: F401,F403
