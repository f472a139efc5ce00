"""Multi-view 3D tracking of many similar maneuvering objects.

Two particle-filter trackers are provided: a constant-velocity particle
filter (CVPF) and a current-statistical-model Kalman particle filter
(CSKPF). A synthetic swarm simulator and trajectory-quality metrics make
the two comparable.
"""

from .config import PRESETS, RunConfig, load_config
from .evaluate import EvalConfig, evaluate
from .manager import TrackSet, Trajectory, run
from .sim import SimConfig, simulate

__all__ = ["PRESETS", "RunConfig", "load_config", "EvalConfig", "evaluate", "TrackSet",
           "Trajectory", "run", "SimConfig", "simulate"]
__version__ = "0.1.0"
