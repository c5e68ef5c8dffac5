"""Core-shell enhanced single particle model of a LiFePO4/graphite cell."""
import os

# LSODA is compiled Fortran; unbuffered output lets failed candidates be silenced
# by redirecting the descriptor instead of leaking out at interpreter exit
os.environ.setdefault("GFORTRAN_UNBUFFERED_PRECONNECTED", "y")

from .config import CellParameters, ConfigError, example_parameters, load_config
from .coreshell import Direction, Mode
from .simulator import CurrentProfile, SimulationOptions, SimulationTrace, initial_state, simulate

__version__ = "0.1.0"

__all__ = [
    "CellParameters", "ConfigError", "CurrentProfile", "Direction", "Mode", "SimulationOptions",
    "SimulationTrace", "example_parameters", "initial_state", "load_config", "simulate",
    "__version__",
]
