"""Simulation and verification of robot dispersion on oriented grids."""
from .grid import GridSpec
from .sim_engine import CrashEvent, Report, SimConfig, config_from_dict, run

__all__ = ["CrashEvent", "GridSpec", "Report", "SimConfig", "config_from_dict", "run"]
__version__ = "0.1.0"
