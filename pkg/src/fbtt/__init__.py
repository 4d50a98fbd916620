"""Hybrid electron-fluid / kinetic-ion plasma solver with a tensor-train ion backend."""

from .config import SimConfig, derive_scales, load_config, load_preset
from .errors import ConfigError, CourantError, NumericalError
from .integrator import Simulator, SystemState

__all__ = ["SimConfig", "Simulator", "SystemState", "ConfigError", "CourantError",
           "NumericalError", "derive_scales", "load_config", "load_preset"]
__version__ = "0.1.0"
