"""Simulator for mem-element compute-in-memory accelerators."""
__version__ = "0.1.0"

from . import costmodel, crossbar, devices, meminductor, periphery
from .errors import MemsimError

__all__ = ["costmodel", "crossbar", "devices", "meminductor", "periphery", "MemsimError",
           "__version__"]
