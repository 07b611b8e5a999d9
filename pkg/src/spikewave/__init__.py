"""Spiking wavefront planning on grid costmaps, with E-prop delay learning."""
from .errors import InputError, InvariantError, UnreachableError
from .lattice import (CostLayerSet, DelayField, Direction, GridSpec, NormalizationParams,
                      combine_layers, read_costmap, write_costmap)
from .swp import WaveResult, extract_path, flood, plan, propagate

__version__ = "0.1.0"

__all__ = ["InputError", "InvariantError", "UnreachableError", "CostLayerSet", "DelayField",
           "Direction", "GridSpec", "NormalizationParams", "combine_layers", "read_costmap",
           "write_costmap", "WaveResult", "extract_path", "flood", "plan", "propagate"]
