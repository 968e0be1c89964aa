"""Cardiac MR orientation recognition and standardization toolkit."""

from .orient import (ALL_CODES, IndexMap, OrientCode, all_codes, apply_to_grid,
                     apply_to_volume, compose, index_map, invert, update_affine)
from .volume import Volume, iter_slices, read_volume, write_volume

__version__ = "0.1.0"

__all__ = [
    "ALL_CODES", "IndexMap", "OrientCode", "all_codes", "apply_to_grid",
    "apply_to_volume", "compose", "index_map", "invert", "update_affine",
    "Volume", "iter_slices", "read_volume", "write_volume", "__version__",
]
