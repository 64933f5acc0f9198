"""Finite-cell homogenization of voxel microstructures."""

__version__ = "0.1.0"
