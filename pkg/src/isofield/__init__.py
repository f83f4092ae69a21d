"""Accelerated isosurface localization, mesh-free rendering and OHEM sampling for implicit occupancy fields."""

__version__ = "0.1.0"
