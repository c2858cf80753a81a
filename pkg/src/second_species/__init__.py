"""Collision chains of the planar three body problem and the periodic orbits shadowing them."""

__version__ = "0.1.0"
