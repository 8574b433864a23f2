"""Simulation and certification of networked DC microgrids under price-based control."""

__version__ = "0.1.0"
