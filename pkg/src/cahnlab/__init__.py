"""Simulation and verification tools for two-species nonlocal Cahn-Hilliard systems on the torus."""

__version__ = "0.1.0"
