"""Simulation and analysis of two-stage basket trials with information borrowing."""

__version__ = "0.1.0"
