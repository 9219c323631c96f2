"""Simulation and verification toolkit for critical 1-D long-range percolation networks."""

__version__ = "0.1.0"
