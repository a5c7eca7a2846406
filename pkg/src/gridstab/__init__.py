"""Stability analysis and closed-loop simulation of droop-controlled inverters on radial feeders."""

__version__ = "0.1.0"
