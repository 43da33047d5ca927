"""Simulation and analysis toolkit for dark-state quantum state transfer over a lossy channel."""

__version__ = "0.1.0"
