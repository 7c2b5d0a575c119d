"""Cycle-accurate simulator of a fault-tolerant 3D mesh NoC router."""

__version__ = "0.1.0"
