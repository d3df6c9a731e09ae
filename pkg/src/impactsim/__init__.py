"""Simulation and QP control of a planar arm executing nominally simultaneous impacts."""

__version__ = "0.1.0"
