"""Trajectory-conditioned human motion generation as structured pose completion."""

__version__ = "0.1.0"
