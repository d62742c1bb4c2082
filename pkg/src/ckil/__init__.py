"""Conditional kernel imitation learning on classic-control tasks."""

__version__ = "0.1.0"
