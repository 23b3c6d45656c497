"""Desk-scale pipeline: synthetic thermal videos to nursing-workload scores."""

__version__ = "0.1.0"
