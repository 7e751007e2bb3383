"""Entropy bounds for belief-space planning via observation-space partitioning."""

__version__ = "0.1.0"
