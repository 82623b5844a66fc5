"""Hypothesis-based 3D multi-object tracking on synthetic LiDAR scenes."""

__version__ = "0.1.0"
