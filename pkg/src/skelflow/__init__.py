"""Skeleton-guided two-level spatial attention for 3D-flow action recognition."""

__version__ = "0.1.0"
