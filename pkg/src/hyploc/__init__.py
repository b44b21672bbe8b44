"""LiDAR global pose regression with dual-branch features fused in Euclidean and hyperbolic space."""

__version__ = "0.1.0"
