"""Partial travel-time data and reconstruction of 2D Riemannian manifolds."""

__version__ = "0.1.0"
