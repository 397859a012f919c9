"""Iterative inversion: learning inverse maps by repeated affine regression under
input-distribution shift, and its use for intent-conditioned control of a point mass."""

__version__ = "0.1.0"
