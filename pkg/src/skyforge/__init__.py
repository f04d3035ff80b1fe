"""Desk-scale HDR sky modeling, single-image lighting estimation, and latent sky editing."""

__version__ = "0.1.0"
