"""Gaussian Wasserstein inference: function-space variational inference with a 2-Wasserstein regulariser."""

__version__ = "0.1.0"
