"""Weakly supervised pain classification from a disentangled multi-view pose latent."""

__version__ = "0.1.0"
