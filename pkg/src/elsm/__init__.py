"""Evolving latent space model for dynamic networks."""

__version__ = "0.1.0"
