"""Robust region-of-attraction certificates for discrete-time systems with ReLU-network models."""

__version__ = "0.1.0"
