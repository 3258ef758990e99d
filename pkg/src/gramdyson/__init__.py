"""Deterministic spectral density of Gram matrices with a variance profile."""

__version__ = "0.1.0"
