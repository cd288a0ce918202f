"""Positive multi-bump standing waves of -Δu + a(x)u + b(x)u^q - u^p = 0."""

__version__ = "0.1.0"
