"""Inline crypto engine simulator for weight streaming on unified-memory SoCs."""

__version__ = "0.1.0"
