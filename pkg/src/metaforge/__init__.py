"""Synthetic metaorders from anonymous trade tapes, and their price impact."""

__version__ = "0.1.0"
