"""Embedded multi-model NoSQL engine with a deterministic cluster simulator."""

__version__ = "0.1.0"
