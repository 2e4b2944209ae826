"""Iterative, compiler-report guided code optimization with a chat model."""

__version__ = "0.1.0"
