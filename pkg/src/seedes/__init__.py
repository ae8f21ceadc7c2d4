"""Seeded-noise evolution strategies for layered float32 models."""

__version__ = "0.1.0"
