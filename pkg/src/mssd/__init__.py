"""Seed-driven extraction of locations from rate-limited geo APIs."""

__version__ = "0.1.0"
