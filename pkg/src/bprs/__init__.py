"""Belief-propagation rating prediction for a single active user."""

__version__ = "0.1.0"
