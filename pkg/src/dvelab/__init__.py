"""Desk-scale multi-scene RL laboratory with a mixture-based dynamic critic."""

__version__ = "0.1.0"
