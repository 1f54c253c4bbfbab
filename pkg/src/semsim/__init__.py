"""Droop microgrid secondary-control simulator with an attacked cyber layer."""
__version__ = "0.1.0"
