"""Minimal-MEC virtual PON slice planning for mesh-PON fronthaul."""

__version__ = "0.1.0"
