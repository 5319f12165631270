"""Tunnelling splitting for two disc wells in a strong uniform magnetic field."""

__version__ = "0.1.0"
