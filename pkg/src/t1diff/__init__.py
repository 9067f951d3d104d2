"""Desk-scale diffusion over fields of views."""

__version__ = "0.1.0"
