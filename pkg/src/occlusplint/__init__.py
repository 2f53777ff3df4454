"""Therapeutic-transform estimation, positioning-splint design and accuracy analysis."""

__version__ = "0.1.0"
