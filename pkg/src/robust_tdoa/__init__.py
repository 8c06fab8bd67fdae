"""TDOA source localization robust to sensor timing attacks."""

__version__ = "0.1.0"
