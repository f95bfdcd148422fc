"""Single-network temporal action detection."""

__version__ = "0.1.0"
