"""Model-free LQR synthesis from trajectory data."""

__version__ = "0.1.0"
