"""Task-based local time stepping solver."""

__version__ = "0.3.0"
