"""Energy-aware control for renewable-powered base stations with edge compute."""

__version__ = "0.1.0"
