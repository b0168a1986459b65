"""Multi-modal integration of tabular health data with downstream risk models."""

__version__ = "0.1.0"
