"""User-level membership inference audits for multi-table synthetic data."""

__version__ = "0.1.0"
