"""Fairness-constrained kernel SVMs with critical-feature discovery."""

__version__ = "0.1.0"
