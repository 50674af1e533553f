"""Randomization inference for censored failure times under general interference."""

__version__ = "0.1.0"
