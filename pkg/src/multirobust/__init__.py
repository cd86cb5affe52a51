"""Robustness against multiple perturbation types: attacks, training and theory checks."""

__version__ = "0.1.0"
