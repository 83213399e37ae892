"""Generalised Wald estimation of causal effect rates between point processes."""

__version__ = "0.1.0"
