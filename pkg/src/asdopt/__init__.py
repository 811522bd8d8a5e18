"""Bayesian optimization of two-stage adaptive seamless trial designs."""

__version__ = "0.1.0"
