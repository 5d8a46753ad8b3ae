"""Data-based distributionally robust stochastic optimal power flow toolkit."""

__version__ = "0.1.0"
