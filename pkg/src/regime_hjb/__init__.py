"""Solver and Monte Carlo verifier for a coupled two-regime elliptic HJB system."""

__version__ = "0.1.0"
