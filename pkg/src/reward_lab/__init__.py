"""Reward-function experiments on a simulated two-link, six-muscle arm."""

__version__ = "0.1.0"
