"""Elasticity estimation from bunching at kinks and notches."""

__version__ = "0.1.0"
