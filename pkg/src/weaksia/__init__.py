"""Weak-form shallow ice and Stokes solvers for 2D ice sheet cross sections."""
__version__ = "0.1.0"
