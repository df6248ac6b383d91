"""Spectral and Hamiltonian toolkit for nonlinear Klein-Gordon on the sphere."""
__version__ = "0.1.0"
