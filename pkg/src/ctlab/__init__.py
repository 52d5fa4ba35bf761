"""Desk-scale numerical checks of Combes-Thomas and operator-kernel estimates
for lattice magnetic Schrödinger operators."""

__version__ = "0.1.0"
