"""Numerical checks of Bloch's theorem on persistent currents in lattice fermion systems."""

__version__ = "0.1.0"
