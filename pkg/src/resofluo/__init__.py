"""Resonance-fluorescence toolkit for a driven two-level emitter.

Fluorescence maps and PLE spectra from the optical Bloch equations, kinetic
Monte Carlo of quantum-dot charge dynamics, and least-squares fits for PLE,
g2 and linewidth-narrowing data.
"""

__version__ = "0.1.0"


class ResofluoError(Exception):
    """Base class for toolkit errors."""


class InvalidParameterError(ResofluoError, ValueError):
    pass


class GridMismatchError(ResofluoError, ValueError):
    pass


class NoPeakError(ResofluoError, ValueError):
    pass


class NumericalError(ResofluoError, ArithmeticError):
    """Internal numerical failure (e.g. a spectrum that went significantly negative)."""
