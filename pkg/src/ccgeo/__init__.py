"""Numerical toolkit for step-s involutive vector-field families: commutators,
maximal tuples, almost-exponential maps, pullback frames, control balls and
their measures."""

from ._accel import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
