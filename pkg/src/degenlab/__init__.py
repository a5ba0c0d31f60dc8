"""Regularized minimization, regularity diagnostics and inequality checks for
integrals of the form (1/p)(|Du|_gamma - 1)_+^p.

Submodules are imported on demand: ``from degenlab import solver``.
"""

__version__ = "0.1.0"
