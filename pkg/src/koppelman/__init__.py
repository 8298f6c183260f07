"""Weighted Koppelman formulas: symbolic kernels, quadrature and cohomology checks."""

from . import cohomology, expr, forms, kernels, quadrature
from .errors import KoppelmanError

__all__ = ["cohomology", "expr", "forms", "kernels", "quadrature", "KoppelmanError"]
__version__ = "0.1.0"
