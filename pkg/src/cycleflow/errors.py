"""Shared exception types."""

from __future__ import annotations


class SolverFailure(RuntimeError):
    """An iterative solver stopped without meeting its tolerance.

    Carries the last residual (duality gap or fixed-point residual) and the
    iteration count so callers can report machine-readable diagnostics.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = float(residual)
        self.iterations = int(iterations)
