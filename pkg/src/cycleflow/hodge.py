"""Discrete Hodge decomposition on the torus.

Splits a p-cochain into exact, coexact and harmonic (componentwise
constant) parts and projects onto the closed subspace, the set where the
total-variation energy vanishes.

The Hodge Laplacian of the periodic grid acts componentwise as the scalar
periodic Laplacian, so the Green operator is diagonal in Fourier space;
that is the default solve.  A conjugate-gradient path (diagonally
preconditioned, kernel-consistent right-hand sides) is kept for
validation and for callers that want an iterative solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cycleflow.errors import SolverFailure
from cycleflow.grid import (DiscreteForm, TorusGrid, build_d, delta, d_form,
                            delta_form, l2_norm)


@dataclass
class HodgeSplit:
    """Orthogonal parts: input = exact + coexact + harmonic."""

    exact: DiscreteForm
    coexact: DiscreteForm
    harmonic: DiscreteForm

    def reconstruct(self) -> DiscreteForm:
        return self.exact + self.coexact + self.harmonic


def laplacian(grid: TorusGrid, p: int) -> sp.csr_matrix:
    """Hodge Laplacian d delta + delta d on p-cochains (symmetric PSD)."""
    n = grid.n
    if not 0 <= p <= n:
        raise ValueError(f"degree {p} out of range for n={n}")
    parts = []
    if p < n:
        parts.append(delta(grid, p + 1) @ build_d(grid, p))
    if p > 0:
        parts.append(build_d(grid, p - 1) @ delta(grid, p))
    total = parts[0]
    for extra in parts[1:]:
        total = total + extra
    return total.tocsr()


def harmonic_projection(omega: DiscreteForm) -> DiscreteForm:
    """Componentwise mean: the constant-coefficient harmonic part.

    Exact on the torus, where the harmonic p-forms are exactly the
    constant-coefficient ones (dimension C(n,p)).
    """
    means = omega.values.mean(axis=0)
    vals = np.tile(means, (omega.grid.num_vertices, 1))
    return DiscreteForm(omega.grid, omega.degree, vals)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _laplace_symbol(grid: TorusGrid) -> np.ndarray:
    """Fourier symbol of the componentwise periodic Laplacian, shape dims."""
    parts = []
    for N, h in zip(grid.dims, grid.spacings):
        m = np.arange(N)
        parts.append((2.0 - 2.0 * np.cos(2.0 * np.pi * m / N)) / (h * h))
    out = np.zeros(grid.dims)
    for axis, part in enumerate(parts):
        shape = [1] * grid.n
        shape[axis] = -1
        out = out + part.reshape(shape)
    return out


def _green_fft(r: DiscreteForm) -> DiscreteForm:
    """Solve laplacian(u) = r componentwise with the zero mode removed."""
    grid = r.grid
    shaped = r.values.reshape(*grid.dims, -1)
    axes = tuple(range(grid.n))
    r_hat = np.fft.fftn(shaped, axes=axes)
    symbol = _laplace_symbol(grid)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u_hat = np.where(symbol > 0, r_hat / symbol, 0.0)
    u = np.fft.ifftn(u_hat, axes=axes).real
    return DiscreteForm(grid, r.degree, u.reshape(grid.num_vertices, -1))


def _cg_solve(A: sp.spmatrix, b: np.ndarray, tol: float, maxiter: int):
    diag = A.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    M = sp.diags(inv)
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
    resid = float(np.linalg.norm(A @ x - b) / (np.linalg.norm(b) + 1e-300))
    if info != 0:
        raise SolverFailure("conjugate gradient did not converge", resid,
                            info if info > 0 else maxiter)
    return x


def hodge_decompose(omega: DiscreteForm, cg_tol: float = 1e-10,
                    method: str = "fft") -> HodgeSplit:
    """Split omega into exact + coexact + harmonic parts.

    method "fft" inverts the Laplacian spectrally (exact up to rounding);
    "cg" solves the two potential equations iteratively and raises
    SolverFailure with the residual on non-convergence.
    """
    if cg_tol <= 0:
        raise ValueError("cg_tol must be positive")
    grid, p = omega.grid, omega.degree
    h = harmonic_projection(omega)
    r = omega - h
    zero = DiscreteForm.zeros(grid, p)
    if method == "fft":
        u = _green_fft(r)
        exact = d_form(delta_form(u)) if p > 0 else zero
        coexact = delta_form(d_form(u)) if p < grid.n else zero
    elif method == "cg":
        maxiter = 10 * grid.num_cells(p)
        if p > 0:
            A = delta(grid, p) @ build_d(grid, p - 1)
            alpha = _cg_solve(A, delta(grid, p) @ r.flat, cg_tol, maxiter)
            exact = d_form(DiscreteForm(grid, p - 1, alpha))
        else:
            exact = zero
        if p < grid.n:
            A = build_d(grid, p) @ delta(grid, p + 1)
            beta = _cg_solve(A, build_d(grid, p) @ r.flat, cg_tol, maxiter)
            coexact = delta_form(DiscreteForm(grid, p + 1, beta))
        else:
            coexact = zero
    else:
        raise ValueError(f"unknown method {method!r}")
    split = HodgeSplit(exact, coexact, h)
    scale = l2_norm(omega) + 1.0
    resid = l2_norm(split.reconstruct() - omega)
    if resid > 1e4 * cg_tol * scale:
        raise SolverFailure("hodge reconstruction residual too large",
                            resid / scale, 0)
    return split


def closed_projection(omega: DiscreteForm, cg_tol: float = 1e-10,
                      method: str = "fft") -> DiscreteForm:
    """Project onto ker d (exact + harmonic): subtract the coexact part.

    This is the set where the total-variation energy vanishes, and the
    oracle that the unconstrained flow limit is checked against.
    """
    if cg_tol <= 0:
        raise ValueError("cg_tol must be positive")
    grid, p = omega.grid, omega.degree
    if p == grid.n:
        return omega.copy()
    if method == "fft":
        h = harmonic_projection(omega)
        coexact = delta_form(d_form(_green_fft(omega - h)))
    elif method == "cg":
        A = build_d(grid, p) @ delta(grid, p + 1)
        maxiter = 10 * grid.num_cells(p)
        beta = _cg_solve(A, build_d(grid, p) @ omega.flat, cg_tol, maxiter)
        coexact = delta_form(DiscreteForm(grid, p + 1, beta))
    else:
        raise ValueError(f"unknown method {method!r}")
    return omega - coexact


def split_residuals(split: HodgeSplit, omega: DiscreteForm) -> dict:
    """Relative reconstruction and pairwise-orthogonality residuals."""
    from cycleflow.grid import l2_inner
    scale = l2_norm(omega) + 1e-300
    parts = {"exact": split.exact, "coexact": split.coexact,
             "harmonic": split.harmonic}
    out = {"reconstruction": l2_norm(split.reconstruct() - omega) / scale}
    names = list(parts)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            denom = max(l2_norm(parts[a]) * l2_norm(parts[b]), 1e-300)
            out[f"orth_{a}_{b}"] = abs(l2_inner(parts[a], parts[b])) / max(denom, scale * scale * 1e-12)
    return out
