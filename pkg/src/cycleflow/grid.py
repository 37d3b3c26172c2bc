"""Periodic cubical complex on the flat torus T^n.

Cochains with pointwise component values, the exterior derivative with
finite-difference scaling, the (sign) Hodge star, the codifferential, the
L2 inner product and the current pairing T_omega(rho) = integral of
rho ^ omega.

Conventions: a p-cochain stores one value per (base vertex, axis set)
pair, vertex-major with lexicographic axis sets.  Values approximate the
pointwise components of the form at the cell base point, so d carries a
1/h_i scaling per axis and the L2 weight is the uniform cell volume
prod(h_i).  With these choices the star is a pure sign permutation and an
exact isometry, d composed with d vanishes identically, and the
codifferential is the plain transpose of d.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, prod

import numpy as np
import scipy.sparse as sp

from cycleflow.exterior import KVector, multi_indices, _index_of, _star_table


@dataclass(frozen=True)
class TorusGrid:
    """Regular periodic grid on the flat torus with per-axis resolution."""

    dims: tuple
    lengths: tuple

    def __post_init__(self):
        dims = tuple(int(N) for N in self.dims)
        lengths = tuple(float(L) for L in self.lengths)
        if len(dims) != len(lengths):
            raise ValueError("dims and lengths must have equal rank")
        if len(dims) == 0:
            raise ValueError("grid rank must be >= 1")
        if any(N < 2 for N in dims):
            raise ValueError("each axis needs at least 2 cells")
        if any(L <= 0 for L in lengths):
            raise ValueError("periods must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "lengths", lengths)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def spacings(self) -> tuple:
        return tuple(L / N for L, N in zip(self.lengths, self.dims))

    @property
    def num_vertices(self) -> int:
        return prod(self.dims)

    @property
    def cell_volume(self) -> float:
        return prod(self.spacings)

    @property
    def volume(self) -> float:
        return prod(self.lengths)

    def components(self, p: int) -> int:
        return comb(self.n, p)

    def num_cells(self, p: int) -> int:
        return self.num_vertices * self.components(p)

    def vertex_coords(self) -> np.ndarray:
        """(num_vertices, n) base-point coordinates, vertex-major order."""
        axes = [h * np.arange(N) for N, h in zip(self.dims, self.spacings)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


class DiscreteForm:
    """A degree-p cochain: one value per p-cell, shape (vertices, C(n,p))."""

    __slots__ = ("grid", "degree", "values")

    def __init__(self, grid: TorusGrid, degree: int, values):
        if not 0 <= degree <= grid.n:
            raise ValueError(f"degree {degree} out of range for n={grid.n}")
        values = np.asarray(values, dtype=float)
        expected = (grid.num_vertices, grid.components(degree))
        if values.shape == (grid.num_cells(degree),):
            values = values.reshape(expected)
        if values.shape != expected:
            raise ValueError(f"expected values of shape {expected}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("form values must be finite")
        self.grid = grid
        self.degree = degree
        self.values = values

    @classmethod
    def zeros(cls, grid: TorusGrid, degree: int) -> "DiscreteForm":
        return cls(grid, degree,
                   np.zeros((grid.num_vertices, grid.components(degree))))

    @classmethod
    def constant(cls, grid: TorusGrid, kv: KVector) -> "DiscreteForm":
        """Constant-coefficient form with the components of a k-vector."""
        if kv.n != grid.n:
            raise ValueError("k-vector dimension does not match the grid")
        vals = np.tile(kv.coeffs, (grid.num_vertices, 1))
        return cls(grid, kv.k, vals)

    @classmethod
    def from_function(cls, grid: TorusGrid, degree: int, fn) -> "DiscreteForm":
        """Sample fn(coords) -> (num_vertices, components) at base points."""
        vals = np.asarray(fn(grid.vertex_coords()), dtype=float)
        if vals.shape == (grid.num_vertices,) and grid.components(degree) == 1:
            vals = vals[:, None]
        return cls(grid, degree, vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def copy(self) -> "DiscreteForm":
        return DiscreteForm(self.grid, self.degree, self.values.copy())

    def _check_compatible(self, other: "DiscreteForm"):
        if self.grid != other.grid or self.degree != other.degree:
            raise ValueError("forms live on different grids or degrees")

    def __add__(self, other):
        self._check_compatible(other)
        return DiscreteForm(self.grid, self.degree, self.values + other.values)

    def __sub__(self, other):
        self._check_compatible(other)
        return DiscreteForm(self.grid, self.degree, self.values - other.values)

    def __mul__(self, c):
        return DiscreteForm(self.grid, self.degree, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return DiscreteForm(self.grid, self.degree, -self.values)

    def __repr__(self):
        return (f"DiscreteForm(degree={self.degree}, dims={self.grid.dims}, "
                f"|values|={np.linalg.norm(self.values):.4g})")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def build_d(grid: TorusGrid, p: int) -> sp.csr_matrix:
    """Exterior derivative, p-cochains to (p+1)-cochains, 1/h_i scaled."""
    n = grid.n
    if not 0 <= p < n:
        raise ValueError(f"d undefined for degree {p} on T^{n}")
    h = grid.spacings
    nv = grid.num_vertices
    cp, cq = grid.components(p), grid.components(p + 1)
    src_lookup = _index_of(n, p)
    vertex_ids = np.arange(nv).reshape(grid.dims)
    base = vertex_ids.reshape(-1)
    rows, cols, vals = [], [], []
    for jpos, J in enumerate(multi_indices(n, p + 1)):
        row = base * cq + jpos
        for t, a in enumerate(J):
            kpos = src_lookup[tuple(x for x in J if x != a)]
            sign = -1.0 if t % 2 else 1.0
            shifted = np.roll(vertex_ids, -1, axis=a).reshape(-1)
            rows.append(row)
            cols.append(shifted * cp + kpos)
            vals.append(np.full(nv, sign / h[a]))
            rows.append(row)
            cols.append(base * cp + kpos)
            vals.append(np.full(nv, -sign / h[a]))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.num_cells(p + 1), grid.num_cells(p)))
    return mat.tocsr()


@lru_cache(maxsize=None)
def build_star(grid: TorusGrid, p: int) -> sp.csr_matrix:
    """Hodge star, p-cochains to (n-p)-cochains: the signed permutation of
    components matching star_alg, applied at every site.

    On the flat torus with pointwise component values the metric factors
    cancel, so the star is a pure sign and an exact L2 isometry.
    """
    n = grid.n
    if not 0 <= p <= n:
        raise ValueError(f"star undefined for degree {p} on T^{n}")
    io, sg = _star_table(n, p)
    nv = grid.num_vertices
    cp, cq = grid.components(p), grid.components(n - p)
    base = np.arange(nv)
    rows = (base[:, None] * cq + io[None, :]).reshape(-1)
    cols = (base[:, None] * cp + np.arange(cp)[None, :]).reshape(-1)
    vals = np.broadcast_to(sg, (nv, cp)).reshape(-1)
    mat = sp.coo_matrix((vals, (rows, cols)),
                        shape=(grid.num_cells(n - p), grid.num_cells(p)))
    return mat.tocsr()


@lru_cache(maxsize=None)
def delta(grid: TorusGrid, p: int) -> sp.csr_matrix:
    """Codifferential, p-cochains to (p-1)-cochains: the W-adjoint of d.

    The L2 weight is the same uniform cell volume in every degree, so the
    adjoint reduces to the plain transpose of d.
    """
    if not 1 <= p <= grid.n:
        raise ValueError(f"delta undefined for degree {p} on T^{grid.n}")
    return build_d(grid, p - 1).T.tocsr()


def apply_operator(op: sp.spmatrix, form: DiscreteForm, degree: int) -> DiscreteForm:
    """Apply a cell operator to a form, returning a form of the given degree."""
    return DiscreteForm(form.grid, degree,
                        (op @ form.flat).reshape(form.grid.num_vertices, -1))


def d_form(form: DiscreteForm) -> DiscreteForm:
    return apply_operator(build_d(form.grid, form.degree), form, form.degree + 1)


def delta_form(form: DiscreteForm) -> DiscreteForm:
    return apply_operator(delta(form.grid, form.degree), form, form.degree - 1)


def star_form(form: DiscreteForm) -> DiscreteForm:
    return apply_operator(build_star(form.grid, form.degree), form,
                          form.grid.n - form.degree)


def star_inv_form(form: DiscreteForm) -> DiscreteForm:
    """Inverse star: (star_p)^{-1} = (-1)^{p(n-p)} star_{n-p}."""
    n = form.grid.n
    q = form.degree           # = n - p for the target degree p
    p = n - q
    sign = -1.0 if (p * q) % 2 else 1.0
    return sign * star_form(form)


# ---------------------------------------------------------------------------
# inner products and the current pairing
# ---------------------------------------------------------------------------

def l2_inner(a: DiscreteForm, b: DiscreteForm) -> float:
    """W-weighted inner product (uniform weight = cell volume)."""
    a._check_compatible(b)
    return a.grid.cell_volume * float(a.flat @ b.flat)


def l2_norm(a: DiscreteForm) -> float:
    return float(np.sqrt(a.grid.cell_volume) * np.linalg.norm(a.flat))


def pairing(rho: DiscreteForm, omega: DiscreteForm) -> float:
    """The current pairing T_omega(rho): discrete integral of rho ^ omega.

    rho has degree k, omega degree n-k on the same grid; computed as the
    W-inner product of rho with the un-starred omega.
    """
    if rho.grid != omega.grid:
        raise ValueError("pairing requires a common grid")
    if rho.degree + omega.degree != rho.grid.n:
        raise ValueError(
            f"degrees {rho.degree} and {omega.degree} are not complementary "
            f"on T^{rho.grid.n}")
    return l2_inner(rho, star_inv_form(omega))
