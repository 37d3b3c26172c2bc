"""Calibrations and the pointwise convex cones they induce.

A constant-coefficient calibration phi (comass at most one, automatically
closed) induces at every point the cone of (n-k)-vectors w satisfying
phi ^ w = |w|_mass vol.  Supported cone kinds with exact projections:

  nonneg-function   k = n, the cone of nonnegative scalars
  decomposable-ray  phi a basis k-form, the single ray through its dual
  kahler-T4         phi = e12 + e34 on R^4, positive (1,1)-vectors,
                    isomorphic to the PSD cone of 2x2 Hermitian matrices

Other calibrations fall back to polyhedral-sampled: an inner approximation
by finitely many extreme rays, projected by nonnegative least squares, so
the reported residual is an upper bound on the true distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

from cycleflow.exterior import (KVector, comass_bracket, euclid_norm,
                                mass_norm, star_alg, _frame_ascent,
                                _frame_simple)
from cycleflow.grid import DiscreteForm, TorusGrid, pairing

COMASS_SLACK = 1e-9


@dataclass(frozen=True)
class Calibration:
    """A constant-coefficient closed k-form with comass at most one."""

    name: str
    n: int
    k: int
    coeffs: KVector

    def __post_init__(self):
        if self.coeffs.n != self.n or self.coeffs.k != self.k:
            raise ValueError("calibration coefficients disagree with (n, k)")
        br = comass_bracket(self.coeffs)
        upper = br.value if br.exact else br.upper
        if upper > 1.0 + COMASS_SLACK:
            raise ValueError(
                f"comass of {self.name!r} exceeds one: {upper:.12g}")

    @property
    def form_degree(self) -> int:
        """Degree of the forms the cone constrains: n - k."""
        return self.n - self.k


def make_calibration(preset: str, n: int | None = None) -> Calibration:
    """Presets: "volume" (needs n), "axis:i,j,..." (1-based, needs n),
    "kahler4"."""
    if preset == "volume":
        if n is None:
            raise ValueError("volume preset needs the ambient dimension")
        return Calibration("volume", n, n, KVector.basis(n, tuple(range(n))))
    if preset.startswith("axis"):
        if n is None:
            raise ValueError("axis preset needs the ambient dimension")
        spec = preset.split(":", 1)
        if len(spec) != 2 or not spec[1]:
            raise ValueError("axis preset syntax: axis:1,2")
        axes = tuple(sorted(int(tok) - 1 for tok in spec[1].split(",")))
        if len(set(axes)) != len(axes) or axes[0] < 0 or axes[-1] >= n:
            raise ValueError(f"bad axis list in {preset!r} for n={n}")
        return Calibration(preset, n, len(axes), KVector.basis(n, axes))
    if preset == "kahler4":
        kv = KVector.basis(4, (0, 1)) + KVector.basis(4, (2, 3))
        return Calibration("kahler4", 4, 2, kv)
    raise ValueError(f"unknown calibration preset {preset!r}")


# ---------------------------------------------------------------------------
# cone specifications
# ---------------------------------------------------------------------------

KINDS = ("nonneg-function", "decomposable-ray", "kahler-T4", "polyhedral-sampled")


@dataclass(frozen=True)
class ConeSpec:
    """A calibration with the machinery for projecting onto its cone."""

    calibration: Calibration
    kind: str
    rays: np.ndarray | None = None  # (count, dim) unit extreme rays

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.kind == "polyhedral-sampled":
            if self.rays is None or self.rays.ndim != 2:
                raise ValueError("polyhedral-sampled needs a ray matrix")
            defect = ray_defects(self.calibration, self.rays).max()
            if defect > 1e-9:
                raise ValueError(f"sampled ray defect {defect:.3e} exceeds 1e-9")

    @property
    def degree(self) -> int:
        return self.calibration.form_degree

    @property
    def dim(self) -> int:
        from math import comb
        return comb(self.calibration.n, self.degree)


def _pairing_vector(calibration: Calibration) -> np.ndarray:
    """Vector s with phi ^ w = <s, w> vol for (n-k)-vectors w."""
    return star_alg(calibration.coeffs).coeffs


def ray_defects(calibration: Calibration, rays: np.ndarray) -> np.ndarray:
    """|phi-pairing - mass| per ray; zero on cone members."""
    s = _pairing_vector(calibration)
    out = np.empty(len(rays))
    for i, r in enumerate(rays):
        kv = KVector(calibration.n, calibration.form_degree, r)
        out[i] = abs(float(s @ r) - mass_norm(kv))
    return out


def sample_extreme_rays(calibration: Calibration, count: int = 2000,
                        seed: int = 0) -> np.ndarray:
    """Unit decomposables achieving phi ^ w = |w| vol (extreme rays)."""
    rng = np.random.default_rng(seed)
    n, q = calibration.n, calibration.form_degree
    if calibration.name == "kahler4":
        z = rng.standard_normal((count, 2)) + 1j * rng.standard_normal((count, 2))
        z /= np.linalg.norm(z, axis=1)[:, None]
        H = z[:, :, None] * z[:, None, :].conj()
        return _herm_to_coeffs(H[:, 0, 0].real, H[:, 1, 1].real,
                               H[:, 0, 1].real, H[:, 0, 1].imag)
    s = KVector(n, q, _pairing_vector(calibration))
    rays = []
    attempts = 0
    while len(rays) < count and attempts < 20 * count:
        attempts += 1
        val, frame = _frame_ascent(s, restarts=1,
                                   seed=int(rng.integers(2 ** 31)))
        if val < 1.0 - 1e-9:
            continue
        rays.append(_frame_simple(frame).coeffs)
    if len(rays) < count:
        raise ValueError(
            f"could not sample {count} extreme rays for {calibration.name!r}")
    return np.array(rays)


def cone_for(calibration: Calibration, kind: str | None = None,
             num_rays: int = 2000, seed: int = 0) -> ConeSpec:
    """Pick the exact cone kind for a calibration, or fall back to rays."""
    if kind is None:
        if calibration.k == calibration.n:
            kind = "nonneg-function"
        elif np.count_nonzero(calibration.coeffs.coeffs) == 1:
            kind = "decomposable-ray"
        elif calibration.name == "kahler4":
            kind = "kahler-T4"
        else:
            kind = "polyhedral-sampled"
    rays = None
    if kind == "polyhedral-sampled":
        rays = sample_extreme_rays(calibration, num_rays, seed)
    return ConeSpec(calibration, kind, rays)


# ---------------------------------------------------------------------------
# the Kahler cone on T^4: positive (1,1)-vectors as PSD Hermitian 2x2
# ---------------------------------------------------------------------------
# 2-vector coefficients are ordered E01, E02, E03, E12, E13, E23.  The
# J-invariant (1,1) subspace is spanned by E01, E23, E02+E13, E03-E12 and
# w <-> H = [[a, c], [conj(c), b]] with a = w01, b = w23,
# Re c = (w03 - w12)/2, Im c = (w02 + w13)/2 is a Frobenius isometry.

def _coeffs_to_herm(V: np.ndarray):
    a = V[:, 0]
    b = V[:, 5]
    re = 0.5 * (V[:, 2] - V[:, 3])
    im = 0.5 * (V[:, 1] + V[:, 4])
    anti_p = 0.5 * (V[:, 2] + V[:, 3])
    anti_q = 0.5 * (V[:, 1] - V[:, 4])
    return a, b, re, im, anti_p, anti_q


def _herm_to_coeffs(a, b, re, im) -> np.ndarray:
    out = np.zeros((len(a), 6))
    out[:, 0] = a
    out[:, 5] = b
    out[:, 2] = re
    out[:, 3] = -re
    out[:, 1] = im
    out[:, 4] = im
    return out


def _psd_clip(a, b, re, im):
    """Frobenius projection of [[a, c], [conj c, b]] onto the PSD cone."""
    mean = 0.5 * (a + b)
    half_diff = 0.5 * (a - b)
    c2 = re * re + im * im
    rad = np.sqrt(half_diff * half_diff + c2)
    lam_hi = mean + rad
    lam_lo = mean - rad
    a_out = np.where(lam_lo >= 0, a, 0.0)
    b_out = np.where(lam_lo >= 0, b, 0.0)
    re_out = np.where(lam_lo >= 0, re, 0.0)
    im_out = np.where(lam_lo >= 0, im, 0.0)
    fix = (lam_lo < 0) & (lam_hi > 0)
    if np.any(fix):
        # rank-one part lam_hi * v v^H with v = (c, lam_hi - a); compute the
        # gap lam_hi - a without cancellation on either branch
        lam = lam_hi[fix]
        hd, r2, c2f = half_diff[fix], rad[fix], c2[fix]
        denom = r2 + hd
        gap = np.where(hd >= 0,
                       np.divide(c2f, np.where(denom > 0, denom, 1.0),
                                 where=denom > 0),
                       r2 - hd)
        nv = c2f + gap * gap
        degenerate = nv == 0.0  # diagonal with a = lam_hi: v = e_1
        scale = np.where(degenerate, 0.0, lam / np.where(degenerate, 1.0, nv))
        a_out[fix] = np.where(degenerate, lam, scale * c2f)
        b_out[fix] = np.where(degenerate, 0.0, scale * gap * gap)
        re_out[fix] = scale * re[fix] * gap
        im_out[fix] = scale * im[fix] * gap
    return a_out, b_out, re_out, im_out


# ---------------------------------------------------------------------------
# projections and residuals
# ---------------------------------------------------------------------------

def project_cone_values(spec: ConeSpec, V: np.ndarray) -> np.ndarray:
    """Project rows of V (per-site component vectors) onto the cone."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.shape[1] != spec.dim:
        raise ValueError(f"expected {spec.dim} components, got {V.shape[1]}")
    if spec.kind == "nonneg-function":
        return np.maximum(V, 0.0)
    if spec.kind == "decomposable-ray":
        ray = _pairing_vector(spec.calibration)  # unit: star of a basis form
        t = np.maximum(V @ ray, 0.0)
        return t[:, None] * ray[None, :]
    if spec.kind == "kahler-T4":
        a, b, re, im, _, _ = _coeffs_to_herm(V)
        return _herm_to_coeffs(*_psd_clip(a, b, re, im))
    # polyhedral-sampled: nonnegative least squares over the sampled rays
    R = spec.rays.T  # (dim, count)
    out = np.empty_like(V)
    for i, w in enumerate(V):
        coeffs, _ = scipy.optimize.nnls(R, w)
        out[i] = R @ coeffs
    return out


def project_cone_point(spec: ConeSpec, w: KVector) -> KVector:
    """Nearest point of the cone; exact except for polyhedral-sampled."""
    if w.n != spec.calibration.n or w.k != spec.degree:
        raise ValueError(
            f"expected a degree-{spec.degree} vector in R^{spec.calibration.n}")
    return KVector(w.n, w.k, project_cone_values(spec, w.coeffs[None, :])[0])


def cone_residual_point(spec: ConeSpec, w: KVector) -> float:
    """Euclidean distance to the cone (an upper bound for sampled cones)."""
    return euclid_norm(w - project_cone_point(spec, w))


def project_cone_form(spec: ConeSpec, omega: DiscreteForm) -> DiscreteForm:
    """Sitewise cone projection of a discrete form."""
    if omega.degree != spec.degree:
        raise ValueError(
            f"cone expects degree {spec.degree}, form has {omega.degree}")
    return DiscreteForm(omega.grid, omega.degree,
                        project_cone_values(spec, omega.values))


@dataclass
class ConeResidualReport:
    max_site_distance: float
    mean_site_distance: float
    worst_site: int


def cone_residual_form(spec: ConeSpec, omega: DiscreteForm) -> ConeResidualReport:
    proj = project_cone_form(spec, omega)
    dist = np.linalg.norm(omega.values - proj.values, axis=1)
    worst = int(np.argmax(dist)) if dist.size else 0
    return ConeResidualReport(float(dist.max(initial=0.0)),
                              float(dist.mean() if dist.size else 0.0), worst)


def transversal_pairing(calibration: Calibration, omega: DiscreteForm) -> float:
    """T_omega(phi): the current applied to the calibration form."""
    phi_form = DiscreteForm.constant(omega.grid, calibration.coeffs)
    return pairing(phi_form, omega)


def sample_calibrated(spec: ConeSpec, grid: TorusGrid, seed: int) -> DiscreteForm:
    """Random cone-feasible field, deterministic per seed."""
    rng = np.random.default_rng(seed)
    nv = grid.num_vertices
    if spec.calibration.n != grid.n:
        raise ValueError("cone and grid dimensions disagree")
    if spec.kind == "nonneg-function":
        vals = np.abs(rng.standard_normal((nv, 1)))
    elif spec.kind == "decomposable-ray":
        ray = _pairing_vector(spec.calibration)
        t = np.abs(rng.standard_normal(nv))
        vals = t[:, None] * ray[None, :]
    elif spec.kind == "kahler-T4":
        G = rng.standard_normal((nv, 2, 2)) + 1j * rng.standard_normal((nv, 2, 2))
        H = 0.25 * np.einsum("sij,skj->sik", G, G.conj())
        vals = _herm_to_coeffs(H[:, 0, 0].real, H[:, 1, 1].real,
                               H[:, 0, 1].real, H[:, 0, 1].imag)
    elif spec.kind == "polyhedral-sampled":
        weights = np.abs(rng.standard_normal((nv, len(spec.rays))))
        weights *= (rng.random((nv, len(spec.rays))) < 4.0 / len(spec.rays))
        vals = weights @ spec.rays
    else:  # pragma: no cover
        raise ValueError(spec.kind)
    return DiscreteForm(grid, spec.degree, vals)
