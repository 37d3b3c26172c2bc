import numpy as np
import pytest

from cycleflow import formio
from cycleflow.exterior import KVector, parse_kvector
from cycleflow.grid import (DiscreteForm, TorusGrid, build_d, build_star,
                            d_form, delta, delta_form, l2_inner, l2_norm,
                            pairing, star_form, star_inv_form)
from cycleflow.tvprox import tv_energy


def random_form(rng, grid, p, scale=1.0):
    return DiscreteForm(grid, p, scale * rng.standard_normal(
        (grid.num_vertices, grid.components(p))))


# ---------------------------------------------------------------------------
# grid basics
# ---------------------------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid((1,), (1.0,))
    with pytest.raises(ValueError):
        TorusGrid((4,), (0.0,))
    with pytest.raises(ValueError):
        TorusGrid((4, 4), (1.0,))
    g = TorusGrid((4, 6), (1.0, 3.0))
    assert g.spacings == (0.25, 0.5)
    assert g.num_cells(1) == 24 * 2
    assert g.cell_volume == 0.125


def test_form_validation():
    g = TorusGrid((4,), (1.0,))
    with pytest.raises(ValueError):
        DiscreteForm(g, 0, np.array([1.0, np.inf, 0, 0]))
    with pytest.raises(ValueError):
        DiscreteForm(g, 0, np.zeros(3))
    with pytest.raises(ValueError):
        DiscreteForm(g, 2, np.zeros(4))


# ---------------------------------------------------------------------------
# exterior derivative
# ---------------------------------------------------------------------------

def test_d_constant_is_zero():
    g = TorusGrid((5, 3), (1.0, 2.0))
    f = DiscreteForm.constant(g, KVector(2, 0, [3.7]))
    assert np.all(d_form(f).values == 0.0)


def test_d_coordinate_wrap():
    g = TorusGrid((4,), (1.0,))
    f = DiscreteForm(g, 0, np.array([0.0, 0.25, 0.5, 0.75]))
    out = d_form(f).flat
    assert np.allclose(out, [1.0, 1.0, 1.0, -3.0])


def test_dd_is_exactly_zero():
    rng = np.random.default_rng(0)
    for grid in (TorusGrid((4, 6, 2), (1.0, 2.0, 0.5)),
                 TorusGrid((3, 3, 3, 3), (1.0, 1.0, 2.0, 0.7))):
        for p in range(grid.n - 1):
            # the operator product cancels exactly (identical magnitudes)
            prod = build_d(grid, p + 1) @ build_d(grid, p)
            prod.eliminate_zeros()
            assert prod.nnz == 0
            # sequential application only accumulates rounding
            w = random_form(rng, grid, p)
            scale = np.max(np.abs(w.values)) / min(grid.spacings) ** 2
            assert np.max(np.abs(d_form(d_form(w)).values)) <= 1e-13 * scale


def test_d_degree_errors():
    g = TorusGrid((4, 4), (1.0, 1.0))
    with pytest.raises(ValueError):
        build_d(g, 2)
    with pytest.raises(ValueError):
        build_d(g, -1)


def test_d_no_duplicate_entries():
    g = TorusGrid((4, 3), (1.0, 1.0))
    for p in range(2):
        mat = build_d(g, p).tocoo()
        keys = set(zip(mat.row.tolist(), mat.col.tolist()))
        assert len(keys) == mat.nnz
        assert np.all(np.isfinite(mat.data))


# ---------------------------------------------------------------------------
# star
# ---------------------------------------------------------------------------

def test_star_unit_grid_matches_star_alg():
    g = TorusGrid((2, 2, 2, 2), (2.0, 2.0, 2.0, 2.0))  # h = 1 everywhere
    for p in range(5):
        S = build_star(g, p)
        for axes_idx in range(g.components(p)):
            coeffs = np.zeros(g.components(p))
            coeffs[axes_idx] = 1.0
            kv = KVector(4, p, coeffs)
            form = DiscreteForm.constant(g, kv)
            expect = DiscreteForm.constant(g, __import__(
                "cycleflow.exterior", fromlist=["star_alg"]).star_alg(kv))
            assert np.allclose(star_form(form).values, expect.values)


def test_star_isometry_and_double_star_anisotropic():
    rng = np.random.default_rng(1)
    g = TorusGrid((4, 8), (1.0, 2.0))  # h1 = 1/4, h2 = 1/4... make distinct
    g = TorusGrid((2, 8), (1.0, 2.0))  # h = (1/2, 1/4)
    for p in range(3):
        w = random_form(rng, g, p)
        sw = star_form(w)
        assert abs(l2_norm(sw) - l2_norm(w)) <= 1e-12 * (1 + l2_norm(w))
        ss = star_form(sw)
        sign = (-1) ** (p * (g.n - p))
        assert np.allclose(ss.values, sign * w.values, atol=1e-14)
        assert np.allclose(star_inv_form(sw).values, w.values, atol=1e-14)


# ---------------------------------------------------------------------------
# codifferential
# ---------------------------------------------------------------------------

def test_delta_constant_is_zero():
    g = TorusGrid((4, 4, 4), (1.0, 1.0, 1.0))
    for p in range(1, 4):
        coeffs = np.arange(1.0, 1.0 + g.components(p))
        f = DiscreteForm.constant(g, KVector(3, p, coeffs))
        assert np.max(np.abs(delta_form(f).values)) < 1e-14


def test_delta_adjointness():
    rng = np.random.default_rng(2)
    g = TorusGrid((4, 6, 2), (1.0, 2.0, 0.5))
    for p in range(1, 4):
        for _ in range(34):
            a = random_form(rng, g, p - 1)
            b = random_form(rng, g, p)
            lhs = l2_inner(d_form(a), b)
            rhs = l2_inner(a, delta_form(b))
            assert abs(lhs - rhs) <= 1e-12 * (l2_norm(a) * l2_norm(b) + 1)


def test_delta_hand_computation_t1():
    # (delta u)_w = (u_{w-1} - u_w)/h on 1-forms of T^1
    g = TorusGrid((4,), (1.0,))
    u = DiscreteForm(g, 1, np.array([1.0, -1.0, 0.0, 0.0]))
    out = delta_form(u).flat
    assert np.allclose(out, [-4.0, 8.0, -4.0, 0.0])


def test_delta_degree_errors():
    g = TorusGrid((4,), (1.0,))
    with pytest.raises(ValueError):
        delta(g, 0)


# ---------------------------------------------------------------------------
# inner products and pairing
# ---------------------------------------------------------------------------

def test_l2_examples():
    g = TorusGrid((5,), (1.0,))
    one = DiscreteForm(g, 0, np.ones(5))
    assert abs(l2_norm(one) - 1.0) < 1e-15
    rng = np.random.default_rng(3)
    w = random_form(rng, g, 0)
    c = -2.7
    assert abs(l2_norm(c * w) - abs(c) * l2_norm(w)) < 1e-12


def test_l2_orthogonality_exact_vs_constant():
    rng = np.random.default_rng(4)
    g = TorusGrid((8,), (1.0,))
    alpha = random_form(rng, g, 0)
    h = DiscreteForm.constant(g, KVector(1, 1, [2.0]))
    assert abs(l2_inner(d_form(alpha), h)) < 1e-12


def test_pairing_top_degree_mean():
    rng = np.random.default_rng(5)
    g = TorusGrid((8,), (2.0,))
    rho = DiscreteForm(g, 1, np.ones(8))
    omega = random_form(rng, g, 0)
    expect = omega.values.mean() * g.volume
    assert abs(pairing(rho, omega) - expect) < 1e-12


def test_pairing_self_star_is_norm():
    rng = np.random.default_rng(6)
    g = TorusGrid((4, 6), (1.0, 2.0))
    rho = random_form(rng, g, 1)
    val = pairing(rho, star_form(rho))
    assert val >= 0
    assert abs(val - l2_norm(rho) ** 2) < 1e-12 * (1 + val)


def test_pairing_kahler_example():
    g = TorusGrid((3, 3, 3, 3), (3.0, 3.0, 3.0, 3.0))
    phi = DiscreteForm.constant(g, parse_kvector("e12+e34", 4))
    assert abs(pairing(phi, phi) - 2.0 * g.volume) < 1e-10


def test_pairing_bilinear_and_errors():
    rng = np.random.default_rng(7)
    g = TorusGrid((4, 4), (1.0, 1.0))
    r1, r2 = random_form(rng, g, 1), random_form(rng, g, 1)
    w = random_form(rng, g, 1)
    lhs = pairing(r1 + 2.0 * r2, w)
    assert abs(lhs - pairing(r1, w) - 2.0 * pairing(r2, w)) < 1e-12
    with pytest.raises(ValueError):
        pairing(random_form(rng, g, 0), w)  # degrees not complementary
    g2 = TorusGrid((4, 4), (2.0, 2.0))
    with pytest.raises(ValueError):
        pairing(random_form(rng, g2, 1), w)  # different grids


def test_stokes_compatibility():
    # (d gamma, star^{-1} omega) = (gamma, delta star^{-1} omega) exactly
    rng = np.random.default_rng(8)
    g = TorusGrid((4, 6), (1.0, 2.0))
    gamma = random_form(rng, g, 0)
    omega = random_form(rng, g, 1)
    si = star_inv_form(omega)
    lhs = l2_inner(d_form(gamma), si)
    rhs = l2_inner(gamma, delta_form(si))
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def test_refinement_exact_for_closed_sine():
    # sin(2 pi x1) dx1 is closed discretely: E vanishes and the L2 norm is
    # exact to rounding at every resolution
    for N in (8, 16, 32):
        g = TorusGrid((N, N), (1.0, 1.0))
        x = g.vertex_coords()
        vals = np.zeros((g.num_vertices, 2))
        vals[:, 0] = np.sin(2 * np.pi * x[:, 0])
        w = DiscreteForm(g, 1, vals)
        assert tv_energy(w) < 1e-12
        assert abs(l2_norm(w) - 1.0 / np.sqrt(2)) < 1e-12


def test_refinement_first_order_or_better():
    # sin(2 pi x1) dx2 has d = 2 pi cos(2 pi x1) dx1^dx2: both the TV energy
    # and the L2 norm of d converge at first order or better
    tv_err, l2_err = [], []
    for N in (8, 16, 32, 64):
        g = TorusGrid((N, N), (1.0, 1.0))
        x = g.vertex_coords()
        vals = np.zeros((g.num_vertices, 2))
        vals[:, 1] = np.sin(2 * np.pi * x[:, 0])
        w = DiscreteForm(g, 1, vals)
        tv_err.append(abs(tv_energy(w) - 4.0))
        l2_err.append(abs(l2_norm(d_form(w)) - np.pi * np.sqrt(2)))
    for errs in (tv_err, l2_err):
        for a, b in zip(errs, errs[1:]):
            assert b <= 0.6 * a


# ---------------------------------------------------------------------------
# form files
# ---------------------------------------------------------------------------

def test_form_file_roundtrip_bytes(tmp_path):
    rng = np.random.default_rng(9)
    g = TorusGrid((4, 6), (1.0, 2.5))
    w = random_form(rng, g, 1)
    for encoding in ("json", "base64"):
        path = tmp_path / f"w.{encoding}.form"
        formio.write_form(path, w, encoding=encoding)
        w2 = formio.read_form(path)
        assert w2.grid == w.grid and w2.degree == w.degree
        assert np.array_equal(w2.values, w.values)
        path2 = tmp_path / "again.form"
        formio.write_form(path2, w2, encoding=encoding)
        assert path.read_bytes() == path2.read_bytes()


def test_form_file_auto_encoding():
    g = TorusGrid((4,), (1.0,))
    small = DiscreteForm(g, 0, np.arange(4.0))
    assert formio.form_to_obj(small)["encoding"] == "json"
    g2 = TorusGrid((128,), (1.0,))
    big = DiscreteForm(g2, 0, np.arange(128.0))
    assert formio.form_to_obj(big)["encoding"] == "base64"


def test_form_file_errors(tmp_path):
    path = tmp_path / "bad.form"
    path.write_text('{"version": 99}')
    with pytest.raises(ValueError):
        formio.read_form(path)
    g = TorusGrid((4,), (1.0,))
    with pytest.raises(ValueError):
        formio.form_to_obj(DiscreteForm(g, 0, np.zeros(4)), encoding="hex")
