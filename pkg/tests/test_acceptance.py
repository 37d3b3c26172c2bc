"""Acceptance suite: one test per criterion, each printing a pass line with
its runtime and asserting the stated tolerances and budgets."""

import sys
import time
from math import comb
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import cvxpy_prox_objective

from cycleflow.cone import (cone_for, cone_residual_form, make_calibration,
                            sample_calibrated, transversal_pairing)
from cycleflow.exterior import (KVector, comass_norm, euclid_norm, mass_norm,
                                mass_decomposition, _skew_matrix)
from cycleflow.flow import (FlowConfig, prox_flow_constrained,
                            prox_flow_unconstrained, prox_step_constrained)
from cycleflow.grid import (DiscreteForm, TorusGrid, d_form, delta_form,
                            l2_inner, l2_norm)
from cycleflow.hodge import (closed_projection, hodge_decompose, laplacian,
                             split_residuals)
from cycleflow.tvprox import TVConfig, prox_objective, prox_tv_full, tv_energy


class Timer:
    def __init__(self, number, label, budget):
        self.number, self.label, self.budget = number, label, budget

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        status = "PASS" if exc_type is None else "FAIL"
        print(f"{status} criterion {self.number}: {self.label} "
              f"[{elapsed:.1f}s / {self.budget:.0f}s budget]", flush=True)
        if exc_type is None:
            assert elapsed < self.budget, (
                f"criterion {self.number} exceeded its runtime budget: "
                f"{elapsed:.1f}s >= {self.budget}s")


def random_kvector(rng, n, k, scale=1.0):
    return KVector(n, k, scale * rng.standard_normal(comb(n, k)))


def random_form(rng, grid, p, scale=1.0):
    return DiscreteForm(grid, p, scale * rng.standard_normal(
        (grid.num_vertices, grid.components(p))))


def smooth_form(rng, grid, p, modes=3, amplitude=1.0):
    from cycleflow.cli import _random_smooth
    return _random_smooth(grid, p, rng, modes=modes, amplitude=amplitude)


# ---------------------------------------------------------------------------

def test_criterion_01_norm_chain():
    with Timer(1, "norm chain comass <= euclid <= mass", 5.0):
        rng = np.random.default_rng(101)
        for n, k in [(3, 1), (4, 2), (5, 2), (6, 2), (6, 4)]:
            for _ in range(1000):
                v = random_kvector(rng, n, k, scale=rng.uniform(0.1, 10))
                cm, eu, ms = comass_norm(v), euclid_norm(v), mass_norm(v)
                assert cm <= eu + 1e-9
                assert eu <= ms + 1e-9


def test_criterion_02_decomposability_equivalences():
    with Timer(2, "norm equalities on simples, strict gaps at rank 2", 5.0):
        rng = np.random.default_rng(102)
        oracle_degrees = [(4, 1), (4, 2), (4, 3), (5, 2), (5, 3), (5, 4),
                          (6, 2), (6, 4), (6, 5)]
        for i in range(500):
            n, k = oracle_degrees[i % len(oracle_degrees)]
            v = KVector.from_vectors(*rng.standard_normal((k, n)))
            eu = euclid_norm(v)
            assert abs(mass_norm(v) - eu) <= 1e-9 * max(eu, 1e-30)
            assert abs(comass_norm(v) - eu) <= 1e-9 * max(eu, 1e-30)
        for _ in range(500):
            n = int(rng.integers(4, 7))
            lam1 = rng.uniform(0.5, 3.0)
            lam2 = rng.uniform(0.1 * lam1, lam1)
            Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
            v = lam1 * KVector.from_vectors(Q[:, 0], Q[:, 1]) \
                + lam2 * KVector.from_vectors(Q[:, 2], Q[:, 3])
            mass_margin = np.sqrt(lam1**2 + lam2**2 + 2 * lam1 * lam2) \
                - np.sqrt(lam1**2 + lam2**2)
            comass_margin = np.sqrt(lam1**2 + lam2**2) - lam1
            assert mass_margin > 0 and comass_margin > 0
            assert mass_norm(v) - euclid_norm(v) >= mass_margin - 1e-9
            assert euclid_norm(v) - comass_norm(v) >= comass_margin - 1e-9


def test_criterion_03_mass_decomposition():
    with Timer(3, "optimal 2-vector decompositions beat 100 alternatives", 10.0):
        rng = np.random.default_rng(103)
        for _ in range(200):
            n = int(rng.integers(4, 7))
            v = random_kvector(rng, n, 2, scale=rng.uniform(0.2, 5))
            dec = mass_decomposition(v)
            recon = dec.reconstruct(v)
            assert euclid_norm(recon - v) <= 1e-9 * (1 + euclid_norm(v))
            A = _skew_matrix(v)
            for _ in range(100):
                Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
                M = Q.T @ A @ Q
                alternative = float(np.sum(np.abs(np.triu(M, 1))))
                assert dec.total <= alternative + 1e-9


def test_criterion_04_discrete_hodge():
    with Timer(4, "Hodge split on T2/T4 up to 16^4 + harmonic dims", 60.0):
        rng = np.random.default_rng(104)
        cases = [(TorusGrid((64, 64), (1.0, 1.0)), 1, 25),
                 (TorusGrid((16, 16, 16, 16), (1.0,) * 4), 2, 25)]
        for grid, p, count in cases:
            for _ in range(count):
                w = random_form(rng, grid, p)
                split = hodge_decompose(w)
                res = split_residuals(split, w)
                assert res["reconstruction"] <= 1e-7
                assert all(v <= 1e-7 for key, v in res.items()
                           if key.startswith("orth"))
        for dims, p in [((8, 8), 1), ((4, 4, 4, 4), 2)]:
            g = TorusGrid(dims, (1.0,) * len(dims))
            eigs = np.linalg.eigvalsh(laplacian(g, p).toarray())
            near_zero = int(np.sum(eigs < 1e-8 * max(1.0, eigs.max())))
            assert near_zero == comb(g.n, p)


def test_criterion_05_energy_kernel_and_invariance():
    with Timer(5, "E = 0 on closed forms; translation invariance", 20.0):
        rng = np.random.default_rng(105)
        g = TorusGrid((16, 16), (1.0, 1.0))
        for _ in range(100):
            eta = d_form(random_form(rng, g, 0)) + DiscreteForm.constant(
                g, KVector(2, 1, rng.standard_normal(2)))
            assert tv_energy(eta) <= 1e-8
            w = random_form(rng, g, 1)
            assert abs(tv_energy(w + eta) - tv_energy(w)) \
                <= 1e-8 * (1 + tv_energy(w))


def _flow_instances(rng):
    g1 = TorusGrid((256,), (1.0,))
    x = g1.vertex_coords()[:, 0]
    w1 = DiscreteForm(g1, 0, np.sin(2 * np.pi * x) + 0.5 * np.cos(6 * np.pi * x)
                      + 0.4 * rng.standard_normal(256) + 0.8)
    g2 = TorusGrid((64, 64), (1.0, 1.0))
    w2 = DiscreteForm.constant(g2, KVector(2, 1, [1.0, -0.5])) \
        + d_form(smooth_form(rng, g2, 0)) \
        + delta_form(random_form(rng, g2, 2)) * 0.5
    return [(g1, w1), (g2, w2)]


def test_criterion_06_07_unconstrained_flow_and_conservation():
    with Timer(6, "flow limit = closed projection, h-independent "
                  "(+7: conserved pairings)", 120.0):
        rng = np.random.default_rng(106)
        inner_tol = 1e-10
        for grid, w in _flow_instances(rng):
            p = w.degree
            probes = [DiscreteForm.constant(
                grid, KVector(grid.n, p, row))
                for row in np.eye(grid.components(p))]
            while len(probes) < 5:
                probes.append(d_form(smooth_form(rng, grid, p - 1))
                              if p > 0 else probes[0])
            probes = probes[:5]
            cp = closed_projection(w)
            best = l2_norm(w - cp)
            limits = []
            for h in (0.1, 1.0, 10.0):
                cfg = FlowConfig(h=h, tv=TVConfig(inner_tol=inner_tol),
                                 outer_max_iters=2000)
                res = prox_flow_unconstrained(w, cfg, probes=probes)
                assert res.termination == "converged"
                assert l2_norm(res.omega_inf - cp) <= 1e-5 * (1 + l2_norm(w))
                dist = l2_norm(w - res.omega_inf)
                assert abs(dist - best) <= 1e-5 * (1 + l2_norm(w))
                limits.append(res.omega_inf)
                # criterion 7: conservation of every closed-probe pairing
                peak = max(1.0, max(
                    1.0 + abs(e) for e in res.trace.tv_energy))
                max_norm = max(l2_norm(res.omega_inf), l2_norm(w))
                for j, eta in enumerate(probes):
                    series = [row[j] for row in res.trace.conserved_pairings]
                    drift = max(abs(v - series[0]) for v in series)
                    assert drift <= 10 * inner_tol * max(
                        1.0, l2_norm(eta) * max_norm)
            for a in limits:
                for b in limits:
                    assert l2_norm(a - b) <= 1e-5 * (1 + l2_norm(w))
    print("PASS criterion 7: conserved pairings along the unconstrained flow "
          "[within criterion 6]", flush=True)


def test_criterion_08_constrained_flow():
    with Timer(8, "constrained flows: volume mean and kahler cycle", 300.0):
        rng = np.random.default_rng(108)
        # volume cone on T^1: signed start with mean 0.3
        g = TorusGrid((64,), (1.0,))
        sig = 1.3 * np.sin(2 * np.pi * g.vertex_coords()[:, 0]) \
            + 0.3 * rng.standard_normal(64)
        sig += 0.3 - sig.mean()
        w = DiscreteForm(g, 0, sig)
        vspec = cone_for(make_calibration("volume", 1))
        ones = DiscreteForm(g, 0, np.ones(64))
        res = prox_flow_constrained(
            w, vspec, FlowConfig(h=1.0, splitting_tol=1e-11), witnesses=[ones])
        assert res.termination == "converged"
        assert np.max(np.abs(res.omega_inf.values - 0.3)) <= 1e-5

        # kahler cone on an 8^4 grid from a calibrated-random start
        g4 = TorusGrid((8, 8, 8, 8), (1.0,) * 4)
        kah = make_calibration("kahler4")
        spec = cone_for(kah)
        w1 = sample_calibrated(spec, g4, seed=42)
        phi = DiscreteForm.constant(g4, kah.coeffs)
        e12 = DiscreteForm.constant(g4, KVector.basis(4, (0, 1)))
        assert l2_inner(phi, w1) > 0
        cfg = FlowConfig(h=1.0, splitting_tol=1e-9, splitting_max_iters=400000)
        res = prox_flow_constrained(w1, spec, cfg, witnesses=[phi, e12])
        assert res.termination == "converged"
        assert tv_energy(res.omega_inf) <= 1e-6 * (tv_energy(w1) + 1)
        assert cone_residual_form(spec, res.omega_inf).max_site_distance <= 1e-6
        assert l2_norm(res.omega_inf) >= \
            l2_inner(phi, w1) / l2_norm(phi) - 1e-5
        max_norm = max(l2_norm(w1), l2_norm(res.omega_inf))
        for j, wit in enumerate((phi, e12)):
            series = [row[j] for row in res.trace.monotone_pairings]
            slack = 1e-8 * (1 + l2_norm(wit) * max_norm)
            for a, b in zip(series[1:], series[2:]):
                assert b >= a - slack


def test_criterion_09_normalized_variant():
    with Timer(9, "normalized flow keeps T(phi) = 1 and a nonzero limit", 120.0):
        g4 = TorusGrid((8, 8, 8, 8), (1.0,) * 4)
        kah = make_calibration("kahler4")
        spec = cone_for(kah)
        w1 = sample_calibrated(spec, g4, seed=7)
        cfg = FlowConfig(h=1.0, splitting_tol=1e-9, splitting_max_iters=400000,
                         normalize=True)
        res = prox_flow_constrained(w1, spec, cfg)
        assert res.termination == "converged"
        for t in res.trace.t_phi[1:]:
            assert abs(t - 1.0) <= 1e-9
        assert l2_norm(res.omega_inf) > 1e-3
        assert transversal_pairing(kah, res.omega_inf) > 0.5


def test_criterion_10_prox_step_oracle_equivalence():
    with Timer(10, "prox steps match the convex-solver oracle", 120.0):
        rng = np.random.default_rng(110)
        checked = 0
        # unconstrained steps on tiny grids
        unconstrained = [(TorusGrid((8,), (1.0,)), 0)] * 5 \
            + [(TorusGrid((16,), (1.0,)), 0)] * 5 \
            + [(TorusGrid((32,), (1.0,)), 0)] * 4 \
            + [(TorusGrid((4, 4), (1.0, 1.0)), 0)] * 4 \
            + [(TorusGrid((4, 4), (1.0, 2.0)), 1)] * 4 \
            + [(TorusGrid((8, 8), (1.0, 1.0)), 1)] * 4
        for grid, p in unconstrained:
            h = float(rng.choice([0.05, 0.3, 1.0, 5.0]))
            w = random_form(rng, grid, p, scale=rng.uniform(0.5, 3))
            res = prox_tv_full(w, h, TVConfig(inner_tol=1e-10))
            mine = prox_objective(res.omega, w, h)
            oracle, _ = cvxpy_prox_objective(w, h)
            assert abs(mine - oracle) <= 1e-5 * (1 + abs(oracle))
            checked += 1
        # constrained steps
        vol1 = cone_for(make_calibration("volume", 1))
        vol2 = cone_for(make_calibration("volume", 2))
        kah = cone_for(make_calibration("kahler4"))
        constrained = [(TorusGrid((8,), (1.0,)), vol1, None)] * 6 \
            + [(TorusGrid((16,), (1.0,)), vol1, None)] * 6 \
            + [(TorusGrid((4, 4), (1.0, 1.0)), vol2, None)] * 6 \
            + [(TorusGrid((2, 2, 2, 2), (1.0,) * 4), kah, None)] * 3 \
            + [(TorusGrid((2, 2, 2, 2), (1.0,) * 4), kah, "normalize")] * 3
        for grid, spec, mode in constrained:
            h = float(rng.choice([0.3, 1.0]))
            p = spec.degree
            w = random_form(rng, grid, p, scale=rng.uniform(0.5, 2))
            cfg = FlowConfig(h=h, splitting_tol=1e-11,
                             normalize=(mode == "normalize"))
            kind = spec.kind
            row = None
            if mode == "normalize":
                w = sample_calibrated(spec, grid, seed=int(rng.integers(1e6)))
                from cycleflow.cone import _pairing_vector
                row = grid.cell_volume * _pairing_vector(spec.calibration)
            out = prox_step_constrained(w, spec, cfg)
            mine = prox_objective(out, w, h)
            oracle, _ = cvxpy_prox_objective(w, h, cone_kind=kind, norm_row=row)
            assert abs(mine - oracle) <= 1e-5 * (1 + abs(oracle))
            checked += 1
        assert checked >= 50
