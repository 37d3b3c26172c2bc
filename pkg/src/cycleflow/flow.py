"""Outer proximal loops: the unconstrained TV flow and the cone-constrained
flow, with the convergence diagnostics the theory predicts.

The unconstrained flow iterates the TV proximal operator; its increments
are coexact by construction, so pairings against closed probe forms are
conserved to rounding and the limit is the projection of the start onto
the closed subspace.  The constrained flow solves each step by a consensus
splitting over three pieces with exact proxes - the TV term through the
sitewise shrinkage dual to its unit-ball formulation, the cone indicator
through its sitewise projection, and (optionally) the normalization
hyperplane T(phi) = 1 - sharing an exact per-Fourier-mode consensus solve;
normalized iterates are rescaled onto the hyperplane after each step,
which is exact because the cone is scale-invariant.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from cycleflow.cone import (ConeSpec, cone_residual_form, project_cone_values,
                            transversal_pairing, _pairing_vector)
from cycleflow.errors import SolverFailure
from cycleflow.grid import DiscreteForm, build_d, l2_inner, l2_norm
from cycleflow.tvprox import (TVConfig, d_symbol, group_shrink, operator_norm,
                              prox_tv_full, tv_energy)

CLOSED_PROBE_TOL = 1e-8


@dataclass
class FlowConfig:
    """Outer-loop and inner-solver parameters shared by both flows."""

    h: float = 1.0
    outer_max_iters: int = 500
    outer_tol: float = 1e-8
    tv: TVConfig = field(default_factory=TVConfig)
    splitting_max_iters: int = 200000
    splitting_tol: float = 1e-8
    normalize: bool = False

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("proximal step h must be positive")
        if self.outer_tol <= 0 or self.splitting_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class FlowTrace:
    """Per-iteration diagnostics; row 0 describes the starting iterate."""

    iters: list = field(default_factory=list)
    tv_energy: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    conserved_pairings: list = field(default_factory=list)   # one list per row
    monotone_pairings: list = field(default_factory=list)
    cone_residual: list = field(default_factory=list)
    t_phi: list = field(default_factory=list)

    def append(self, k, energy, step, conserved, monotone, residual, tphi):
        self.iters.append(int(k))
        self.tv_energy.append(float(energy))
        self.step_norm.append(float(step))
        self.conserved_pairings.append([float(x) for x in conserved])
        self.monotone_pairings.append([float(x) for x in monotone])
        self.cone_residual.append(float(residual))
        self.t_phi.append(float(tphi))

    def to_csv(self) -> str:
        n_eta = len(self.conserved_pairings[0]) if self.conserved_pairings else 0
        n_wit = len(self.monotone_pairings[0]) if self.monotone_pairings else 0
        header = ["iter", "tv_energy", "step_norm"]
        header += [f"pairing_eta_{i}" for i in range(n_eta)]
        header += [f"pairing_witness_{j}" for j in range(n_wit)]
        header += ["cone_residual", "t_phi"]
        out = io.StringIO()
        out.write(",".join(header) + "\n")
        for r in range(len(self.iters)):
            row = [repr(self.iters[r]), repr(self.tv_energy[r]),
                   repr(self.step_norm[r])]
            row += [repr(x) for x in self.conserved_pairings[r]]
            row += [repr(x) for x in self.monotone_pairings[r]]
            row += [repr(self.cone_residual[r]), repr(self.t_phi[r])]
            out.write(",".join(row) + "\n")
        return out.getvalue()


@dataclass
class FlowResult:
    omega_inf: DiscreteForm
    trace: FlowTrace
    termination: str  # converged | max_iters | step_failure


def boundary_mass(omega: DiscreteForm) -> float:
    """Noise measure of the current T_omega: the TV energy of omega.

    Vanishes exactly when the discrete current is a cycle (d omega = 0).
    """
    return tv_energy(omega)


def _require_closed(forms, label):
    for i, eta in enumerate(forms):
        e = tv_energy(eta)
        if e > CLOSED_PROBE_TOL * (1.0 + l2_norm(eta)):
            raise ValueError(f"{label} {i} is not closed: E = {e:.3e}")


# ---------------------------------------------------------------------------
# unconstrained flow
# ---------------------------------------------------------------------------

def prox_flow_unconstrained(omega1: DiscreteForm, cfg: FlowConfig | None = None,
                            probes=()) -> FlowResult:
    """Iterate the TV prox from omega1 until the step norm vanishes.

    probes must be closed forms; their pairings with the iterates are
    recorded and conserved along the flow.
    """
    cfg = cfg or FlowConfig()
    probes = list(probes)
    _require_closed(probes, "probe")
    omega = omega1.copy()
    trace = FlowTrace()

    def record(k, step):
        trace.append(k, tv_energy(omega), step,
                     [l2_inner(eta, omega) for eta in probes], [],
                     float("nan"), float("nan"))

    record(0, 0.0)
    warm = None
    termination = "max_iters"
    for k in range(1, cfg.outer_max_iters + 1):
        try:
            res = prox_tv_full(omega, cfg.h, cfg.tv, warm_state=warm)
        except SolverFailure as err:
            raise SolverFailure(
                f"prox step failed at outer iteration {k}: {err}",
                err.residual, err.iterations) from err
        step = l2_norm(res.omega - omega)
        scale = 1.0 + l2_norm(omega)
        omega = res.omega
        warm = res.state
        record(k, step)
        if step <= cfg.outer_tol * scale:
            termination = "converged"
            break
    return FlowResult(omega, trace, termination)


# ---------------------------------------------------------------------------
# constrained step and flow
# ---------------------------------------------------------------------------

def _normalization_row(spec: ConeSpec, grid) -> np.ndarray:
    """Per-site coefficient vector a with T_omega(phi) = sum_s a . omega_s."""
    return grid.cell_volume * _pairing_vector(spec.calibration)


class _ConstrainedQuadSolver:
    """Exact per-mode inverse of (1/h + rho) I + rho d^T d (+ the rank-one
    normalization row, which only touches the zero mode)."""

    def __init__(self, grid, p: int, h: float, a_site: np.ndarray | None):
        self.grid = grid
        self.axes = tuple(range(grid.n))
        self.cp = grid.components(p)
        D = d_symbol(grid, p)
        self.gram = np.einsum("...ij,...ik->...jk", D.conj(), D)
        self.h = h
        self.a_site = a_site
        self.inv = None

    def factor(self, rho: float):
        M = rho * self.gram + (1.0 / self.h + rho) * np.eye(self.cp)
        if self.a_site is not None:
            zero = (0,) * self.grid.n
            M[zero] = M[zero] + rho * self.grid.num_vertices * np.outer(
                self.a_site, self.a_site)
        self.inv = np.linalg.inv(M)

    def solve(self, b: np.ndarray) -> np.ndarray:
        shaped = b.reshape(*self.grid.dims, self.cp)
        b_hat = np.fft.fftn(shaped, axes=self.axes)
        x_hat = np.einsum("...ij,...j->...i", self.inv, b_hat)
        return np.fft.ifftn(x_hat, axes=self.axes).real.reshape(-1)


def prox_step_constrained(omega_k: DiscreteForm, spec: ConeSpec,
                          cfg: FlowConfig | None = None,
                          warm: tuple | None = None,
                          return_state: bool = False):
    """One constrained proximal step:

        argmin_{omega in cone (and T(phi)=1 when normalizing)}
            E(omega) + |omega - omega_k|^2 / (2h)

    solved by consensus splitting over three pieces with exact proxes:
    sitewise group shrinkage for the TV term, the cone projection, and the
    normalization hyperplane; the quadratic consensus solve is exact in
    Fourier space.
    """
    cfg = cfg or FlowConfig()
    grid, p = omega_k.grid, omega_k.degree
    if p != spec.degree:
        raise ValueError(f"cone expects degree {spec.degree}, form has {p}")
    h = cfg.h
    K = build_d(grid, p)
    L = operator_norm(grid, p)
    ncomp = grid.components(p)
    nv = grid.num_vertices
    x_k = omega_k.flat

    if cfg.normalize:
        a_raw = _normalization_row(spec, grid)          # per site
        a_scale = np.sqrt(nv * float(a_raw @ a_raw))    # norm of the tiled row
        a_site = a_raw / a_scale
        target = 1.0 / a_scale                          # a_site-row . x = target
    else:
        a_site = None
        target = 0.0
    solver = _ConstrainedQuadSolver(grid, p, h, a_site)

    if warm is not None:
        z_tv, u_tv, u_cone, u_aff, rho = warm
        z_tv, u_tv, u_cone = z_tv.copy(), u_tv.copy(), u_cone.copy()
    else:
        rho = 1.0 / (h * max(L, 1e-12))
        z_tv = K @ x_k
        u_tv = np.zeros(K.shape[0])
        u_cone = np.zeros(nv * ncomp)
        u_aff = 0.0
    z_cone = project_cone_values(spec, x_k.reshape(nv, ncomp)).reshape(-1)
    solver.factor(rho)

    def a_dot(xv):
        return float(np.sum(xv.reshape(nv, ncomp) @ a_site))

    res = np.inf
    it = 0
    check_every = 10
    x = x_k.copy()
    for it in range(1, cfg.splitting_max_iters + 1):
        b = x_k / h + rho * (K.T @ (z_tv - u_tv)) + rho * (z_cone - u_cone)
        if cfg.normalize:
            b = b + rho * (target - u_aff) * np.tile(a_site, nv)
        x = solver.solve(b)
        Kx = K @ x
        v_tv = Kx + u_tv
        z_tv_old, z_cone_old = z_tv, z_cone
        z_tv = group_shrink(v_tv.reshape(nv, -1), 1.0 / rho).reshape(-1)
        u_tv = v_tv - z_tv
        v_c = x + u_cone
        z_cone = project_cone_values(spec, v_c.reshape(nv, ncomp)).reshape(-1)
        u_cone = v_c - z_cone
        if cfg.normalize:
            u_aff = u_aff + a_dot(x) - target
        if it % check_every == 0 or it == cfg.splitting_max_iters:
            r_primal = np.linalg.norm(Kx - z_tv) + np.linalg.norm(x - z_cone)
            if cfg.normalize:
                r_primal += abs(a_dot(x) - target)
            r_dual = rho * (np.linalg.norm(K.T @ (z_tv - z_tv_old))
                            + np.linalg.norm(z_cone - z_cone_old))
            res = (r_primal + r_dual) / (1.0 + np.linalg.norm(x))
            if res <= cfg.splitting_tol:
                break
            if r_primal > 10.0 * r_dual:
                rho *= 2.0
                u_tv /= 2.0
                u_cone /= 2.0
                u_aff /= 2.0
                solver.factor(rho)
            elif r_dual > 10.0 * r_primal:
                rho /= 2.0
                u_tv *= 2.0
                u_cone *= 2.0
                u_aff *= 2.0
                solver.factor(rho)
    if res > cfg.splitting_tol:
        raise SolverFailure("constrained prox splitting did not converge",
                            res, it)
    omega_plus = DiscreteForm(
        grid, p, project_cone_values(spec, x.reshape(nv, ncomp)))
    if cfg.normalize:
        t = transversal_pairing(spec.calibration, omega_plus)
        if t <= 0:
            raise SolverFailure("normalization pairing is not positive", t, it)
        omega_plus = omega_plus * (1.0 / t)  # exact on the cone (scale-invariant)
    if return_state:
        return omega_plus, (z_tv, u_tv, u_cone, u_aff, rho), res, it
    return omega_plus


def prox_flow_constrained(omega1: DiscreteForm, spec: ConeSpec,
                          cfg: FlowConfig | None = None,
                          witnesses=()) -> FlowResult:
    """Constrained flow toward a calibrated cycle.

    The first step already minimizes over the cone, so an infeasible
    omega1 is handled by the step itself rather than by a destructive
    pre-projection (which would shift the conserved closed components).
    witnesses must be cone-feasible closed forms; their pairings with the
    iterates are recorded and are non-decreasing from the first step on.
    """
    cfg = cfg or FlowConfig()
    witnesses = list(witnesses)
    _require_closed(witnesses, "witness")
    for i, w in enumerate(witnesses):
        r = cone_residual_form(spec, w).max_site_distance
        if r > 1e-8:
            raise ValueError(f"witness {i} is not cone-feasible: {r:.3e}")
    omega = omega1.copy()
    trace = FlowTrace()

    def record(k, step):
        trace.append(k, tv_energy(omega), step, [],
                     [l2_inner(w, omega) for w in witnesses],
                     cone_residual_form(spec, omega).max_site_distance,
                     transversal_pairing(spec.calibration, omega))

    record(0, 0.0)
    warm = None
    termination = "max_iters"
    for k in range(1, cfg.outer_max_iters + 1):
        try:
            omega_next, warm, _, _ = prox_step_constrained(
                omega, spec, cfg, warm=warm, return_state=True)
        except SolverFailure as err:
            raise SolverFailure(
                f"constrained step failed at outer iteration {k}: {err}",
                err.residual, err.iterations) from err
        step = l2_norm(omega_next - omega)
        scale = 1.0 + l2_norm(omega)
        omega = omega_next
        record(k, step)
        if step <= cfg.outer_tol * scale:
            termination = "converged"
            break
    return FlowResult(omega, trace, termination)
