"""Command-line surface: generate test currents, run the flows, decompose,
and report norms and energies, with reproducible trace output.

Subcommands: gen, denoise, calibrate, hodge, norms, energy.
Exit codes: 0 success, 1 usage error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from cycleflow import formio
from cycleflow.cone import (Calibration, cone_for, cone_residual_form,
                            make_calibration, sample_calibrated,
                            transversal_pairing, _pairing_vector)
from cycleflow.errors import SolverFailure
from cycleflow.exterior import (KVector, comass_bracket, euclid_norm,
                                mass_bracket, parse_kvector)
from cycleflow.flow import (FlowConfig, prox_flow_constrained,
                            prox_flow_unconstrained)
from cycleflow.grid import (DiscreteForm, TorusGrid, d_form, delta_form,
                            l2_norm)
from cycleflow.hodge import hodge_decompose, split_residuals
from cycleflow.tvprox import TVConfig, tv_energy, tv_energy_dual

PRESETS = ("noisy-closed", "step", "harmonic-plus-coexact", "calibrated-random")


@dataclass
class ExperimentConfig:
    """Round-trippable record of one run; mirrors the CLI flags."""

    grid: str = "64"
    lengths: str = ""
    degree: int = 0
    preset: str = ""
    calibration: str = ""
    h: float = 1.0
    outer_tol: float = 1e-8
    inner_tol: float = 1e-8
    max_iters: int = 500
    normalize: bool = False
    seed: int = 0
    input: str = ""
    out: str = ""
    trace: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls(**json.loads(text))


def _parse_grid(grid: str, lengths: str) -> TorusGrid:
    try:
        dims = tuple(int(tok) for tok in grid.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad grid spec {grid!r}; use forms like 64 or 8x8x8x8")
    if lengths:
        lens = tuple(float(tok) for tok in lengths.split(","))
        if len(lens) == 1:
            lens = lens * len(dims)
    else:
        lens = (1.0,) * len(dims)
    return TorusGrid(dims, lens)


# ---------------------------------------------------------------------------
# preset generators
# ---------------------------------------------------------------------------

def _random_smooth(grid: TorusGrid, degree: int, rng, modes: int = 3,
                   amplitude: float = 1.0) -> DiscreteForm:
    """Band-limited random form: a few low-frequency waves per component."""
    coords = grid.vertex_coords()
    ncomp = grid.components(degree)
    vals = np.zeros((grid.num_vertices, ncomp))
    for c in range(ncomp):
        for _ in range(modes):
            m = rng.integers(-2, 3, size=grid.n)
            if not np.any(m):
                m[rng.integers(grid.n)] = 1
            phase = rng.uniform(0, 2 * np.pi)
            amp = amplitude * rng.standard_normal() / (1.0 + np.sum(np.abs(m)))
            arg = 2 * np.pi * coords @ (m / np.array(grid.lengths)) + phase
            vals[:, c] += amp * np.cos(arg)
    return DiscreteForm(grid, degree, vals)


def generate_preset(preset: str, grid: TorusGrid, degree: int, seed: int,
                    calibration: Calibration | None = None) -> dict:
    """Build a preset input current; returns {"": form, sidecar suffix: form}."""
    rng = np.random.default_rng(seed)
    if preset == "step":
        if degree != 0:
            raise ValueError("the step preset is a 0-form")
        coords = grid.vertex_coords()[:, 0]
        vals = (coords >= grid.lengths[0] / 2).astype(float)
        return {"": DiscreteForm(grid, 0, vals[:, None])}
    if preset in ("noisy-closed", "harmonic-plus-coexact"):
        if degree >= grid.n:
            raise ValueError("preset needs degree < n")
        coeffs = rng.standard_normal(grid.components(degree))
        closed = DiscreteForm.constant(grid, KVector(grid.n, degree, coeffs))
        if preset == "noisy-closed" and degree > 0:
            closed = closed + d_form(_random_smooth(grid, degree - 1, rng))
        beta = _random_smooth(grid, degree + 1, rng)
        noise = delta_form(beta) * 0.5
        return {"": closed + noise, ".closed": closed, ".coexact": noise}
    if preset == "calibrated-random":
        if calibration is None:
            raise ValueError("calibrated-random needs --calibration")
        spec = cone_for(calibration)
        if degree != spec.degree:
            raise ValueError(
                f"calibrated-random for {calibration.name!r} is a "
                f"degree-{spec.degree} form")
        return {"": sample_calibrated(spec, grid, seed)}
    raise ValueError(f"unknown preset {preset!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> dict:
    grid = _parse_grid(args.grid, args.lengths)
    calib = make_calibration(args.calibration, grid.n) if args.calibration else None
    forms = generate_preset(args.preset, grid, args.degree, args.seed, calib)
    out = Path(args.out)
    written = []
    for suffix, form in sorted(forms.items()):
        path = out if not suffix else out.with_suffix(suffix + out.suffix)
        formio.write_form(path, form, encoding=args.encoding or None)
        written.append(str(path))
    return {"written": written, "cells": grid.num_cells(args.degree)}


def _constant_probes(grid: TorusGrid, degree: int) -> list:
    ncomp = grid.components(degree)
    out = []
    for c in range(ncomp):
        coeffs = np.zeros(ncomp)
        coeffs[c] = 1.0
        out.append(DiscreteForm.constant(grid, KVector(grid.n, degree, coeffs)))
    return out


def _flow_config(args) -> FlowConfig:
    return FlowConfig(
        h=args.h, outer_max_iters=args.max_iters, outer_tol=args.outer_tol,
        tv=TVConfig(inner_tol=args.inner_tol),
        splitting_tol=args.splitting_tol,
        normalize=getattr(args, "normalize", False))


def cmd_denoise(args) -> dict:
    omega1 = formio.read_form(args.input)
    cfg = _flow_config(args)
    probes = _constant_probes(omega1.grid, omega1.degree)
    result = prox_flow_unconstrained(omega1, cfg, probes=probes)
    formio.write_form(args.out, result.omega_inf)
    if args.trace:
        Path(args.trace).write_text(result.trace.to_csv())
    return {
        "termination": result.termination,
        "iterations": result.trace.iters[-1],
        "tv_energy_initial": result.trace.tv_energy[0],
        "tv_energy_final": result.trace.tv_energy[-1],
        "step_norm_final": result.trace.step_norm[-1],
        "out": str(args.out),
    }


def cmd_calibrate(args) -> dict:
    omega1 = formio.read_form(args.input)
    calib = make_calibration(args.calibration, omega1.grid.n)
    spec = cone_for(calib)
    cfg = _flow_config(args)
    witnesses = [DiscreteForm.constant(
        omega1.grid, KVector(omega1.grid.n, spec.degree,
                             _pairing_vector(calib)))]
    for path in args.witness or []:
        witnesses.append(formio.read_form(path))
    result = prox_flow_constrained(omega1, spec, cfg, witnesses=witnesses)
    formio.write_form(args.out, result.omega_inf)
    if args.trace:
        Path(args.trace).write_text(result.trace.to_csv())
    report = cone_residual_form(spec, result.omega_inf)
    return {
        "termination": result.termination,
        "iterations": result.trace.iters[-1],
        "tv_energy_final": result.trace.tv_energy[-1],
        "cone_residual": report.max_site_distance,
        "t_phi": transversal_pairing(calib, result.omega_inf),
        "norm": l2_norm(result.omega_inf),
        "out": str(args.out),
    }


def cmd_hodge(args) -> dict:
    omega = formio.read_form(args.input)
    split = hodge_decompose(omega, cg_tol=args.cg_tol, method=args.method)
    prefix = Path(args.out_prefix)
    paths = {}
    for name, form in (("exact", split.exact), ("coexact", split.coexact),
                       ("harmonic", split.harmonic)):
        path = prefix.parent / f"{prefix.name}.{name}.form"
        formio.write_form(path, form)
        paths[name] = str(path)
    residuals = split_residuals(split, omega)
    report_path = prefix.parent / f"{prefix.name}.residuals.json"
    report_path.write_text(json.dumps(residuals, sort_keys=True, indent=2) + "\n")
    paths["residuals"] = str(report_path)
    return {"paths": paths, "residuals": residuals}


def cmd_norms(args) -> dict:
    v = parse_kvector(args.expression, args.n)
    if args.k is not None and v.k != args.k:
        raise ValueError(f"expression has degree {v.k}, not {args.k}")
    mass = mass_bracket(v)
    comass = comass_bracket(v)
    return {
        "euclid": euclid_norm(v),
        "mass": {"value": mass.value, "exact": mass.exact,
                 "lower": mass.lower, "upper": mass.upper},
        "comass": {"value": comass.value if comass.exact else comass.lower,
                   "exact": comass.exact,
                   "lower": comass.lower, "upper": comass.upper},
    }


def cmd_energy(args) -> dict:
    omega = formio.read_form(args.input)
    primal = tv_energy(omega)
    dual = tv_energy_dual(omega, restarts=args.restarts, seed=args.seed)
    return {"tv_energy": primal, "tv_energy_dual": dual,
            "gap": primal - dual}


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--json", action="store_true",
                     help="machine-readable output on stdout")
    sub.add_argument("--trace", default="", help="write the iteration trace CSV here")
    sub.add_argument("--config", default="",
                     help="JSON file whose keys mirror the flags")


def _add_flow_flags(sub):
    sub.add_argument("--h", type=float, default=1.0)
    sub.add_argument("--outer-tol", dest="outer_tol", type=float, default=1e-8)
    sub.add_argument("--inner-tol", dest="inner_tol", type=float, default=1e-8)
    sub.add_argument("--splitting-tol", dest="splitting_tol", type=float,
                     default=1e-8)
    sub.add_argument("--max-iters", dest="max_iters", type=int, default=500)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cycleflow",
                     description="TV denoising of discrete currents on flat tori")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate a test current")
    gen.add_argument("--grid", required=True, help="per-axis cells, e.g. 64 or 8x8x8x8")
    gen.add_argument("--lengths", default="", help="per-axis periods, e.g. 1.0 or 1,2")
    gen.add_argument("--degree", type=int, default=0)
    gen.add_argument("--preset", required=True, choices=PRESETS)
    gen.add_argument("--calibration", default="")
    gen.add_argument("--encoding", default="", choices=["", "json", "base64"])
    gen.add_argument("--out", required=True)
    _add_common(gen)
    gen.set_defaults(func=cmd_gen)

    den = subs.add_parser("denoise", help="unconstrained TV flow to the nearest cycle")
    den.add_argument("--input", required=True)
    den.add_argument("--out", required=True)
    _add_flow_flags(den)
    _add_common(den)
    den.set_defaults(func=cmd_denoise)

    cal = subs.add_parser("calibrate", help="cone-constrained flow to a calibrated cycle")
    cal.add_argument("--input", required=True)
    cal.add_argument("--out", required=True)
    cal.add_argument("--calibration", required=True,
                     help="volume | axis:1,2 | kahler4")
    cal.add_argument("--normalize", action="store_true",
                     help="impose T(phi) = 1 along the flow")
    cal.add_argument("--witness", action="append", default=[],
                     help="feasible closed form file (repeatable)")
    _add_flow_flags(cal)
    _add_common(cal)
    cal.set_defaults(func=cmd_calibrate)

    hod = subs.add_parser("hodge", help="exact/coexact/harmonic split")
    hod.add_argument("--input", required=True)
    hod.add_argument("--out-prefix", dest="out_prefix", required=True)
    hod.add_argument("--cg-tol", dest="cg_tol", type=float, default=1e-10)
    hod.add_argument("--method", default="fft", choices=["fft", "cg"])
    _add_common(hod)
    hod.set_defaults(func=cmd_hodge)

    nor = subs.add_parser("norms", help="euclid/mass/comass of a k-vector")
    nor.add_argument("expression", help='e.g. "e12+2e34"')
    nor.add_argument("--n", type=int, required=True)
    nor.add_argument("--k", type=int, default=None)
    _add_common(nor)
    nor.set_defaults(func=cmd_norms)

    ene = subs.add_parser("energy", help="TV energy, dual value and gap")
    ene.add_argument("--input", required=True)
    ene.add_argument("--restarts", type=int, default=4)
    _add_common(ene)
    ene.set_defaults(func=cmd_energy)

    return parser


def _apply_config(args, argv) -> None:
    if not getattr(args, "config", ""):
        return
    data = json.loads(Path(args.config).read_text())
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in data.items():
        if key in explicit or not hasattr(args, key):
            continue
        setattr(args, key, value)


def _print_result(result: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(result, sort_keys=True))
        return
    for key, value in result.items():
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        print(f"{key}: {value}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args, argv)
        result = args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 1
    except SolverFailure as exc:
        payload = {"error": str(exc), "residual": exc.residual,
                   "iterations": exc.iterations}
        print(json.dumps(payload, sort_keys=True) if getattr(args, "json", False)
              else f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, TypeError) as exc:
        if getattr(args, "json", False):
            print(json.dumps({"error": str(exc)}, sort_keys=True),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1
    _print_result(result, getattr(args, "json", False))
    return 0


if __name__ == "__main__":
    sys.exit(main())
