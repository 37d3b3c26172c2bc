"""Proximal total-variation denoising of discrete currents on flat tori.

Deforms an L2 differential form toward the nearest cycle by proximal
total-variation steps, optionally constrained to a calibration cone to
produce calibrated cycles.
"""

from cycleflow.cone import Calibration, ConeSpec, cone_for, make_calibration
from cycleflow.errors import SolverFailure
from cycleflow.exterior import (KVector, comass_norm, euclid_norm, mass_norm,
                                star_alg, wedge)
from cycleflow.flow import (FlowConfig, FlowResult, boundary_mass,
                            prox_flow_constrained, prox_flow_unconstrained)
from cycleflow.grid import (DiscreteForm, TorusGrid, l2_inner, l2_norm,
                            pairing)
from cycleflow.hodge import closed_projection, hodge_decompose
from cycleflow.tvprox import TVConfig, prox_tv, tv_energy, tv_energy_dual

__version__ = "0.1.0"

__all__ = [
    "Calibration",
    "ConeSpec",
    "DiscreteForm",
    "FlowConfig",
    "FlowResult",
    "KVector",
    "SolverFailure",
    "TVConfig",
    "TorusGrid",
    "boundary_mass",
    "closed_projection",
    "comass_norm",
    "cone_for",
    "euclid_norm",
    "hodge_decompose",
    "l2_inner",
    "l2_norm",
    "make_calibration",
    "mass_norm",
    "pairing",
    "prox_flow_constrained",
    "prox_flow_unconstrained",
    "prox_tv",
    "star_alg",
    "tv_energy",
    "tv_energy_dual",
    "wedge",
    "__version__",
]
