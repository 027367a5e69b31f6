"""Numerical suite for mean field games with degenerate Grushin diffusion.

Backward value equation with quadratic Hamiltonian solved through the
Hopf substitution, conservative forward measure transport, a particle
oracle, transport distances, and the sub-Riemannian geometry toolkit the
structural checks are built on.
"""

__version__ = "0.1.0"

from .config import RunConfig, validate
from .coupling import Coupling, eval_F, eval_G, verify_lipschitz, verify_monotone
from .cc_metric import (CCMetricApprox, ball_volume_dimension, cc_distance,
                        holder_seminorm, parabolic_distance)
from .fpe import FpeSolution, FpeStepper, solve_fpe, vanishing_viscosity_study
from .grid import Grid
from .hje import HjeSolution, check_comparison, solve_hje_direct, solve_hje_hopf
from .measures import (GridMeasure, MeasurePath, d1, d1_upper_bound,
                       measure_from_name, second_moment, time_holder_ratio)
from .mfg import MfgProblem, MfgSolution, psi_map, solve_mfg, uniqueness_certificate
from .operators import (fpe_flux_divergence, grad_x, implicit_diffusion_solve,
                        laplace_x)
from .particles import SdeRun, empirical_cost, simulate_sde
from .vector_fields import VectorFieldFamily, h_from_name, hormander_index

__all__ = [
    "RunConfig", "validate",
    "Coupling", "eval_F", "eval_G", "verify_lipschitz", "verify_monotone",
    "CCMetricApprox", "ball_volume_dimension", "cc_distance",
    "holder_seminorm", "parabolic_distance",
    "FpeSolution", "FpeStepper", "solve_fpe", "vanishing_viscosity_study",
    "Grid",
    "HjeSolution", "check_comparison", "solve_hje_direct", "solve_hje_hopf",
    "GridMeasure", "MeasurePath", "d1", "d1_upper_bound", "measure_from_name",
    "second_moment", "time_holder_ratio",
    "MfgProblem", "MfgSolution", "psi_map", "solve_mfg",
    "uniqueness_certificate",
    "fpe_flux_divergence", "grad_x", "implicit_diffusion_solve", "laplace_x",
    "SdeRun", "empirical_cost", "simulate_sde",
    "VectorFieldFamily", "h_from_name", "hormander_index",
]
