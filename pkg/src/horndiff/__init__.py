"""Simulation and verification toolkit for obliquely reflected driftless
diffusions in horn-shaped domains."""

__version__ = "0.1.0"

from .geometry import (DomainProfile, Point, eval_b, eval_b_derivs, eval_B,
                       B_infinity, beta_exponent, inward_normal,
                       squared_distance, contains, check_assumptions)
from .dynamics import CovarianceSpec, ReflectionSpec, sigma_sqrt, phi
from .integrator import (StepConfig, PathState, PassageTracker, PathResult,
                         make_stream, adaptive_dt, propose_step,
                         resolve_reflection, advance_path, explosion_probe,
                         run_ensemble)
from .diagnostics import (LyapunovConfig, g_eval, grad_g, hessian_g,
                          delta_sigma_g, nu_eval, mu_eval, drift_check,
                          qv_growth)
from .experiments import (ExperimentConfig, EnsembleResult, Estimate,
                          exp_lln, exp_passage, exp_explosion,
                          exp_strip_local_time, exp_exit_bound,
                          exp_ode_heuristic, run_experiment)

__all__ = [
    "DomainProfile", "Point", "eval_b", "eval_b_derivs", "eval_B",
    "B_infinity", "beta_exponent", "inward_normal", "squared_distance",
    "contains", "check_assumptions",
    "CovarianceSpec", "ReflectionSpec", "sigma_sqrt", "phi",
    "StepConfig", "PathState", "PassageTracker", "PathResult", "make_stream",
    "adaptive_dt", "propose_step", "resolve_reflection", "advance_path",
    "explosion_probe", "run_ensemble",
    "LyapunovConfig", "g_eval", "grad_g", "hessian_g", "delta_sigma_g",
    "nu_eval", "mu_eval", "drift_check", "qv_growth",
    "ExperimentConfig", "EnsembleResult", "Estimate", "exp_lln",
    "exp_passage", "exp_explosion", "exp_strip_local_time", "exp_exit_bound",
    "exp_ode_heuristic", "run_experiment",
]
