"""Robust optimal experiment design with polynomial chaos and Cantelli chance constraints."""
from .dynamics import (DelayedModel, ModelSpec, NoisePolicy, PiecewiseConstantInput, Trajectory,
                       delay_chain, integrate)
from .models import Distribution, UncertaintySet, stat5_model, stat5_theta_nominal
from .oed import (ChanceConstraint, DesignProblem, DesignResult, SolverOptions, criterion_value,
                  propagate_moments, solve, surrogate_margin)
from .pce import fit, make_plan, propagate
from .polynomials import PolyFamily, build_basis, gauss_rule
from .validate import McConfig, compare_designs, run_mc, wls_estimate

__version__ = "0.1.0"

__all__ = [
    "ChanceConstraint", "DelayedModel", "DesignProblem", "DesignResult", "Distribution",
    "McConfig", "ModelSpec", "NoisePolicy", "PiecewiseConstantInput", "PolyFamily",
    "SolverOptions", "Trajectory", "UncertaintySet", "build_basis", "compare_designs",
    "criterion_value", "delay_chain", "fit", "gauss_rule", "integrate", "make_plan",
    "propagate", "propagate_moments", "run_mc", "solve", "stat5_model", "stat5_theta_nominal",
    "surrogate_margin", "wls_estimate",
]
