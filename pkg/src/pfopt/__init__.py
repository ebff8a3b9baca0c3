"""Stochastic global optimization as particle filtering.

Fits 4-variable exponential-family densities by Monte Carlo moment matching,
driving a population of stochastic Levenberg-Marquardt iterates with
importance weights and resampling.
"""

from .exp_family import MCConfig, MomentEstimates, estimate_expectations, eval_potentials
from .experiments import ExperimentKind, ExperimentSpec, generate_samples
from .harness import CampaignConfig, convergence_iteration, preset, run_campaign
from .lm_solver import LMSettings, lm_step
from .moment_match import TargetMoments, compute_target_moments
from .pf_optimizer import RunConfig, Strategy, run

__version__ = "0.1.0"

__all__ = [
    "CampaignConfig",
    "ExperimentKind",
    "ExperimentSpec",
    "LMSettings",
    "MCConfig",
    "MomentEstimates",
    "RunConfig",
    "Strategy",
    "TargetMoments",
    "compute_target_moments",
    "convergence_iteration",
    "estimate_expectations",
    "eval_potentials",
    "generate_samples",
    "lm_step",
    "preset",
    "run",
    "run_campaign",
]
