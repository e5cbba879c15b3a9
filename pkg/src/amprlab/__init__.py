"""AMP with resampling for the elastic net: solvers, state evolution, and
variance-minimizing hyperparameter search."""

from .ampr import (AmprState, SolverOptions, UnbiasedEstimate, bootstrap_statistics,
                   run_ampr, unbiased_estimate)
from .gamp import (GampState, gamp_unbiased_estimate, run_gamp, run_gamp_batch,
                   solve_elastic_net_reference)
from .scalar_kernels import (DenoiserParams, ResamplingMoments, SmoothedMoments, denoise,
                             denoise_deriv, poisson_moments, smoothed_moments)
from .state_evolution import SeInit, SeOptions, SeState, run_se, se_variance
from .synthetic_data import (BootstrapWeights, ProblemInstance, SignalPrior,
                             sample_bootstrap_weights, sample_instance)

__version__ = "0.1.0"

__all__ = [
    "AmprState", "SolverOptions", "UnbiasedEstimate", "bootstrap_statistics", "run_ampr",
    "unbiased_estimate", "GampState", "gamp_unbiased_estimate", "run_gamp", "run_gamp_batch",
    "solve_elastic_net_reference", "DenoiserParams", "ResamplingMoments", "SmoothedMoments",
    "denoise", "denoise_deriv", "poisson_moments", "smoothed_moments", "SeInit", "SeOptions",
    "SeState", "run_se", "se_variance", "BootstrapWeights", "ProblemInstance", "SignalPrior",
    "sample_bootstrap_weights", "sample_instance",
]
