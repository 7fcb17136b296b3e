"""Overlapped batch means variance estimation for finite-state Markov chains.

Exact martingale decomposition of the OBM error, Poisson-equation tools and a
Monte Carlo lab for moment concentration rates.
"""

__version__ = "0.1.0"

from .decomposition import DecompositionLedger, decompose, theorem_terms
from .errors import ObmLabError
from .estimator import ObmEstimate, obm_batch, obm_direct, obm_quadratic
from .lab import ExperimentSpec, MomentReport, fit_rate, run_moment_experiment
from .markov import (
    ChainPath,
    TransitionKernel,
    certify_mixing,
    kernel_library,
    load_kernel,
    sample_path,
    stationary,
)
from .poisson import CenteredFunction, PoissonSolution, solve, solve_poisson
from .weights import BatchGeometry, ObmWeights

__all__ = [
    "BatchGeometry", "CenteredFunction", "ChainPath", "DecompositionLedger", "ExperimentSpec",
    "MomentReport", "ObmEstimate", "ObmLabError", "ObmWeights", "PoissonSolution", "TransitionKernel",
    "certify_mixing", "decompose", "fit_rate", "kernel_library", "load_kernel", "obm_batch", "obm_direct",
    "obm_quadratic", "run_moment_experiment", "sample_path", "solve", "solve_poisson", "stationary",
    "theorem_terms",
]
