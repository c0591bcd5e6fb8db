"""Weighted tempered Gibbs samplers for Bayesian variable selection.

Three chains share one posterior-algebra core: wTGS (all P conditionals per
step), Subset wTGS (S conditionals on a random subset) and variable-complexity
wTGS (all P conditionals on a random S/P fraction of steps).  Exact
enumeration and explicit transition kernels check them on small problems.
"""

__version__ = "0.1.0"

from .data import SynthConfig, generate_gaussian, load_csv, write_csv
from .errors import ConfigError, DataError, NumericalError, VcwtgsError
from .estimators import (
    PipEstimate,
    VarianceReport,
    normalize_weights,
    rao_blackwell_pip_subset,
    rao_blackwell_pip_vc,
    running_estimates,
    variance_harness,
)
from .model_core import (
    Dataset,
    Hyperparams,
    ModelState,
    conditional_odds,
    conditional_pip,
    log_marginal_likelihood,
    rebuild_state,
)
from .oracle import (
    ExactPosterior,
    KernelPair,
    build_kernel,
    check_detailed_balance,
    enumerate_posterior,
    variance_bound_eval,
    verify_gap_bound,
)
from .rng import RngStream, UniformStream
from .samplers import SamplerTrace, run_subset_wtgs, run_vc_wtgs, run_wtgs, sample_categorical

__all__ = [
    "__version__",
    "ConfigError",
    "DataError",
    "NumericalError",
    "VcwtgsError",
    "Dataset",
    "Hyperparams",
    "ModelState",
    "rebuild_state",
    "log_marginal_likelihood",
    "conditional_odds",
    "conditional_pip",
    "RngStream",
    "UniformStream",
    "SamplerTrace",
    "run_vc_wtgs",
    "run_wtgs",
    "run_subset_wtgs",
    "sample_categorical",
    "PipEstimate",
    "VarianceReport",
    "normalize_weights",
    "rao_blackwell_pip_vc",
    "rao_blackwell_pip_subset",
    "running_estimates",
    "variance_harness",
    "ExactPosterior",
    "KernelPair",
    "enumerate_posterior",
    "build_kernel",
    "check_detailed_balance",
    "verify_gap_bound",
    "variance_bound_eval",
    "SynthConfig",
    "generate_gaussian",
    "load_csv",
    "write_csv",
]
