"""Spectral density estimation for gridded random fields with missing values.

Missing cells are imputed onto an expanded lattice under a covariance that is
periodic on that lattice; the spectrum is re-estimated from the completed
fields until it settles.
"""

from .errors import (
    ConvergenceError,
    DenseCapExceededError,
    EmbeddingFailureError,
    InvalidArgumentError,
    NotPositiveDefiniteError,
    NumericalBreakdownError,
    PerispecError,
)
from .lattice import LatticeSpec, ObservationMask, build_embedding, embed_mask, fourier_frequencies
from .spectral import (
    MaternParams,
    SmoothingKernel,
    ar1_spectrum,
    build_kernel,
    matern_cov,
    periodic_cov_from_spectrum,
    periodogram,
    smooth,
    smoothed_sd,
    spectrum_from_cov,
    wrapped_true_spectrum,
)
from .circulant import CirculantOperator
from .solver import PcgConfig, PcgReport, apply_vecchia, build_vecchia_preconditioner, pcg_solve
from .imputation import (
    Imputer,
    ImputationResult,
    Preconditioner,
    conditional_expectation,
    conditional_sd,
    conditional_simulation,
)
from .estimator import EstimationResult, EstimatorConfig, run_estimation, select_bandwidth_cv

__version__ = "0.1.0"
