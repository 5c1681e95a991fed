"""Iterative spectrum estimation by periodic imputation.

Each iteration draws ``L`` periodic conditional simulations under the current
spectrum, averages their periodograms, smooths (optionally after whitening by
a fitted AR(1)-type spectrum) and folds the result into the running estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError
from .imputation import Imputer, Preconditioner, simulate_many, stream
from .lattice import ObservationMask
from .solver import PcgConfig
from .spectral import (
    SmoothingKernel,
    _ar1_values,
    _cos_sum,
    build_kernel,
    floor_spectrum,
    periodogram,
    smooth,
    smoothed_sd,
)

log = logging.getLogger(__name__)

THETA_MAX = 0.999


@dataclass(frozen=True)
class EstimatorConfig:
    L: int = 1
    burn_in: int = 30
    epsilon: float = 0.05
    delta: float = 0.05
    tau: float = 1.2
    filter: str = "none"
    precond: Preconditioner = field(default_factory=Preconditioner)
    max_iterations: int = 1000
    pcg: PcgConfig = field(default_factory=PcgConfig)
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise InvalidArgumentError("L must be >= 1")
        if self.burn_in < 0:
            raise InvalidArgumentError("burn_in must be >= 0")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        if not self.delta > 0:
            raise InvalidArgumentError("delta must be positive")
        if not self.tau >= 1:
            raise InvalidArgumentError("tau must be >= 1")
        if self.filter not in ("none", "ar1"):
            raise InvalidArgumentError(f"unknown filter {self.filter!r}")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")

    @classmethod
    def for_simulation_study(cls, **kw):
        """Defaults used for simulation studies (B=100, eps=0.01)."""
        kw.setdefault("burn_in", 100)
        kw.setdefault("epsilon", 0.01)
        return cls(**kw)


@dataclass(eq=False)
class EstimationResult:
    spectrum: np.ndarray
    iterations: int
    trace: np.ndarray
    theta_trace: np.ndarray
    condexp: np.ndarray
    condsim: np.ndarray
    converged: bool
    pcg_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def initial_spectrum(data, mask: ObservationMask) -> np.ndarray:
    """Flat spectrum at the sample variance of the observed values."""
    data = np.asarray(data, dtype=float)
    if mask.n < 1 or data.size < 1:
        raise InvalidArgumentError("no observed cells")
    if data.size < 2:
        raise InvalidArgumentError("need at least two observed cells to estimate a variance")
    var = float(np.var(data, ddof=1))
    if not var > 0:
        raise InvalidArgumentError("observed values have zero variance")
    return np.full(mask.spec.z, var)


def whittle_loglik(theta: float, avg_pgram: np.ndarray, cos_sum: np.ndarray | None = None) -> float:
    """Imputed-data Whittle log likelihood of the AR(1)-type spectrum."""
    if cos_sum is None:
        cos_sum = _cos_sum(avg_pgram.shape)
    f = _ar1_values(theta, cos_sum)
    m = avg_pgram.size
    return float(-0.5 * m * np.log(2 * np.pi) - 0.5 * np.sum(np.log(f) + avg_pgram / f))


def golden_section_max(fn, lo: float, hi: float, tol: float = 1e-6) -> float:
    """Maximize a unimodal function on ``[lo, hi]`` by golden-section search."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    best = 0.5 * (a + b)
    # a maximum on the boundary is returned exactly
    candidates = [(fn(best), best), (fn(lo), lo), (fn(hi), hi)]
    return max(candidates, key=lambda t: t[0])[1]


def fit_ar1(avg_pgram: np.ndarray, tol: float = 1e-6) -> float:
    """Maximize the Whittle likelihood over ``theta`` in ``[0, 0.999]``."""
    cos_sum = _cos_sum(avg_pgram.shape)
    return golden_section_max(lambda t: whittle_loglik(t, avg_pgram, cos_sum), 0.0, THETA_MAX, tol)


def filtered_smooth(avg_pgram: np.ndarray, kernel: SmoothingKernel, filter: str = "ar1"):
    """Smooth after whitening by a fitted AR(1)-type spectrum.

    Returns ``(f_theta * smooth(avg_pgram / f_theta), theta)``. With
    ``filter="none"`` this is ``(smooth(avg_pgram), None)``.
    """
    if filter == "none":
        return smooth(avg_pgram, kernel), None
    theta = fit_ar1(avg_pgram)
    f_theta = _ar1_values(theta, _cos_sum(avg_pgram.shape))
    return f_theta * smooth(avg_pgram / f_theta, kernel), theta


def convergence_stat(f_new, f_old, kernel: SmoothingKernel) -> float:
    """``max |f_new - f_old| / S(f_old)``."""
    s = smoothed_sd(f_old, kernel)
    return float(np.max(np.abs(f_new - f_old) / s))


def _clean(f):
    # FFT convolution leaves roundoff-level negatives
    return np.maximum(f, 0.0)


@dataclass(frozen=True)
class StepDiagnostics:
    avg_pgram: np.ndarray
    smoothed: np.ndarray
    theta: float | None
    pcg_iterations: int


def iteration_step(f_k, data, mask: ObservationMask, kernel: SmoothingKernel, cfg: EstimatorConfig, k: int, imputer: Imputer | None = None):
    """One update ``f_k -> f_{k+1}``; ``k`` counts from 1.

    The RNG stream for simulation ``ell`` at iteration ``k`` is
    ``(cfg.seed, k, ell)``.
    """
    if k < 1:
        raise InvalidArgumentError("iteration index starts at 1")
    imputer = imputer or Imputer(f_k, mask, cfg.precond, cfg.pcg)
    sims = simulate_many(imputer, data, cfg.L, cfg.seed, key=(k,), threads=cfg.threads)
    avg = np.mean([periodogram(s.field) for s in sims], axis=0)
    new, theta = filtered_smooth(avg, kernel, cfg.filter)
    new = _clean(new)
    if k <= cfg.burn_in:
        f_next = new
    else:
        r = k - cfg.burn_in
        f_next = (r / (r + 1)) * f_k + (1.0 / (r + 1)) * new
    diag = StepDiagnostics(avg, new, theta, sum(s.report.iterations for s in sims))
    return f_next, diag


def run_estimation(data, mask: ObservationMask, cfg: EstimatorConfig, kernel: SmoothingKernel | None = None, f_init=None) -> EstimationResult:
    """Iterate until the convergence statistic drops below ``epsilon`` after burn-in.

    ``data`` holds the observed values in row-major order of the observed
    cells.
    """
    data = np.asarray(data, dtype=float)
    if mask.n < 1:
        raise InvalidArgumentError("no observed cells")
    if data.shape != (mask.n,):
        raise InvalidArgumentError(f"expected {mask.n} observed values, got shape {data.shape}")
    spec = mask.spec
    kernel = kernel or build_kernel(cfg.delta, spec)
    f = floor_spectrum(initial_spectrum(data, mask) if f_init is None else np.asarray(f_init, float))
    trace, thetas, pcg_its = [], [], []
    converged = False
    k = 0
    for k in range(1, cfg.max_iterations + 1):
        f_next, diag = iteration_step(f, data, mask, kernel, cfg, k)
        stat = convergence_stat(f_next, f, kernel)
        trace.append(stat)
        thetas.append(np.nan if diag.theta is None else diag.theta)
        pcg_its.append(diag.pcg_iterations)
        f = floor_spectrum(f_next)
        log.debug("iteration %d stat %.4g theta %s", k, stat, diag.theta)
        if k > cfg.burn_in and stat < cfg.epsilon:
            converged = True
            break
    if not converged:
        log.warning("no convergence after %d iterations", cfg.max_iterations)
    imputer = Imputer(f, mask, cfg.precond, cfg.pcg)
    condexp = imputer.conditional_expectation(data).field
    condsim = imputer.conditional_simulation(data, stream(cfg.seed, 0, 0)).field
    return EstimationResult(
        spectrum=f,
        iterations=k,
        trace=np.asarray(trace),
        theta_trace=np.asarray(thetas),
        condexp=condexp,
        condsim=condsim,
        converged=converged,
        pcg_iterations=np.asarray(pcg_its, dtype=int),
    )


def select_bandwidth_cv(data, mask: ObservationMask, cfg: EstimatorConfig, candidate_deltas, holdout_frac: float = 0.3, rng=None, estimate=None):
    """Pick the bandwidth minimizing squared prediction error on held-out cells.

    Non-convergent runs score ``inf``. Returns ``(best_delta, scores)``.
    ``estimate`` defaults to :func:`run_estimation` and exists for testing.
    """
    candidate_deltas = list(candidate_deltas)
    if len(candidate_deltas) < 2:
        raise InvalidArgumentError("need at least two candidate bandwidths")
    if not 0 < holdout_frac < 1:
        raise InvalidArgumentError("holdout_frac must be in (0, 1)")
    data = np.asarray(data, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    estimate = estimate or run_estimation
    n_hold = int(round(holdout_frac * mask.n))
    if n_hold < 1 or n_hold >= mask.n:
        raise InvalidArgumentError("holdout leaves no training or no test cells")
    hold = np.sort(rng.choice(mask.n, size=n_hold, replace=False))
    keep = np.ones(mask.n, dtype=bool)
    keep[hold] = False
    reduced = mask.observed.copy().reshape(-1)
    reduced[mask.obs_idx[hold]] = False
    train_mask = ObservationMask(reduced.reshape(mask.spec.z), mask.spec)
    held_flat = mask.obs_idx[hold]
    scores = []
    for delta in candidate_deltas:
        try:
            res = estimate(data[keep], train_mask, replace(cfg, delta=delta))
        except ConvergenceError:
            scores.append(np.inf)
            continue
        if not res.converged:
            scores.append(np.inf)
            continue
        pred = res.condexp.reshape(-1)[held_flat]
        scores.append(float(np.sum((pred - data[hold]) ** 2)))
    scores = np.asarray(scores)
    if not np.any(np.isfinite(scores)):
        raise ConvergenceError("no candidate bandwidth converged")
    return candidate_deltas[int(np.argmin(scores))], scores
