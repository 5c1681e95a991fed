"""Kriging and conditional simulation of missing cells under a periodic model."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .circulant import CirculantOperator
from .errors import ConvergenceError, InvalidArgumentError
from .lattice import ObservationMask
from .solver import PcgConfig, PcgReport, build_vecchia_preconditioner, pcg_solve


@dataclass(frozen=True)
class Preconditioner:
    """Preconditioner choice: ``"fft"`` (inverse spectrum) or ``"vecchia"``."""

    method: str = "fft"
    neighbors: int = 30

    def __post_init__(self):
        if self.method not in ("fft", "vecchia", "none"):
            raise InvalidArgumentError(f"unknown preconditioner {self.method!r}")


@dataclass(frozen=True, eq=False)
class ImputationResult:
    field: np.ndarray
    missing_values: np.ndarray
    report: PcgReport


class Imputer:
    """Conditional expectation and simulation under one spectrum and mask.

    Building the imputer floors the spectrum and, for the Vecchia choice,
    factors the preconditioner once so repeated simulations share it.
    """

    def __init__(self, f, mask: ObservationMask, precond: Preconditioner = Preconditioner(), pcg: PcgConfig = PcgConfig()):
        if mask.n < 1:
            raise InvalidArgumentError("no observed cells")
        self.op = CirculantOperator(f, mask)
        self.mask = mask
        self.pcg = pcg
        self.precond = precond
        if precond.method == "vecchia":
            self._apply_m = build_vecchia_preconditioner(self.op.covariance, mask, precond.neighbors)
        elif precond.method == "fft":
            self._apply_m = self.op.inv_multiply_observed
        else:
            self._apply_m = None

    def krige(self, u: np.ndarray, strict: bool = True):
        """Return ``B^T A^{-1} u`` and the solver report."""
        x, report = pcg_solve(self.op.a_multiply, self._apply_m, u, self.pcg)
        if strict and not report.converged:
            raise ConvergenceError(
                f"PCG did not converge in {report.iterations} iterations "
                f"(residual {report.residual:.3g})",
                report,
            )
        return self.op.bt_multiply(x), report

    def _complete(self, data, missing_values):
        return self.mask.scatter(data, missing_values)

    def conditional_expectation(self, data) -> ImputationResult:
        data = np.asarray(data, dtype=float)
        if self.mask.n_missing == 0:
            return ImputationResult(self._complete(data, None), np.zeros(0), PcgReport(0, 0.0, True))
        w, report = self.krige(data)
        return ImputationResult(self._complete(data, w), w, report)

    def conditional_simulation(self, data, rng: np.random.Generator) -> ImputationResult:
        """Conditioning by kriging: ``W* + B^T A^{-1} (U - U*)`` for ``(U*, W*) ~ N(0, R)``."""
        data = np.asarray(data, dtype=float)
        sim = self.op.unconditional_sample(rng)
        if self.mask.n_missing == 0:
            return ImputationResult(self._complete(data, None), np.zeros(0), PcgReport(0, 0.0, True))
        u_star = self.mask.gather(sim)
        w_star = self.mask.gather_missing(sim)
        correction, report = self.krige(data - u_star)
        w = w_star + correction
        return ImputationResult(self._complete(data, w), w, report)


def conditional_expectation(data, mask, f, precond=Preconditioner(), cfg=PcgConfig()) -> ImputationResult:
    return Imputer(f, mask, precond, cfg).conditional_expectation(data)


def conditional_simulation(data, mask, f, precond=Preconditioner(), cfg=PcgConfig(), rng=None) -> ImputationResult:
    rng = rng if rng is not None else np.random.default_rng()
    return Imputer(f, mask, precond, cfg).conditional_simulation(data, rng)


def stream(seed, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; the same key always gives the same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))))


def simulate_many(imputer: Imputer, data, n_sims: int, seed, key=(), threads: int = 1):
    """Run ``n_sims`` conditional simulations, one RNG stream per index.

    Results are returned in index order regardless of ``threads``.
    """
    def one(ell):
        return imputer.conditional_simulation(data, stream(seed, *key, ell))

    if threads > 1 and n_sims > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(n_sims)))
    return [one(ell) for ell in range(n_sims)]


def conditional_sd(data, mask, f, n_sims: int = 30, precond=Preconditioner(), cfg=PcgConfig(), seed=0, threads: int = 1) -> np.ndarray:
    """Monte Carlo conditional SD at each missing cell.

    Root mean squared difference between ``n_sims`` conditional simulations
    and the conditional expectation. Returned as a vector over the missing
    cells in row-major order.
    """
    if n_sims < 2:
        raise InvalidArgumentError("n_sims must be >= 2")
    imputer = Imputer(f, mask, precond, cfg)
    if mask.n_missing == 0:
        return np.zeros(0)
    mean = imputer.conditional_expectation(data).missing_values
    sims = simulate_many(imputer, data, n_sims, seed, threads=threads)
    dev = np.stack([s.missing_values for s in sims]) - mean
    return np.sqrt(np.mean(dev * dev, axis=0))
