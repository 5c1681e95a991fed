"""Fast products with the periodic covariance matrix and its masked blocks.

With ``(U, W)`` the values at observed and missing cells, the periodic
covariance partitions as ``R = [[A, B], [B^T, C]]``. Products with ``A``,
``B^T`` and the observed block of ``R^{-1}`` are embedded in one full-grid
product by scattering into zeros and gathering the wanted cells, which costs
two real FFTs.
"""

from __future__ import annotations

import numpy as np

from . import _fft
from .errors import InvalidArgumentError
from .lattice import ObservationMask
from .spectral import check_spectrum, floor_spectrum, periodic_cov_from_spectrum


class CirculantOperator:
    """The periodic covariance with eigenvalues ``f`` restricted through a mask.

    The spectrum is floored at ``1e-8`` times its mean on construction, so
    every block is positive definite.
    """

    def __init__(self, f: np.ndarray, mask: ObservationMask, floor: bool = True):
        f = check_spectrum(f)
        if f.shape != mask.spec.z:
            raise InvalidArgumentError(f"spectrum shape {f.shape} != embedding dims {mask.spec.z}")
        if floor:
            f = floor_spectrum(f)
        if not np.all(f > 0):
            raise InvalidArgumentError("eigenvalues must be strictly positive")
        f = f.copy()
        f.flags.writeable = False
        self.eigenvalues = f
        self.mask = mask
        self.spec = mask.spec
        self._half = np.ascontiguousarray(_fft.half(f))
        self._sqrt_half = np.sqrt(self._half)
        self._cov = None

    @property
    def shape(self):
        return self.spec.z

    @property
    def covariance(self) -> np.ndarray:
        """Periodic covariance sequence ``R(h)`` (computed lazily)."""
        if self._cov is None:
            self._cov = periodic_cov_from_spectrum(self.eigenvalues)
        return self._cov

    def _apply(self, grid, factor):
        return _fft.irfftn(_fft.rfftn(grid) * factor, self.shape)

    def full_multiply(self, v: np.ndarray) -> np.ndarray:
        """``R v`` for a field ``v`` on the embedding lattice."""
        v = np.asarray(v, dtype=float).reshape(self.shape)
        return self._apply(v, self._half)

    def a_multiply(self, x: np.ndarray) -> np.ndarray:
        if self.mask.n == 0:
            raise InvalidArgumentError("no observed cells")
        return self.mask.gather(self.full_multiply(self.mask.scatter(x)))

    def bt_multiply(self, x: np.ndarray) -> np.ndarray:
        """``B^T x``: covariance of missing cells with observed values ``x``."""
        if self.mask.n == 0:
            raise InvalidArgumentError("no observed cells")
        if self.mask.n_missing == 0:
            return np.zeros(0)
        return self.mask.gather_missing(self.full_multiply(self.mask.scatter(x)))

    def a_and_bt_multiply(self, x: np.ndarray):
        """Both ``A x`` and ``B^T x`` from one full product."""
        full = self.full_multiply(self.mask.scatter(x))
        return self.mask.gather(full), self.mask.gather_missing(full)

    def inv_multiply_observed(self, x: np.ndarray) -> np.ndarray:
        """``(A - B C^{-1} B^T)^{-1} x``, the observed block of ``R^{-1}``.

        Used as the inverse-spectrum preconditioner.
        """
        grid = self.mask.scatter(x)
        return self.mask.gather(self._apply(grid, 1.0 / self._half))

    def unconditional_sample(self, rng: np.random.Generator) -> np.ndarray:
        """Exact draw from ``N(0, R)`` on the embedding lattice.

        The real FFT of white noise, scaled by ``m^{-1/2}``, is a Hermitian
        complex Gaussian vector with unit-variance real draws at the
        self-conjugate frequencies and variance 1/2 per part elsewhere;
        scaling it by ``sqrt(f)`` and inverting gives covariance exactly ``R``.
        """
        noise = rng.standard_normal(self.shape)
        return self._apply(noise, self._sqrt_half)


def dense_periodic_matrix(r: np.ndarray) -> np.ndarray:
    """Dense ``m x m`` matrix ``R[(x_i - x_j) mod z]`` over the lattice in C order."""
    from .lattice import lattice_coords

    z = np.asarray(r.shape)
    coords = lattice_coords(r.shape)
    lag = np.mod(coords[:, None, :] - coords[None, :, :], z)
    return r[tuple(lag[..., j] for j in range(len(z)))]
