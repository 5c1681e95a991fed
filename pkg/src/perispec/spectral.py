"""Spectra, periodic covariances, periodograms and kernel smoothing on the torus.

Conventions: a spectrum is an array of shape ``z`` indexed by frequency
index ``k`` (frequency ``k / z``). The forward transform uses
``exp(-2 pi i nu . x)``; covariance synthesis uses ``exp(+2 pi i omega . h)``
with a ``1/m`` factor, so ``R = ifftn(f)`` and ``f = fftn(R)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _fft
from .errors import InvalidArgumentError, NotPositiveDefiniteError
from .lattice import LatticeSpec, fourier_frequencies

SYMMETRY_RTOL = 1e-10
FLOOR_FRACTION = 1e-8


def reflect(values: np.ndarray) -> np.ndarray:
    """Return ``values[(z - k) mod z]`` for every index ``k``."""
    values = np.asarray(values)
    return np.roll(np.flip(values), 1, axis=tuple(range(values.ndim)))


def symmetry_error(values: np.ndarray) -> float:
    values = np.asarray(values)
    scale = np.max(np.abs(values))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(values - reflect(values))) / scale)


def check_spectrum(f: np.ndarray, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise InvalidArgumentError("spectrum contains non-finite values")
    if np.any(f < 0):
        raise InvalidArgumentError("spectrum contains negative values")
    if symmetry_error(f) > rtol:
        raise InvalidArgumentError("spectrum violates real-field symmetry f(k) = f(-k)")
    return f


def symmetrize(f: np.ndarray) -> np.ndarray:
    return 0.5 * (f + reflect(f))


def floor_spectrum(f: np.ndarray, fraction: float = FLOOR_FRACTION) -> np.ndarray:
    """Floor a spectrum at ``fraction`` times its mean."""
    f = np.asarray(f, dtype=float)
    return np.maximum(f, fraction * f.mean())


def periodic_cov_from_spectrum(f: np.ndarray) -> np.ndarray:
    """Periodic covariance ``R(h) = (1/m) sum_w f(w) exp(2 pi i w.h)``."""
    f = check_spectrum(f)
    r = _fft.ifftn(f)
    r0 = abs(r.flat[0].real)
    if np.max(np.abs(r.imag)) > 1e-10 * max(r0, np.finfo(float).tiny):
        raise InvalidArgumentError("periodic covariance has a non-negligible imaginary part")
    return np.ascontiguousarray(r.real)


def spectrum_from_cov(r: np.ndarray) -> np.ndarray:
    """Spectrum ``f(w) = sum_h R(h) exp(-2 pi i w.h)`` of a periodic covariance.

    Tiny negative values from roundoff are clamped to zero; anything below
    ``-1e-10 * max(f)`` means ``r`` is not positive semidefinite.
    """
    r = np.asarray(r, dtype=float)
    if symmetry_error(r) > SYMMETRY_RTOL:
        raise InvalidArgumentError("periodic covariance is not even under reflection")
    f = _fft.fftn(r).real
    fmax = np.max(f)
    if np.min(f) < -1e-10 * max(fmax, 0.0) or fmax < 0:
        raise NotPositiveDefiniteError(
            f"spectrum has negative values (min {np.min(f):.3g}, max {fmax:.3g})"
        )
    return np.maximum(f, 0.0)


def _wrap_shell(cov_fn, lags, z, k):
    """Sum of cov_fn over all wraps ``h + j*z`` with ``max|j| == k``."""
    d = len(z)
    ranges = [np.arange(-k, k + 1)] * d
    js = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, d)
    js = js[np.max(np.abs(js), axis=1) == k] if k > 0 else js
    zarr = np.asarray(z)
    total = np.zeros(lags.shape[:-1])
    for j in js:
        total += cov_fn(lags + j * zarr)
    return total


def wrapped_periodic_cov(cov_fn, spec: LatticeSpec, k_max: int | None = None) -> np.ndarray:
    """Poisson wrap ``R(h) = sum_j K(h + j*z)`` of a stationary covariance.

    With ``k_max=None`` the truncation doubles until the added terms change
    ``R`` by less than ``1e-10 * R(0)``.
    """
    z = spec.z
    lags = np.stack(np.meshgrid(*[np.arange(n) for n in z], indexing="ij"), axis=-1).astype(float)
    r = _wrap_shell(cov_fn, lags, z, 0)
    if k_max is not None:
        if k_max < 0:
            raise InvalidArgumentError("k_max must be >= 0")
        for k in range(1, k_max + 1):
            r = r + _wrap_shell(cov_fn, lags, z, k)
        return r
    k = 0
    target = 2
    while True:
        change = np.zeros_like(r)
        while k < target:
            k += 1
            change += _wrap_shell(cov_fn, lags, z, k)
        r = r + change
        if np.max(np.abs(change)) < 1e-10 * abs(r.flat[0]) or k >= 256:
            return r
        target *= 2


def wrapped_true_spectrum(cov_fn, spec: LatticeSpec, k_max: int | None = None) -> np.ndarray:
    """Spectral density of a lattice process at the Fourier frequencies of ``spec.z``.

    ``cov_fn`` maps an array of lag vectors (last axis of length d) to
    covariances.
    """
    return spectrum_from_cov(symmetrize(wrapped_periodic_cov(cov_fn, spec, k_max)))


@dataclass(frozen=True)
class MaternParams:
    nu: float = 0.5
    range: float = 8.0
    variance: float = 2.0

    def __post_init__(self):
        if not (self.nu > 0 and self.range > 0 and self.variance > 0):
            raise InvalidArgumentError("Matern parameters must all be positive")


def matern_cov(h, p: MaternParams) -> np.ndarray:
    """Matern covariance at lag vectors ``h`` (last axis is the lag dimension)."""
    h = np.asarray(h, dtype=float)
    dist = np.sqrt(np.sum(h * h, axis=-1)) if h.ndim > 0 else np.abs(h)
    x = np.sqrt(2.0 * p.nu) * dist / p.range
    out = np.full(x.shape, p.variance, dtype=float)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        if p.nu == 0.5:
            out[pos] = p.variance * np.exp(-xp)
        else:
            scale = 2.0 ** (1.0 - p.nu) / special.gamma(p.nu)
            out[pos] = p.variance * scale * xp**p.nu * special.kv(p.nu, xp)
    return out


def exponential_cov(variance: float = 2.0, range_: float = 8.0):
    """``K(h) = variance * exp(-|h| / range)``, as a vectorized callable."""

    def cov(h):
        return variance * np.exp(-np.sqrt(np.sum(np.asarray(h, float) ** 2, axis=-1)) / range_)

    return cov


def ar1_spectrum(theta: float, spec: LatticeSpec) -> np.ndarray:
    """Quasi-Matern AR(1)-type spectrum ``1 / (1 - theta/d * sum_j cos(2 pi w_j))``.

    For d=2 this is ``1 / (1 - theta/2 (cos 2 pi w1 + cos 2 pi w2))``.
    """
    if not 0 <= theta < 1:
        raise InvalidArgumentError(f"theta must be in [0, 1), got {theta}")
    return _ar1_values(theta, _cos_sum(spec.z))


def _cos_sum(z) -> np.ndarray:
    """``(1/d) sum_j cos(2 pi k_j / z_j)`` over the lattice."""
    d = len(z)
    total = np.zeros(z)
    for j, n in enumerate(z):
        shape = [1] * d
        shape[j] = n
        total = total + np.cos(2 * np.pi * np.arange(n) / n).reshape(shape)
    return total / d


def _ar1_values(theta, cos_sum):
    return 1.0 / (1.0 - theta * cos_sum)


def periodogram(field: np.ndarray) -> np.ndarray:
    """``|J(nu)|^2`` with ``J(nu) = m^{-1/2} sum_x field(x) exp(-2 pi i nu.x)``."""
    field = np.asarray(field, dtype=float)
    j = _fft.fftn(field)
    return (j.real**2 + j.imag**2) / field.size


def circular_distance(spec: LatticeSpec) -> np.ndarray:
    """Euclidean norm of the componentwise circular distance of each frequency to 0."""
    freqs = fourier_frequencies(spec)
    comp = np.minimum(freqs, 1.0 - freqs)
    return np.sqrt(np.sum(comp * comp, axis=-1))


@dataclass(frozen=True, eq=False)
class SmoothingKernel:
    """Normalized periodic Gaussian kernel ``alpha`` over the frequency grid."""

    delta: float
    weights: np.ndarray
    _weights_hat: np.ndarray
    _sq_weights_hat: np.ndarray

    @property
    def shape(self):
        return self.weights.shape

    @property
    def sum_sq(self) -> float:
        return float(np.sum(self.weights**2))


def build_kernel(delta: float, spec: LatticeSpec) -> SmoothingKernel:
    """Weights proportional to ``exp(-dist^2 / delta^2)``, normalized to sum to 1."""
    if not delta > 0:
        raise InvalidArgumentError(f"bandwidth must be positive, got {delta}")
    dist = circular_distance(spec)
    w = np.exp(-((dist / delta) ** 2))
    w /= w.sum()
    w.flags.writeable = False
    return SmoothingKernel(
        delta=float(delta),
        weights=w,
        _weights_hat=_fft.rfftn(w),
        _sq_weights_hat=_fft.rfftn(w * w),
    )


def _convolve(values, kernel_hat, shape):
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(shape):
        raise InvalidArgumentError(f"grid shape {values.shape} != kernel shape {tuple(shape)}")
    return _fft.irfftn(_fft.rfftn(values) * kernel_hat, shape)


def smooth(values: np.ndarray, kernel: SmoothingKernel) -> np.ndarray:
    """Circular convolution ``sum_nu values(nu) alpha(w - nu)``."""
    return _convolve(values, kernel._weights_hat, kernel.shape)


def smoothed_sd(f: np.ndarray, kernel: SmoothingKernel) -> np.ndarray:
    """``S(w) = sqrt(sum_nu f(nu)^2 alpha(w - nu)^2)``."""
    f = np.asarray(f, dtype=float)
    out = _convolve(f * f, kernel._sq_weights_hat, kernel.shape)
    return np.sqrt(np.maximum(out, 0.0))
