"""Non-iterative reference estimators on the observation lattice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _fft
from .errors import InvalidArgumentError
from .spectral import SmoothingKernel, smooth


def zero_infill_periodogram(data_on_y, mask_on_y, kernel: SmoothingKernel) -> np.ndarray:
    """Smoothed periodogram with zeros at missing cells, scaled by the observed count.

    ``data_on_y`` is a full array over the observation lattice; values at
    missing cells are ignored.
    """
    mask_on_y = np.asarray(mask_on_y, dtype=bool)
    n = int(mask_on_y.sum())
    if n == 0:
        raise InvalidArgumentError("no observed cells")
    filled = np.where(mask_on_y, np.asarray(data_on_y, dtype=float), 0.0)
    j = _fft.fftn(filled)
    return smooth((j.real**2 + j.imag**2) / n, kernel)


def cosine_ramp(width: int) -> np.ndarray:
    """Rising half of a split cosine bell over ``width`` cells, all values in (0, 1)."""
    i = np.arange(width)
    return 0.5 * (1.0 - np.cos(np.pi * (i + 0.5) / width))


def edge_taper_1d(n: int, p: float) -> np.ndarray:
    width = int(math.ceil(p * n))
    t = np.ones(n)
    if width:
        ramp = cosine_ramp(width)
        t[:width] = ramp
        t[n - width:] = np.minimum(t[n - width:], ramp[::-1])
    return t


@dataclass(frozen=True, eq=False)
class TaperGrid:
    weights: np.ndarray
    p: float


def build_taper(mask_on_y, p: float = 0.05, setting2_interior: bool = False) -> TaperGrid:
    """Outer product of per-axis cosine tapers, zeroed at missing cells.

    With ``setting2_interior`` the weights also roll off toward missing cells
    over the same width, measured as chessboard distance to the nearest
    missing cell.
    """
    if not 0 < p < 0.5:
        raise InvalidArgumentError(f"taper fraction must be in (0, 0.5), got {p}")
    mask_on_y = np.asarray(mask_on_y, dtype=bool)
    t = np.ones(mask_on_y.shape)
    for axis, n in enumerate(mask_on_y.shape):
        shape = [1] * mask_on_y.ndim
        shape[axis] = n
        t = t * edge_taper_1d(n, p).reshape(shape)
    if setting2_interior and not mask_on_y.all():
        width = int(math.ceil(p * max(mask_on_y.shape)))
        dist = ndimage.distance_transform_cdt(mask_on_y, metric="chessboard")
        ramp = np.concatenate([cosine_ramp(width), [1.0]])
        t = t * ramp[np.clip(dist - 1, 0, width)]
    t = np.where(mask_on_y, t, 0.0)
    return TaperGrid(weights=t, p=p)


def tapered_periodogram(data_on_y, taper: TaperGrid, kernel: SmoothingKernel) -> np.ndarray:
    """Smoothed ``|sum_x T(x) data(x) e^{-2 pi i nu.x}|^2 / sum_x T(x)^2``."""
    t = taper.weights
    norm = float(np.sum(t * t))
    if norm <= 0:
        raise InvalidArgumentError("taper is identically zero")
    tapered = np.where(t > 0, t * np.asarray(data_on_y, dtype=float), 0.0)
    j = _fft.fftn(tapered)
    return smooth((j.real**2 + j.imag**2) / norm, kernel)
