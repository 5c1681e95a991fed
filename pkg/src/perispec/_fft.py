"""Thin wrappers over scipy.fft with a process-wide worker count."""

from contextlib import contextmanager

import scipy.fft as sfft

_workers = 1


def set_workers(n: int) -> None:
    global _workers
    _workers = max(1, int(n))


def get_workers() -> int:
    return _workers


@contextmanager
def workers(n: int):
    old = _workers
    set_workers(n)
    try:
        yield
    finally:
        set_workers(old)


def fftn(x):
    return sfft.fftn(x, workers=_workers)


def ifftn(x):
    return sfft.ifftn(x, workers=_workers)


def rfftn(x):
    return sfft.rfftn(x, workers=_workers)


def irfftn(x, shape):
    return sfft.irfftn(x, s=shape, workers=_workers)


def half(values):
    """Restrict a full-grid array to the rfftn half-spectrum layout."""
    return values[..., : values.shape[-1] // 2 + 1]


def fftn_axes(x, axes):
    return sfft.fftn(x, axes=axes, workers=_workers)


def ifftn_axes(x, axes):
    return sfft.ifftn(x, axes=axes, workers=_workers)
