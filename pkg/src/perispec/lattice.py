"""Lattice geometry: observation and embedding grids, Fourier frequencies, masks.

Every multidimensional array in the package uses numpy's C order (last axis
varies fastest). Grid cells are indexed from 0, so the observation lattice is
the corner ``[0, y_1) x ... x [0, y_d)`` of the embedding lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


def _ceil_dim(tau: float, n: int) -> int:
    # guard against 1.1 * 80 = 88.00000000000001
    return int(math.ceil(round(tau * n, 9)))


@dataclass(frozen=True)
class LatticeSpec:
    """Observation dims ``y``, embedding dims ``z`` and the expansion factor."""

    y: tuple[int, ...]
    z: tuple[int, ...]
    tau: float

    def __post_init__(self):
        if len(self.y) == 0 or len(self.y) != len(self.z):
            raise InvalidArgumentError("y and z must be nonempty with equal length")
        if any(n < 2 for n in self.y):
            raise InvalidArgumentError(f"all observation dims must be >= 2, got {self.y}")
        if any(b < a for a, b in zip(self.y, self.z)):
            raise InvalidArgumentError(f"embedding dims {self.z} smaller than {self.y}")

    @property
    def d(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return math.prod(self.z)

    @property
    def n_cells_y(self) -> int:
        return math.prod(self.y)

    @property
    def obs_slices(self) -> tuple[slice, ...]:
        """Slices selecting the observation lattice inside an embedding array."""
        return tuple(slice(0, n) for n in self.y)

    @classmethod
    def from_dims(cls, y, z) -> "LatticeSpec":
        """Build a spec from explicit dims (e.g. read from a spectrum file)."""
        y = tuple(int(v) for v in y)
        z = tuple(int(v) for v in z)
        return cls(y=y, z=z, tau=max(b / a for a, b in zip(y, z)))


def build_embedding(y, tau: float = 1.0) -> LatticeSpec:
    """Expand each observation dim by ``tau`` (rounding up)."""
    y = tuple(int(v) for v in np.atleast_1d(y))
    if not tau >= 1:
        raise InvalidArgumentError(f"expansion factor must be >= 1, got {tau}")
    if len(y) == 0 or any(n < 2 for n in y):
        raise InvalidArgumentError(f"all observation dims must be >= 2, got {y}")
    z = tuple(_ceil_dim(tau, n) for n in y)
    return LatticeSpec(y=y, z=z, tau=float(tau))


def fourier_frequencies(spec: LatticeSpec) -> np.ndarray:
    """Frequencies ``k / z`` in [0, 1), shape ``z + (d,)``.

    Entry ``[k_1, ..., k_d]`` holds the frequency vector for index ``k``, so a
    flattened view lines up with any flattened field on the same lattice.
    """
    axes = [np.arange(n) / n for n in spec.z]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def lattice_coords(shape) -> np.ndarray:
    """Integer coordinates of every cell, shape ``(prod(shape), d)`` in C order."""
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Boolean mask over the embedding lattice; True marks an observed cell."""

    observed: np.ndarray
    spec: LatticeSpec

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        if obs.shape != self.spec.z:
            raise InvalidArgumentError(f"mask shape {obs.shape} != embedding dims {self.spec.z}")
        outside = obs.copy()
        outside[self.spec.obs_slices] = False
        if outside.any():
            raise InvalidArgumentError("observed cells outside the observation lattice")
        obs.flags.writeable = False
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "_obs_idx", np.flatnonzero(obs))
        object.__setattr__(self, "_mis_idx", np.flatnonzero(~obs))

    @property
    def n(self) -> int:
        return int(self._obs_idx.size)

    @property
    def n_missing(self) -> int:
        return int(self._mis_idx.size)

    @property
    def obs_idx(self) -> np.ndarray:
        """Flat (C order) indices of observed cells, ascending."""
        return self._obs_idx

    @property
    def mis_idx(self) -> np.ndarray:
        return self._mis_idx

    def on_y(self) -> np.ndarray:
        """The mask restricted to the observation lattice."""
        return self.observed[self.spec.obs_slices].copy()

    def scatter(self, values: np.ndarray, missing_values=None) -> np.ndarray:
        """Place observed (and optionally missing) values into a full grid."""
        out = np.zeros(self.spec.m)
        out[self._obs_idx] = values
        if missing_values is not None:
            out[self._mis_idx] = missing_values
        return out.reshape(self.spec.z)

    def gather(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field).reshape(-1)[self._obs_idx]

    def gather_missing(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field).reshape(-1)[self._mis_idx]


def embed_mask(obs_on_y, spec: LatticeSpec) -> ObservationMask:
    """Copy a mask over the observation lattice into the embedding lattice."""
    obs_on_y = np.asarray(obs_on_y, dtype=bool)
    if obs_on_y.shape != spec.y:
        raise InvalidArgumentError(f"mask shape {obs_on_y.shape} != observation dims {spec.y}")
    full = np.zeros(spec.z, dtype=bool)
    full[spec.obs_slices] = obs_on_y
    return ObservationMask(full, spec)


def embed_field(values_on_y, spec: LatticeSpec) -> np.ndarray:
    """Zero-pad a field on the observation lattice to the embedding lattice."""
    values_on_y = np.asarray(values_on_y, dtype=float)
    if values_on_y.shape != spec.y:
        raise InvalidArgumentError(f"field shape {values_on_y.shape} != observation dims {spec.y}")
    full = np.zeros(spec.z)
    full[spec.obs_slices] = values_on_y
    return full
