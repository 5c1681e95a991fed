"""Preconditioned conjugate gradient and a Vecchia preconditioner."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import InvalidArgumentError, NotPositiveDefiniteError, NumericalBreakdownError
from .lattice import ObservationMask, lattice_coords

Operator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PcgConfig:
    rel_tol: float = 1e-6
    max_iter: int = 1000

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise InvalidArgumentError("rel_tol must be positive")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")


@dataclass(frozen=True)
class PcgReport:
    iterations: int
    residual: float
    converged: bool


def _identity(x):
    return x


def pcg_solve(apply_a: Operator, apply_m: Operator | None, rhs, cfg: PcgConfig = PcgConfig(), x0=None, callback=None):
    """Solve ``A x = rhs`` by preconditioned conjugate gradient.

    Stops when ``||A x - rhs|| / ||rhs|| <= cfg.rel_tol``. If ``max_iter`` is
    reached first, returns the iterate with the smallest residual and a report
    with ``converged=False``. ``callback(k, x)`` is called after each iteration.
    """
    apply_m = apply_m or _identity
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise NumericalBreakdownError("right-hand side is not finite")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), PcgReport(0, 0.0, True)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_a(x) if x0 is not None else b.copy()
    res = np.linalg.norm(r) / bnorm
    if res <= cfg.rel_tol:
        return x, PcgReport(0, float(res), True)
    best_x, best_res = x.copy(), res

    z = apply_m(r)
    p = z.copy()
    rz = r @ z
    for k in range(1, cfg.max_iter + 1):
        ap = apply_a(p)
        pap = p @ ap
        if not np.isfinite(pap) or pap <= 0:
            raise NumericalBreakdownError(f"non-positive curvature p'Ap={pap} at iteration {k}")
        step = rz / pap
        x += step * p
        r -= step * ap
        res = np.linalg.norm(r) / bnorm
        if not np.isfinite(res):
            raise NumericalBreakdownError(f"residual is not finite at iteration {k}")
        if callback is not None:
            callback(k, x)
        if res <= cfg.rel_tol:
            return x, PcgReport(k, float(res), True)
        if res < best_res:
            best_x, best_res = x.copy(), res
        z = apply_m(r)
        rz_new = r @ z
        if not np.isfinite(rz_new):
            raise NumericalBreakdownError(f"preconditioned residual is not finite at iteration {k}")
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, PcgReport(cfg.max_iter, float(best_res), False)


@dataclass(frozen=True, eq=False)
class VecchiaPreconditioner:
    """Sparse factor ``U`` with ``A^{-1} ~= U U^T``.

    Observed cells are taken in row-major order. Row ``i`` of the strictly
    lower-triangular ``coef`` holds the regression of cell ``i`` on its
    nearest previously ordered neighbors; ``cond_sd`` are the conditional
    standard deviations. ``U = (I - coef)^T diag(1/cond_sd)``.
    """

    coef: sp.csr_matrix
    cond_sd: np.ndarray
    order: np.ndarray
    m_nb: int

    @property
    def n(self) -> int:
        return self.cond_sd.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return apply_vecchia(self, x)

    __call__ = apply


def _prior_neighbors(coords: np.ndarray, m_nb: int) -> np.ndarray:
    """Indices of the ``m_nb`` nearest points with a smaller index, -1 padded."""
    n = coords.shape[0]
    out = np.full((n, m_nb), -1, dtype=np.int64)
    if m_nb == 0 or n <= 1:
        return out
    tree = cKDTree(coords)
    todo = np.arange(1, n)
    k = min(n, 2 * m_nb + 2)
    while todo.size:
        _, idx = tree.query(coords[todo], k=k)
        idx = np.atleast_2d(idx)
        prior = idx < todo[:, None]
        count = prior.sum(axis=1)
        want = np.minimum(m_nb, todo)
        done = (count >= want) | (k >= n)
        for row in np.flatnonzero(done):
            sel = idx[row][prior[row]][: want[row]]
            out[todo[row], : sel.size] = sel
        todo = todo[~done]
        k = min(n, 2 * k)
    return out


def build_vecchia_preconditioner(cov: np.ndarray, mask: ObservationMask, m_nb: int = 30, chunk: int = 4096) -> VecchiaPreconditioner:
    """Vecchia approximation to ``A^{-1}`` from the periodic covariance ``cov``.

    ``cov`` is the periodic covariance sequence on the embedding lattice, so the
    covariance of two cells is ``cov[(x_i - x_j) mod z]``. Neighbors are chosen
    by plain Euclidean distance on lattice coordinates.
    """
    if m_nb < 0:
        raise InvalidArgumentError("m_nb must be >= 0")
    n = mask.n
    if n < 1:
        raise InvalidArgumentError("no observed cells")
    cov = np.asarray(cov, dtype=float)
    coords = lattice_coords(mask.spec.z)[mask.obs_idx]
    m_eff = min(m_nb, n - 1)
    nbrs = _prior_neighbors(coords.astype(float), m_eff)
    r0 = cov.flat[0]
    table, pos, offset = _lag_table(cov, coords)

    rows, cols, vals = [], [], []
    cond_var = np.full(n, r0)
    eye = np.eye(max(m_eff, 1))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        nb = nbrs[start:stop]
        valid = nb >= 0
        if m_eff == 0 or not valid.any():
            continue
        pn = pos[np.where(valid, nb, 0)]
        kmat = table[pn[:, :, None] - pn[:, None, :] + offset]
        kvec = table[pn - pos[start:stop, None] + offset]
        # padded slots become decoupled unit-variance dummies with zero weight
        pair = valid[:, :, None] & valid[:, None, :]
        kmat = np.where(pair, kmat, eye)
        kvec = np.where(valid, kvec, 0.0)
        b, cv = _regress(kmat, kvec, r0)
        if b is None:
            b, cv = _regress(kmat + 1e-10 * r0 * eye, kvec, r0)
            if b is None:
                raise NotPositiveDefiniteError("singular neighbor covariance in Vecchia factor")
        cond_var[start:stop] = cv
        r_idx = np.broadcast_to(np.arange(start, stop)[:, None], nb.shape)
        rows.append(r_idx[valid])
        cols.append(nb[valid])
        vals.append(b[valid])
    if rows:
        coef = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    else:
        coef = sp.csr_matrix((n, n))
    return VecchiaPreconditioner(coef=coef, cond_sd=np.sqrt(cond_var), order=np.arange(n), m_nb=m_nb)


def _lag_table(cov, coords):
    """Covariance lookup by flat offset.

    ``table[pos[i] - pos[j] + offset] == cov[(x_i - x_j) mod z]`` for cells
    inside the lattice.
    """
    z = np.asarray(cov.shape)
    ext_shape = 2 * z - 1
    idx = np.ix_(*[np.mod(np.arange(e) - (n - 1), n) for e, n in zip(ext_shape, z)])
    table = cov[idx].ravel()
    strides = np.cumprod(np.concatenate([[1], ext_shape[::-1][:-1]]))[::-1]
    pos = coords @ strides
    offset = int(np.dot(z - 1, strides))
    return table, pos, offset


def _regress(kmat, kvec, r0):
    try:
        b = np.linalg.solve(kmat, kvec[..., None])[..., 0]
    except np.linalg.LinAlgError:
        return None, None
    cv = r0 - np.einsum("ij,ij->i", b, kvec)
    if not np.all(np.isfinite(cv)) or np.any(cv <= 0):
        return None, None
    return b, cv


def apply_vecchia(p: VecchiaPreconditioner, x: np.ndarray) -> np.ndarray:
    """``U (U^T x)`` with ``U^T = diag(1/sd) (I - coef)``."""
    x = np.asarray(x, dtype=float)
    t = (x - p.coef @ x) / p.cond_sd
    t = t / p.cond_sd
    return t - p.coef.T @ t
