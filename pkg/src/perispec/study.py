"""Dense bispectrum study, Matern field simulation and estimator comparison.

The dense study follows the covariance ``S_k`` of the data completed by one
periodic imputation under the current spectrum, starting from the bispectrum
of the zero-padded true covariance, and scores each step by the integrated
normalized squared bias (INSB) of its bispectrum.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import linalg

from . import _fft
from .baselines import build_taper, tapered_periodogram, zero_infill_periodogram
from .errors import (
    DenseCapExceededError,
    EmbeddingFailureError,
    InvalidArgumentError,
    NotPositiveDefiniteError,
)
from .estimator import EstimatorConfig, run_estimation
from .imputation import stream
from .lattice import LatticeSpec, ObservationMask, build_embedding, embed_mask, lattice_coords
from .spectral import (
    MaternParams,
    build_kernel,
    exponential_cov,
    floor_spectrum,
    matern_cov,
    periodic_cov_from_spectrum,
    symmetrize,
    wrapped_true_spectrum,
)

log = logging.getLogger(__name__)

DENSE_CAP = 4096


@dataclass(frozen=True, eq=False)
class DenseModel:
    """Dense blocks over the embedding lattice.

    ``K`` is the true covariance of the observed values, ``A``, ``B``, ``C``
    the periodic blocks under ``f_true``. ``obs``/``mis`` are flat lattice
    indices (row-major) of the observed and missing cells.
    """

    K: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    spec: LatticeSpec
    mask: ObservationMask

    @property
    def obs(self):
        return self.mask.obs_idx

    @property
    def mis(self):
        return self.mask.mis_idx


def periodic_blocks(f: np.ndarray, mask: ObservationMask):
    """Dense ``A, B, C`` of the periodic covariance with spectrum ``f``."""
    r = periodic_cov_from_spectrum(f)
    z = np.asarray(mask.spec.z)
    coords = lattice_coords(mask.spec.z)

    def block(i, j):
        lag = np.mod(coords[i][:, None, :] - coords[j][None, :, :], z)
        return r[tuple(lag[..., k] for k in range(z.size))]

    o, w = mask.obs_idx, mask.mis_idx
    return block(o, o), block(o, w), block(w, w)


def build_dense_model(cov_fn, f_true, mask: ObservationMask, dense_cap: int = DENSE_CAP) -> DenseModel:
    """``K`` from plain (unwrapped) lags; ``A, B, C`` from ``f_true`` with periodic lags."""
    spec = mask.spec
    if spec.m > dense_cap:
        raise DenseCapExceededError(f"m={spec.m} exceeds dense cap {dense_cap}")
    coords = lattice_coords(spec.z)[mask.obs_idx].astype(float)
    K = cov_fn(coords[:, None, :] - coords[None, :, :])
    A, B, C = periodic_blocks(f_true, mask)
    return DenseModel(K=np.asarray(K, float), A=A, B=B, C=C, spec=spec, mask=mask)


def bispectrum_of(S: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """``F^dag S F`` with ``F[x, nu] = m^{-1/2} exp(2 pi i nu.x)``.

    ``S`` is indexed by flat lattice positions in row-major order.
    """
    z = spec.z
    m = spec.m
    d = len(z)
    S = np.asarray(S)
    if S.shape != (m, m):
        raise InvalidArgumentError(f"matrix shape {S.shape} != ({m}, {m})")
    t = S.reshape(z + z)
    t = _fft.ifftn_axes(t, tuple(range(d, 2 * d)))
    t = _fft.fftn_axes(t, tuple(range(d)))
    return t.reshape(m, m)


def insb(fk: np.ndarray, f_true: np.ndarray) -> float:
    """Integrated normalized squared bias of a bispectrum against a diagonal truth."""
    f = np.asarray(f_true, dtype=float).reshape(-1)
    if fk.shape != (f.size, f.size):
        raise InvalidArgumentError("bispectrum and spectrum sizes differ")
    diff = np.array(fk, dtype=complex)
    diff[np.diag_indices_from(diff)] -= f
    num = diff.real**2 + diff.imag**2
    return float(np.sum(num / np.outer(f, f)) / f.size)


def initial_bispectrum(model: DenseModel) -> np.ndarray:
    """Bispectrum of ``(m/n) [[K, 0], [0, 0]]``: the non-imputed periodogram's expectation."""
    m, n = model.spec.m, model.mask.n
    S = np.zeros((m, m))
    S[np.ix_(model.obs, model.obs)] = model.K * (m / n)
    return bispectrum_of(S, model.spec)


def diagonal_spectrum(fk: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """Real diagonal of a bispectrum as a symmetrized, floored spectrum."""
    diag = np.real(np.diag(fk)).reshape(spec.z)
    diag = np.maximum(symmetrize(diag), 0.0)
    return floor_spectrum(diag)


def study_covariance(model: DenseModel, f_k: np.ndarray) -> np.ndarray:
    """``S_k`` for imputation under spectrum ``f_k``, in lattice order.

    ``S_k = [[K, K A^-1 B], [B^T A^-1 K, C + B^T A^-1 (K - A) A^-1 B]]`` with
    ``A, B, C`` the periodic blocks under ``f_k``.
    """
    A, B, C = periodic_blocks(f_k, model.mask)
    K = model.K
    m = model.spec.m
    o, w = model.obs, model.mis
    S = np.zeros((m, m))
    S[np.ix_(o, o)] = K
    if w.size:
        try:
            cho = linalg.cho_factor(A, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("periodic block A is not positive definite") from exc
        aib = linalg.cho_solve(cho, B, check_finite=False)
        kab = K @ aib
        S[np.ix_(o, w)] = kab
        S[np.ix_(w, o)] = kab.T
        S[np.ix_(w, w)] = C + aib.T @ (K - A) @ aib
    return S


def study_iteration(model: DenseModel, f_k: np.ndarray) -> np.ndarray:
    """Next bispectrum ``g(nu)^dag S_k g(omega)``."""
    return bispectrum_of(study_covariance(model, f_k), model.spec)


def study_sequence(model: DenseModel, f_true: np.ndarray, iterations: int) -> list[float]:
    """INSB at iterations ``0..iterations``."""
    fk = initial_bispectrum(model)
    out = [insb(fk, f_true)]
    for _ in range(iterations):
        fk = study_iteration(model, diagonal_spectrum(fk, model.spec))
        out.append(insb(fk, f_true))
    return out


def parse_tau(text) -> Fraction:
    """Parse an expansion factor such as ``"34/32"`` or ``1.0625``."""
    return Fraction(str(text)).limit_denominator(10**6)


def make_missingness(setting: int, y, rng: np.random.Generator | None = None) -> np.ndarray:
    """Observation mask over ``y`` for one of the three missingness settings.

    1: each cell missing independently with probability 0.3;
    2: a centered block of dims ``round(sqrt(0.3) * y_j)`` missing;
    3: nothing missing.
    """
    y = tuple(int(v) for v in y)
    if setting == 1:
        rng = rng if rng is not None else np.random.default_rng()
        return rng.random(y) >= 0.3
    if setting == 2:
        obs = np.ones(y, dtype=bool)
        sl = []
        for n in y:
            b = int(round(np.sqrt(0.3) * n))
            lo = (n - b) // 2
            sl.append(slice(lo, lo + b))
        obs[tuple(sl)] = False
        return obs
    if setting == 3:
        return np.ones(y, dtype=bool)
    raise InvalidArgumentError(f"unknown missingness setting {setting}")


def insb_row(setting: int, tau, iterations: int = 6, y=(32, 32), seed: int = 0, cov_fn=None, dense_cap: int = DENSE_CAP) -> list[float]:
    """INSB row of the dense study for one setting and expansion factor."""
    cov_fn = cov_fn or exponential_cov(2.0, 8.0)
    tau = parse_tau(tau)
    spec = build_embedding(y, float(tau))
    if spec.m > dense_cap:
        raise DenseCapExceededError(f"m={spec.m} exceeds dense cap {dense_cap}")
    mask = embed_mask(make_missingness(setting, y, np.random.default_rng(seed)), spec)
    f_true = wrapped_true_spectrum(cov_fn, spec)
    model = build_dense_model(cov_fn, f_true, mask, dense_cap)
    return study_sequence(model, f_true, iterations)


class MaternSimulator:
    """Exact Gaussian draws on ``y`` by circulant embedding of a nonperiodic covariance.

    The torus starts at three times each dim and doubles until the smallest
    eigenvalue is at least ``-1e-8`` times the largest. Remaining negative
    eigenvalues are set to zero; their largest magnitude relative to the top
    eigenvalue is kept in ``clamp``.
    """

    def __init__(self, params: MaternParams, y, max_doublings: int = 4):
        self.params = params
        self.y = tuple(int(v) for v in y)
        size = tuple(3 * n for n in self.y)
        for _ in range(max_doublings + 1):
            eig = self._eigenvalues(size)
            top = eig.max()
            if eig.min() >= -1e-8 * top:
                break
            size = tuple(2 * n for n in size)
        self.clamp = float(max(0.0, -eig.min()) / top)
        if self.clamp > 1e-6:
            raise EmbeddingFailureError(f"circulant embedding has negative eigenvalues ({self.clamp:.3g} of max)")
        self.size = size
        self._sqrt_half = np.sqrt(np.maximum(_fft.half(eig), 0.0))

    def _eigenvalues(self, size):
        lags = []
        for n in size:
            k = np.arange(n)
            lags.append(np.minimum(k, n - k).astype(float))
        grid = np.stack(np.meshgrid(*lags, indexing="ij"), axis=-1)
        return _fft.fftn(matern_cov(grid, self.params)).real

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal(self.size)
        full = _fft.irfftn(_fft.rfftn(noise) * self._sqrt_half, self.size)
        return np.ascontiguousarray(full[tuple(slice(0, n) for n in self.y)])


def simulate_matern_field(p: MaternParams, y, rng: np.random.Generator) -> np.ndarray:
    return MaternSimulator(p, y).sample(rng)


@dataclass(frozen=True, eq=False)
class Metrics:
    bias: np.ndarray
    mse: np.ndarray
    rimse: float


def metrics(estimates, f_true) -> Metrics:
    """Relative bias, mean relative squared error and RIMSE over replicates."""
    f = np.asarray(f_true, dtype=float)
    if np.any(f == 0):
        raise InvalidArgumentError("true spectrum has zeros")
    est = np.asarray(list(estimates), dtype=float)
    if est.ndim == f.ndim:
        est = est[None]
    if est.shape[0] < 1:
        raise InvalidArgumentError("need at least one estimate")
    rel = (est - f) / f
    bias = rel.mean(axis=0)
    mse = (rel * rel).mean(axis=0)
    return Metrics(bias=bias, mse=mse, rimse=float(np.sqrt(mse.mean())))


@dataclass(frozen=True)
class SimulationDesign:
    """Replicated comparison of estimators on simulated Matern fields."""

    y: tuple[int, ...] = (40, 40)
    params: MaternParams = field(default_factory=MaternParams)
    setting: int = 1
    replicates: int = 20
    deltas: tuple[float, ...] = (0.02, 0.04, 0.06, 0.09, 0.13)
    tau: float = 1.2
    burn_in: int = 100
    epsilon: float = 0.01
    max_iterations: int = 1000
    seed: int = 0
    threads: int = 1

    @classmethod
    def full_scale(cls, setting: int = 1, **kw):
        """Grid sizes and replicate count of the published study."""
        y = (50, 50) if setting == 3 else (80, 80)
        return cls(y=y, setting=setting, replicates=100, **kw)


METHODS = ("zero-infill", "taper", "periodic", "periodic-filtered")


@dataclass(eq=False)
class MethodResult:
    method: str
    best_delta: float
    rimse: float
    rimse_by_delta: dict
    bias: np.ndarray
    converged: int


def simulate_replicates(design: SimulationDesign):
    """Fields and masks over the observation lattice, one RNG stream per replicate."""
    sim = MaternSimulator(design.params, design.y)
    out = []
    for j in range(design.replicates):
        rng = stream(design.seed, 1, j)
        field_y = sim.sample(rng)
        mask_y = make_missingness(design.setting, design.y, rng)
        out.append((field_y, mask_y))
    return out


def _estimate_one(method, field_y, mask_y, delta, design, spec_y, spec_z, kernels, j):
    if method == "zero-infill":
        return zero_infill_periodogram(field_y, mask_y, kernels[("y", delta)]), True
    if method == "taper":
        taper = build_taper(mask_y, 0.05, setting2_interior=(design.setting == 2))
        return tapered_periodogram(field_y, taper, kernels[("y", delta)]), True
    mask = embed_mask(mask_y, spec_z)
    cfg = EstimatorConfig(
        L=1,
        burn_in=design.burn_in,
        epsilon=design.epsilon,
        delta=delta,
        tau=design.tau,
        filter="ar1" if method == "periodic-filtered" else "none",
        max_iterations=design.max_iterations,
        seed=design.seed * 1_000_003 + j,
    )
    data = field_y[mask_y]
    res = run_estimation(data, mask, cfg, kernel=kernels[("z", delta)])
    return res.spectrum, res.converged


def run_simulation_study(design: SimulationDesign, methods=METHODS) -> dict[str, MethodResult]:
    """RIMSE of each method at its best bandwidth from ``design.deltas``."""
    spec_y = build_embedding(design.y, 1.0)
    spec_z = build_embedding(design.y, design.tau)
    cov = lambda h: matern_cov(h, design.params)  # noqa: E731
    truth = {"y": wrapped_true_spectrum(cov, spec_y), "z": wrapped_true_spectrum(cov, spec_z)}
    kernels = {}
    for delta in design.deltas:
        kernels[("y", delta)] = build_kernel(delta, spec_y)
        kernels[("z", delta)] = build_kernel(delta, spec_z)
    reps = simulate_replicates(design)
    results = {}
    for method in methods:
        lattice = "y" if method in ("zero-infill", "taper") else "z"
        by_delta, metric_by_delta, conv_by_delta = {}, {}, {}
        for delta in design.deltas:
            def job(j):
                field_y, mask_y = reps[j]
                return _estimate_one(method, field_y, mask_y, delta, design, spec_y, spec_z, kernels, j)

            if design.threads > 1:
                with ThreadPoolExecutor(max_workers=design.threads) as pool:
                    outs = list(pool.map(job, range(design.replicates)))
            else:
                outs = [job(j) for j in range(design.replicates)]
            met = metrics([o[0] for o in outs], truth[lattice])
            by_delta[delta] = met.rimse
            metric_by_delta[delta] = met
            conv_by_delta[delta] = sum(bool(o[1]) for o in outs)
            log.info("%s delta=%g rimse=%.4f", method, delta, met.rimse)
        best = min(by_delta, key=by_delta.get)
        results[method] = MethodResult(
            method=method,
            best_delta=best,
            rimse=by_delta[best],
            rimse_by_delta=by_delta,
            bias=metric_by_delta[best].bias,
            converged=conv_by_delta[best],
        )
    return results
