import numpy as np
import pytest

from oracles import dense_blocks, random_spectrum
from perispec.circulant import CirculantOperator
from perispec.errors import InvalidArgumentError, NumericalBreakdownError
from perispec.lattice import build_embedding, embed_mask
from perispec.solver import PcgConfig, apply_vecchia, build_vecchia_preconditioner, pcg_solve
from perispec.spectral import ar1_spectrum


def spd(rng, n, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * np.geomspace(1, cond, n)) @ q.T


def test_identity_one_iteration():
    b = np.arange(1.0, 6.0)
    x, rep = pcg_solve(lambda v: v, lambda v: v, b)
    np.testing.assert_allclose(x, b)
    assert rep.iterations == 1 and rep.converged


def test_zero_rhs():
    x, rep = pcg_solve(lambda v: 2 * v, None, np.zeros(3))
    assert np.all(x == 0) and rep.converged and rep.iterations == 0


def test_dense_spd_against_direct_solve():
    rng = np.random.default_rng(0)
    A = spd(rng, 30)
    b = rng.standard_normal(30)
    x, rep = pcg_solve(lambda v: A @ v, None, b, PcgConfig(rel_tol=1e-12))
    ref = np.linalg.solve(A, b)
    assert rep.converged
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_error_a_norm_non_increasing():
    rng = np.random.default_rng(1)
    A = spd(rng, 40, 1e3)
    b = rng.standard_normal(40)
    ref = np.linalg.solve(A, b)
    errs = []

    def record(k, x):
        e = x - ref
        errs.append(e @ A @ e)

    pcg_solve(lambda v: A @ v, lambda v: v / np.diag(A), b, PcgConfig(rel_tol=1e-10), callback=record)
    assert len(errs) > 3
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errs, errs[1:]))


def test_not_converged_returns_best_iterate():
    rng = np.random.default_rng(2)
    A = spd(rng, 50, 1e6)
    b = rng.standard_normal(50)
    x, rep = pcg_solve(lambda v: A @ v, None, b, PcgConfig(rel_tol=1e-14, max_iter=3))
    assert not rep.converged and rep.iterations == 3
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) == pytest.approx(rep.residual)


def test_breakdown_on_indefinite_or_nan():
    with pytest.raises(NumericalBreakdownError):
        pcg_solve(lambda v: -v, None, np.ones(3))
    with pytest.raises(NumericalBreakdownError):
        pcg_solve(lambda v: v, None, np.array([1.0, np.nan]))


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        PcgConfig(rel_tol=0)
    with pytest.raises(InvalidArgumentError):
        PcgConfig(max_iter=0)


@pytest.mark.parametrize("seed", range(5))
def test_complete_data_inverse_spectrum_two_iterations(seed):
    rng = np.random.default_rng(seed)
    spec = build_embedding((9, 7), 1.0)
    mask = embed_mask(np.ones((9, 7), bool), spec)
    op = CirculantOperator(random_spectrum(rng, spec.z, low=0.01), mask)
    _, rep = pcg_solve(op.a_multiply, op.inv_multiply_observed, rng.standard_normal(mask.n))
    assert rep.converged and rep.iterations <= 2


def small_problem(seed=0, y=(6, 6), tau=1.3, frac=0.3, theta=0.6):
    rng = np.random.default_rng(seed)
    spec = build_embedding(y, tau)
    mask = embed_mask(rng.random(y) > frac, spec)
    f = ar1_spectrum(theta, spec)
    return rng, spec, mask, f, CirculantOperator(f, mask)


def test_vecchia_zero_neighbors_is_diagonal():
    _, _, mask, _, op = small_problem()
    p = build_vecchia_preconditioner(op.covariance, mask, m_nb=0)
    r0 = op.covariance.flat[0]
    assert p.coef.nnz == 0
    np.testing.assert_allclose(p.cond_sd, np.sqrt(r0))
    x = np.random.default_rng(1).standard_normal(mask.n)
    np.testing.assert_allclose(apply_vecchia(p, x), x / r0, rtol=1e-14)


def test_vecchia_flat_spectrum():
    spec = build_embedding((5, 5), 1.2)
    mask = embed_mask(np.ones((5, 5), bool), spec)
    op = CirculantOperator(np.full(spec.z, 2.0), mask)
    p = build_vecchia_preconditioner(op.covariance, mask, m_nb=6)
    np.testing.assert_allclose(p.cond_sd, np.sqrt(2.0))
    assert np.max(np.abs(p.coef.data)) < 1e-12
    x = np.arange(mask.n, dtype=float)
    np.testing.assert_allclose(apply_vecchia(p, x), x / 2, atol=1e-12)


def test_vecchia_full_neighbors_is_exact_inverse():
    rng = np.random.default_rng(3)
    spec = build_embedding((5, 5), 1.0)
    mask = embed_mask(np.ones((5, 5), bool), spec)
    f = ar1_spectrum(0.8, spec)
    op = CirculantOperator(f, mask)
    p = build_vecchia_preconditioner(op.covariance, mask, m_nb=mask.n - 1)
    A, _, _, _, _ = dense_blocks(f, mask.observed)
    Ainv = np.linalg.inv(A)
    M = np.column_stack([apply_vecchia(p, e) for e in np.eye(mask.n)])
    np.testing.assert_allclose(M, Ainv, atol=1e-8 * np.max(np.abs(Ainv)))
    x = rng.standard_normal(mask.n)
    np.testing.assert_allclose(p(x), Ainv @ x, rtol=1e-8, atol=1e-10)


def test_vecchia_structure_and_spd():
    rng, _, mask, _, op = small_problem(seed=4)
    p = build_vecchia_preconditioner(op.covariance, mask, m_nb=5)
    coo = p.coef.tocoo()
    assert np.all(coo.col < coo.row)
    assert np.max(np.bincount(coo.row, minlength=mask.n)) <= 5
    assert np.all(p.cond_sd > 0)
    for _ in range(5):
        x, y = rng.standard_normal((2, mask.n))
        assert p(x) @ y == pytest.approx(x @ p(y), rel=1e-12)
        assert x @ p(x) > 0


def test_vecchia_neighbors_are_nearest_prior():
    _, spec, mask, _, op = small_problem(seed=5, y=(7, 7), tau=1.0, frac=0.0)
    p = build_vecchia_preconditioner(op.covariance, mask, m_nb=2)
    row = p.coef.getrow(10).tocoo()
    # cell 10 is (1, 3): nearest earlier cells are (0, 3) and (1, 2)
    assert set(row.col) == {3, 9}


def test_both_preconditioners_give_same_solution():
    rng, _, mask, _, op = small_problem(seed=6, y=(12, 10), tau=1.2)
    b = rng.standard_normal(mask.n)
    cfg = PcgConfig(rel_tol=1e-10)
    x1, r1 = pcg_solve(op.a_multiply, op.inv_multiply_observed, b, cfg)
    p = build_vecchia_preconditioner(op.covariance, mask, m_nb=10)
    x2, r2 = pcg_solve(op.a_multiply, p, b, cfg)
    assert r1.converged and r2.converged
    assert np.linalg.norm(x1 - x2) / np.linalg.norm(x1) < 1e-6


def test_vecchia_rejects_negative_neighbors():
    _, _, mask, _, op = small_problem()
    with pytest.raises(InvalidArgumentError):
        build_vecchia_preconditioner(op.covariance, mask, m_nb=-1)
