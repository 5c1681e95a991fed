import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_blocks, dense_cov_matrix, direct_periodic_cov, random_spectrum
from perispec.circulant import CirculantOperator, dense_periodic_matrix
from perispec.errors import InvalidArgumentError
from perispec.lattice import build_embedding, embed_mask
from perispec.spectral import periodic_cov_from_spectrum


def make_op(rng, y, tau=1.0, frac_missing=0.0, flat=None):
    spec = build_embedding(y, tau)
    mask = embed_mask(rng.random(y) >= frac_missing, spec)
    f = np.full(spec.z, flat) if flat is not None else random_spectrum(rng, spec.z)
    return CirculantOperator(f, mask), f, mask


def test_flat_spectrum_scales():
    rng = np.random.default_rng(0)
    op, _, mask = make_op(rng, (5, 4), 1.4, 0.3, flat=2.5)
    v = rng.standard_normal(op.shape)
    np.testing.assert_allclose(op.full_multiply(v), 2.5 * v, atol=1e-13)
    x = rng.standard_normal(mask.n)
    np.testing.assert_allclose(op.a_multiply(x), 2.5 * x, atol=1e-13)
    np.testing.assert_allclose(op.bt_multiply(x), 0.0, atol=1e-13)
    np.testing.assert_allclose(op.inv_multiply_observed(x), x / 2.5, atol=1e-13)


def test_impulse_gives_covariance_column():
    rng = np.random.default_rng(1)
    op, f, _ = make_op(rng, (5, 4))
    e = np.zeros(op.shape)
    e[0, 0] = 1
    np.testing.assert_allclose(op.full_multiply(e), direct_periodic_cov(f), atol=1e-13)


def test_full_multiply_matches_dense():
    rng = np.random.default_rng(2)
    op, f, _ = make_op(rng, (5, 4))
    v = rng.standard_normal(op.shape)
    R = dense_cov_matrix(direct_periodic_cov(f))
    np.testing.assert_allclose(op.full_multiply(v).reshape(-1), R @ v.reshape(-1), atol=1e-10)


def test_dense_periodic_matrix_matches_oracle():
    rng = np.random.default_rng(3)
    f = random_spectrum(rng, (3, 4))
    r = periodic_cov_from_spectrum(f)
    np.testing.assert_allclose(dense_periodic_matrix(r), dense_cov_matrix(r), atol=1e-15)


def test_complete_mask_a_equals_full():
    rng = np.random.default_rng(4)
    op, _, mask = make_op(rng, (4, 5))
    assert mask.n_missing == 0
    x = rng.standard_normal(mask.n)
    np.testing.assert_allclose(op.a_multiply(x), op.full_multiply(x.reshape(op.shape)).reshape(-1), atol=1e-14)
    assert op.bt_multiply(x).size == 0
    # exact inverse with nothing missing
    np.testing.assert_allclose(op.inv_multiply_observed(op.a_multiply(x)), x, atol=1e-10)


def test_blocks_match_dense_6x6():
    rng = np.random.default_rng(5)
    op, f, mask = make_op(rng, (6, 6), 1.0, 0.4)
    A, B, C, _, _ = dense_blocks(f, mask.observed)
    x = rng.standard_normal(mask.n)
    np.testing.assert_allclose(op.a_multiply(x), A @ x, atol=1e-10)
    np.testing.assert_allclose(op.bt_multiply(x), B.T @ x, atol=1e-10)
    a, bt = op.a_and_bt_multiply(x)
    np.testing.assert_allclose(a, A @ x, atol=1e-10)
    np.testing.assert_allclose(bt, B.T @ x, atol=1e-10)
    schur = A - B @ np.linalg.solve(C, B.T)
    np.testing.assert_allclose(op.inv_multiply_observed(x), np.linalg.solve(schur, x), rtol=1e-8, atol=1e-10)


def test_single_missing_cell_direct_sum():
    rng = np.random.default_rng(6)
    spec = build_embedding((4, 4), 1.0)
    obs = np.ones((4, 4), bool)
    obs[2, 1] = False
    mask = embed_mask(obs, spec)
    f = random_spectrum(rng, spec.z)
    op = CirculantOperator(f, mask)
    r = direct_periodic_cov(f)
    x = rng.standard_normal(mask.n)
    coords = np.argwhere(obs)
    expected = sum(r[(2 - a) % 4, (1 - b) % 4] * xv for (a, b), xv in zip(coords, x))
    assert op.bt_multiply(x)[0] == pytest.approx(expected, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.floats(1.0, 1.6), st.integers(0, 2**31 - 1))
def test_dense_equivalence_property(a, b, tau, seed):
    rng = np.random.default_rng(seed)
    spec = build_embedding((a, b), tau)
    if spec.m > 64:
        return
    obs = rng.random((a, b)) > 0.35
    obs.flat[rng.integers(a * b)] = True
    mask = embed_mask(obs, spec)
    f = random_spectrum(rng, spec.z)
    op = CirculantOperator(f, mask)
    R = dense_cov_matrix(direct_periodic_cov(f))
    v = rng.standard_normal(spec.m)
    np.testing.assert_allclose(op.full_multiply(v).reshape(-1), R @ v, atol=1e-10)
    A, B, C, _, _ = dense_blocks(f, mask.observed)
    x = rng.standard_normal(mask.n)
    np.testing.assert_allclose(op.a_multiply(x), A @ x, atol=1e-10)
    if mask.n_missing:
        np.testing.assert_allclose(op.bt_multiply(x), B.T @ x, atol=1e-10)


def test_rejects_bad_spectra():
    spec = build_embedding((4, 4), 1.0)
    mask = embed_mask(np.ones((4, 4), bool), spec)
    with pytest.raises(InvalidArgumentError):
        CirculantOperator(np.ones((5, 4)), mask)
    asym = np.ones((4, 4))
    asym[0, 1] = 2
    with pytest.raises(InvalidArgumentError):
        CirculantOperator(asym, mask)


def test_zero_spectrum_values_are_floored():
    spec = build_embedding((4,), 1.0)
    mask = embed_mask(np.ones(4, bool), spec)
    op = CirculantOperator(np.array([4.0, 0.0, 0.0, 0.0]), mask)
    assert np.all(op.eigenvalues > 0)
    assert op.eigenvalues[1] == pytest.approx(1e-8)


def test_unconditional_sample_white_noise_law():
    rng = np.random.default_rng(7)
    op, _, _ = make_op(rng, (6, 5), 1.0, flat=3.0)
    draws = np.stack([op.unconditional_sample(rng).reshape(-1) for _ in range(10_000)])
    var = draws.var(axis=0)
    se = 3.0 * np.sqrt(2 / 10_000)
    assert np.all(np.abs(var - 3.0) < 5 * se)
    corr = np.corrcoef(draws[:, 0], draws[:, 7])[0, 1]
    assert abs(corr) < 5 / np.sqrt(10_000)


def test_unconditional_sample_covariance_law():
    rng = np.random.default_rng(8)
    spec = build_embedding((8, 8), 1.0)
    f = random_spectrum(rng, spec.z, low=0.1) * 2
    op = CirculantOperator(f, embed_mask(np.ones((8, 8), bool), spec))
    r = direct_periodic_cov(f)
    n = 5000
    draws = np.stack([op.unconditional_sample(rng) for _ in range(n)])
    x0 = draws[:, 0, 0]
    for lag in [(0, 0), (0, 1), (1, 0), (2, 3), (4, 4), (7, 1)]:
        prod = x0 * draws[:, lag[0], lag[1]]
        se = prod.std() / np.sqrt(n)
        assert abs(prod.mean() - r[lag]) < 5 * se, lag


def test_unconditional_sample_deterministic():
    rng = np.random.default_rng(9)
    op, _, _ = make_op(rng, (5, 6), 1.2)
    a = op.unconditional_sample(np.random.default_rng(42))
    b = op.unconditional_sample(np.random.default_rng(42))
    assert np.array_equal(a, b)
    assert a.dtype == np.float64
