import numpy as np
import pytest

from oracles import dense_kriging
from perispec.errors import ConvergenceError, InvalidArgumentError
from perispec.imputation import (
    Imputer,
    Preconditioner,
    conditional_expectation,
    conditional_sd,
    conditional_simulation,
    simulate_many,
    stream,
)
from perispec.lattice import build_embedding, embed_mask
from perispec.solver import PcgConfig
from perispec.spectral import ar1_spectrum

TIGHT = PcgConfig(rel_tol=1e-12)


def instance(seed=0, y=(6, 6), tau=1.0, frac=0.4, theta=0.5):
    rng = np.random.default_rng(seed)
    spec = build_embedding(y, tau)
    mask = embed_mask(rng.random(y) >= frac, spec)
    f = ar1_spectrum(theta, spec)
    data = rng.standard_normal(mask.n)
    return rng, spec, mask, f, data


def test_flat_spectrum_condexp_is_zero():
    _, spec, mask, _, data = instance(tau=1.3)
    res = conditional_expectation(data, mask, np.full(spec.z, 2.0))
    np.testing.assert_allclose(res.missing_values, 0.0, atol=1e-12)
    np.testing.assert_array_equal(mask.gather(res.field), data)


def test_complete_data_returns_data():
    rng = np.random.default_rng(1)
    spec = build_embedding((5, 5), 1.0)
    mask = embed_mask(np.ones((5, 5), bool), spec)
    data = rng.standard_normal(25)
    res = conditional_expectation(data, mask, ar1_spectrum(0.5, spec))
    np.testing.assert_array_equal(res.field.reshape(-1), data)
    assert res.missing_values.size == 0
    sim = conditional_simulation(data, mask, ar1_spectrum(0.5, spec), rng=rng)
    np.testing.assert_array_equal(sim.field.reshape(-1), data)


@pytest.mark.parametrize("method", ["fft", "vecchia", "none"])
def test_condexp_matches_dense_kriging(method):
    _, _, mask, f, data = instance()
    res = conditional_expectation(data, mask, f, Preconditioner(method, 10), TIGHT)
    ref, _ = dense_kriging(f, mask.observed, data)
    assert np.max(np.abs(res.missing_values - ref)) / np.max(np.abs(ref)) < 1e-6


def test_condexp_with_embedding_matches_dense():
    _, _, mask, f, data = instance(seed=2, y=(5, 6), tau=1.4, frac=0.3, theta=0.8)
    res = conditional_expectation(data, mask, f, cfg=TIGHT)
    ref, _ = dense_kriging(f, mask.observed, data)
    np.testing.assert_allclose(res.missing_values, ref, rtol=1e-8, atol=1e-10)


def test_condsim_observed_cells_bit_identical():
    rng, _, mask, f, data = instance(seed=3, tau=1.3)
    data = data * np.pi  # values with full mantissas
    for _ in range(5):
        res = conditional_simulation(data, mask, f, rng=rng)
        assert np.array_equal(mask.gather(res.field), data)


def test_flat_spectrum_simulation_independent_of_data():
    rng, spec, mask, _, data = instance(seed=4, tau=1.2)
    imputer = Imputer(np.full(spec.z, 1.5), mask)
    n = 10_000
    draws = np.stack([imputer.conditional_simulation(data, rng).missing_values for _ in range(n)])
    assert np.all(np.abs(draws.var(axis=0) - 1.5) < 5 * 1.5 * np.sqrt(2 / n))
    # with a flat spectrum the simulation ignores the data entirely
    other = imputer.conditional_simulation(data + 100.0, stream(0, 1)).missing_values
    same = imputer.conditional_simulation(data, stream(0, 1)).missing_values
    np.testing.assert_allclose(other, same, atol=1e-9)


def test_conditional_law_moments():
    rng, _, mask, f, data = instance(seed=5)
    imputer = Imputer(f, mask, pcg=TIGHT)
    mean_ref, cov_ref = dense_kriging(f, mask.observed, data)
    n = 3000
    draws = np.stack([imputer.conditional_simulation(data, rng).missing_values for _ in range(n)])
    se = np.sqrt(np.diag(cov_ref) / n)
    assert np.all(np.abs(draws.mean(axis=0) - mean_ref) < 5 * se)
    dev = draws - mean_ref
    prods = dev[:, :, None] * dev[:, None, :]
    cov_se = prods.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(prods.mean(axis=0) - cov_ref) < 5 * cov_se + 1e-12)


def test_pcg_failure_raises_with_report():
    _, _, mask, f, data = instance(seed=6, theta=0.95)
    imputer = Imputer(f, mask, Preconditioner("none"), PcgConfig(rel_tol=1e-14, max_iter=1))
    with pytest.raises(ConvergenceError) as info:
        imputer.conditional_expectation(data)
    assert info.value.report.iterations == 1 and not info.value.report.converged


def test_no_observed_cells():
    spec = build_embedding((3, 3), 1.0)
    mask = embed_mask(np.zeros((3, 3), bool), spec)
    with pytest.raises(InvalidArgumentError):
        Imputer(np.ones(spec.z), mask)


def test_streams_and_threads_deterministic():
    _, _, mask, f, data = instance(seed=7, tau=1.2)
    imputer = Imputer(f, mask)
    a = simulate_many(imputer, data, 4, seed=11, key=(3,), threads=1)
    b = simulate_many(imputer, data, 4, seed=11, key=(3,), threads=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.field, y.field)
    assert not np.array_equal(a[0].field, a[1].field)
    assert np.array_equal(stream(5, 1, 2).random(3), stream(5, 1, 2).random(3))
    assert not np.array_equal(stream(5, 1, 2).random(3), stream(5, 2, 1).random(3))


def test_conditional_sd_flat_and_empty():
    _, spec, mask, _, data = instance(seed=8, tau=1.2)
    sd = conditional_sd(data, mask, np.full(spec.z, 4.0), n_sims=400, seed=1)
    assert sd.shape == (mask.n_missing,)
    assert abs(np.mean(sd) - 2.0) < 0.05
    full = embed_mask(np.ones((6, 6), bool), build_embedding((6, 6), 1.0))
    assert conditional_sd(np.ones(36) + np.arange(36), full, np.ones((6, 6)), n_sims=3).size == 0
    with pytest.raises(InvalidArgumentError):
        conditional_sd(data, mask, np.full(spec.z, 4.0), n_sims=1)


def test_conditional_sd_matches_dense():
    _, _, mask, f, data = instance(seed=9)
    n = 4000
    sd = conditional_sd(data, mask, f, n_sims=n, cfg=TIGHT, seed=3)
    _, cov = dense_kriging(f, mask.observed, data)
    truth = np.sqrt(np.diag(cov))
    # sd of a sample sd of Gaussians is about sigma / sqrt(2 n)
    assert np.all(np.abs(sd - truth) < 5 * truth / np.sqrt(2 * n))
