import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbmlab.env_field import (
    CovarianceKernel,
    clamp_env,
    dense_factor,
    eval_cov,
    factorize,
    lowrank_factor,
    sample_field,
)
from sbmlab.errors import FactorizationFailure
from sbmlab.streams import derive_stream

KERNELS = [
    CovarianceKernel.constant(0.5),
    CovarianceKernel.squared_exponential(1.0, 1.0),
    CovarianceKernel.squared_exponential(2.0, 0.3),
    CovarianceKernel.zero(),
]

points = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=64)


def test_eval_cov_examples():
    assert eval_cov(CovarianceKernel.constant(0.5), 1.0, 7.0) == 0.5
    se = CovarianceKernel.squared_exponential(1.0, 1.0)
    assert eval_cov(se, 2.0, 2.0) == 1.0
    assert eval_cov(se, 0.0, 1.0) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert eval_cov(se, 0.0, 1.0) == pytest.approx(0.60653, abs=1e-5)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_symmetric_and_bounded(x, y):
    for k in KERNELS:
        assert eval_cov(k, x, y) == eval_cov(k, y, x)
        assert abs(eval_cov(k, x, y)) <= k.g_max


@settings(max_examples=60, deadline=None)
@given(points)
def test_pivoted_factor_reconstructs(xs):
    x = np.array(xs)
    for k in KERNELS:
        L = factorize(k, x)
        K = k.matrix(x)
        assert L.shape[0] == x.size
        assert np.max(np.abs(K - L @ L.T), initial=0.0) <= 1e-10 * max(k.g_max, 1e-300) + 1e-15


@settings(max_examples=40, deadline=None)
@given(points)
def test_dense_factor_with_jitter(xs):
    x = np.array(xs)
    for k in KERNELS[:3]:
        L = factorize(k, x, "dense")
        assert np.max(np.abs(k.matrix(x) - L @ L.T)) <= 2e-10 * k.g_max


def test_constant_kernel_rank_one_and_equal_values():
    x = np.linspace(-3, 3, 20)
    f = sample_field(CovarianceKernel.constant(0.7), x, derive_stream(0, 0, "t"))
    assert np.all(f.values == f.values[0])
    assert lowrank_factor(CovarianceKernel.constant(0.7), x).shape == (20, 1)


def test_zero_kernel_values_zero():
    f = sample_field(CovarianceKernel.zero(), np.arange(5.0), derive_stream(0, 0, "t"))
    assert np.all(f.values == 0.0)


def test_single_point_variance():
    k = CovarianceKernel.squared_exponential(1.7, 1.0)
    rng = derive_stream(3, 0, "t")
    v = np.array([sample_field(k, [0.3], rng).values[0] for _ in range(10_000)])
    # SE of the sample variance of a Gaussian: sigma^2 sqrt(2/(N-1))
    se = 1.7 * np.sqrt(2 / (v.size - 1))
    assert abs(v.var(ddof=1) - 1.7) <= 3 * se


@pytest.mark.slow
def test_empirical_covariance_matches():
    x = np.array([-1.0, -0.2, 0.0, 0.5, 2.0])
    for k in KERNELS[:3]:
        L = factorize(k, x)
        w = derive_stream(11, 0, "cov").standard_normal((100_000, L.shape[1]))
        xi = w @ L.T
        emp = xi.T @ xi / xi.shape[0]
        K = k.matrix(x)
        # entrywise SE of E[xi_i xi_j]: sqrt((K_ii K_jj + K_ij^2) / N)
        se = np.sqrt((np.outer(np.diag(K), np.diag(K)) + K * K) / xi.shape[0])
        assert np.all(np.abs(emp - K) <= 4 * se + 1e-12)


def test_epochs_independent():
    k = CovarianceKernel.squared_exponential(1.0, 1.0)
    a = np.array([sample_field(k, [0.0], derive_stream(5, 0, "e")).values[0]])
    draws0, draws1 = [], []
    r0, r1 = derive_stream(5, 0, "epoch"), derive_stream(5, 1, "epoch")
    for _ in range(20_000):
        draws0.append(sample_field(k, [0.0], r0).values[0])
        draws1.append(sample_field(k, [0.0], r1).values[0])
    assert a.size == 1
    assert abs(np.corrcoef(draws0, draws1)[0, 1]) <= 4 / np.sqrt(20_000)


def test_clamp_examples():
    assert clamp_env(2.0, 1) == 1.0
    assert clamp_env(0.0, 4) == 0.0
    assert clamp_env(-5.0, 4) == -2.0
    with pytest.raises(ValueError):
        clamp_env(1.0, 0)


@given(st.floats(-100, 100), st.floats(-100, 100), st.integers(1, 400))
def test_clamp_idempotent_monotone(a, b, n):
    assert clamp_env(clamp_env(a, n), n) == clamp_env(a, n)
    lo, hi = min(a, b), max(a, b)
    assert clamp_env(lo, n) <= clamp_env(hi, n)
    assert abs(clamp_env(a, n)) <= np.sqrt(n)


def test_indefinite_custom_kernel_fails():
    bad = CovarianceKernel.custom(lambda x, y: np.cos(3 * (np.asarray(x) - np.asarray(y))) - 0.5, 1.5)
    with pytest.raises(FactorizationFailure):
        factorize(bad, np.linspace(0, 2, 9))
    with pytest.raises(FactorizationFailure):
        dense_factor(bad.matrix(np.linspace(0, 2, 9)), 1.5)
