import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from spatiodlm.kernels import (
    EXPONENTIAL,
    SQUARED_EXPONENTIAL,
    CovMatrix,
    KernelSingularError,
    gp_log_density,
    kernel_matrix,
    kernel_values,
)
from spatiodlm.model import KernelParams, ZoneGeometry


def two_zones(d):
    return ZoneGeometry(("a", "b"), [[0.0, d], [d, 0.0]])


def cov_from(K):
    K = np.asarray(K, dtype=float)
    return CovMatrix(K, 0.0, np.linalg.cholesky(K))


def test_zero_distance_gives_sigma_squared():
    assert kernel_values(0.0, KernelParams(1.7, 0.4)) == pytest.approx(1.7 ** 2)
    K = kernel_matrix(two_zones(1.0), KernelParams(1.7, 0.4))
    assert K.entries[0, 0] - K.jitter == pytest.approx(1.7 ** 2, rel=1e-15)


def test_published_scale_value():
    # 1.352^2 exp(-1.103), evaluated independently of numpy
    expected = 1.352 * 1.352 * math.exp(-1.103)
    K = kernel_matrix(two_zones(1.0), KernelParams(1.352, 1.103))
    assert K.entries[0, 1] == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.6067, abs=1e-4)


def test_large_decay_gives_independence():
    K = kernel_matrix(two_zones(2.0), KernelParams(1.3, 1e4))
    np.testing.assert_allclose(K.entries, 1.3 ** 2 * np.eye(2), atol=1e-8)


def test_squared_exponential_switch():
    K = kernel_matrix(two_zones(2.0), KernelParams(1.0, 0.5), SQUARED_EXPONENTIAL)
    assert K.entries[0, 1] == pytest.approx(math.exp(-0.5 * 4.0))
    with pytest.raises(ValueError):
        kernel_values(1.0, KernelParams(1.0, 1.0), "matern")


def test_coincident_zones_need_jitter():
    geo = ZoneGeometry(("a", "b", "c"), np.zeros((3, 3)))
    K = kernel_matrix(geo, KernelParams(1.0, 1.0))
    assert K.jitter >= 1e-9
    np.testing.assert_allclose(K.chol @ K.chol.T, K.entries, atol=1e-12)


def test_indefinite_kernel_raises():
    # a user-supplied non-metric distance matrix: a is at b and at c, but b and c are far apart
    geo = ZoneGeometry(tuple("abc"), [[0.0, 0.0, 0.0], [0.0, 0.0, 1e3], [0.0, 1e3, 0.0]])
    with pytest.raises(KernelSingularError, match="numerically singular"):
        kernel_matrix(geo, KernelParams(1.0, 1.0))


@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(0, 10_000), st.sampled_from([EXPONENTIAL, SQUARED_EXPONENTIAL]))
def test_kernel_matrix_exactly_symmetric_and_monotone(nz, seed, form):
    rng = np.random.default_rng(seed)
    geo = ZoneGeometry.from_coordinates(range(nz), rng.uniform(-83, -82, nz), rng.uniform(29, 30, nz))
    p = KernelParams(rng.uniform(0.1, 3), rng.uniform(0.01, 3))
    K = kernel_matrix(geo, p, form)
    assert np.array_equal(K.entries, K.entries.T)
    d = np.sort(geo.distances.ravel())
    vals = kernel_values(d, p, form)
    assert np.all(np.diff(vals) <= 0)


def test_standard_normal_at_mode():
    assert gp_log_density([0.3], [0.3], cov_from([[1.0]])) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_diagonal_covariance_factorizes():
    x = np.array([0.2, -1.0, 3.0])
    s2 = 2.5
    expected = sum(-0.5 * math.log(2 * math.pi * s2) - 0.5 * v * v / s2 for v in x)
    assert gp_log_density(x, 0.0, cov_from(s2 * np.eye(3))) == pytest.approx(expected, rel=1e-13)


def test_dense_three_zone_against_explicit_inverse():
    rng = np.random.default_rng(3)
    geo = ZoneGeometry.from_coordinates("abc", rng.uniform(-83, -82, 3), rng.uniform(29, 30, 3))
    K = kernel_matrix(geo, KernelParams(1.2, 0.05))
    x, mu = rng.normal(size=3), rng.normal(size=3)
    r = x - mu
    S = np.array(K.entries)
    expected = -0.5 * (3 * math.log(2 * math.pi) + math.log(np.linalg.det(S)) + r @ np.linalg.inv(S) @ r)
    assert gp_log_density(x, mu, K) == pytest.approx(expected, rel=1e-10)


def test_density_maximised_at_mean():
    K = kernel_matrix(two_zones(0.7), KernelParams(1.0, 1.0))
    mu = np.array([1.5, 1.5])
    top = gp_log_density(mu, mu, K)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert gp_log_density(mu + rng.normal(size=2), mu, K) < top


def test_density_integrates_to_one_1d():
    c = cov_from([[0.7]])
    val, _ = integrate.quad(lambda x: math.exp(gp_log_density([x], [0.4], c)), -np.inf, np.inf)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_density_integrates_to_one_2d():
    K = kernel_matrix(two_zones(0.5), KernelParams(0.8, 1.0))
    f = lambda y, x: math.exp(gp_log_density([x, y], [0.0, 0.0], K))
    val, _ = integrate.dblquad(f, -8, 8, -8, 8, epsabs=1e-10)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_logdet_matches_numpy():
    K = kernel_matrix(two_zones(0.3), KernelParams(1.1, 2.0))
    assert K.logdet() == pytest.approx(np.linalg.slogdet(K.entries)[1], rel=1e-12)
