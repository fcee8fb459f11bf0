from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from minbridge import numerics
from minbridge.exceptions import DomainError, NonFiniteInput, NonPositiveDefiniteWeight, SingularSystem


def test_pinv_examples():
    np.testing.assert_array_equal(numerics.pinv(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(numerics.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    with pytest.raises(NonFiniteInput):
        numerics.pinv([[1.0, np.inf]])


@st.composite
def low_rank(draw):
    m = draw(st.integers(1, 8))
    n = draw(st.integers(1, 8))
    rank = draw(st.integers(0, min(m, n)))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return rng.normal(size=(m, rank)) @ rng.normal(size=(rank, n)), rank


@settings(max_examples=200, deadline=None)
@given(low_rank())
def test_penrose_conditions(case):
    a, rank = case
    ap = numerics.pinv(a)
    na, nap = max(1.0, np.linalg.norm(a)), max(1.0, np.linalg.norm(ap))
    assert np.linalg.norm(a @ ap @ a - a) <= 1e-8 * na * max(1.0, na * nap)
    assert np.linalg.norm(ap @ a @ ap - ap) <= 1e-8 * nap * max(1.0, na * nap)
    assert np.linalg.norm(a @ ap - (a @ ap).T) <= 1e-8 * max(1.0, na * nap)
    assert np.linalg.norm(ap @ a - (ap @ a).T) <= 1e-8 * max(1.0, na * nap)
    assert numerics.rank_estimate(a) == rank


def test_svd_reconstructs():
    a = np.random.default_rng(1).normal(size=(5, 3))
    f = numerics.svd(a)
    assert np.all(np.diff(f.s) <= 0) and np.all(f.s >= 0)
    assert np.linalg.norm(f.reconstruct() - a) <= 1e-10 * np.linalg.norm(a)


def test_rank_examples():
    assert numerics.rank_estimate(np.eye(3)) == 3
    assert numerics.rank_estimate(np.outer([1.0, 2.0, 3.0], [4.0, -1.0])) == 1
    a = np.array([[1.0, 1.0], [1.0, 1.0 + 1e-15]])
    # the exact singular values are about 2 and 2.5e-16, far below the 2e-12 relative cutoff
    s = np.linalg.svd(a, compute_uv=False)
    assert s[1] / s[0] < numerics.default_rtol(a.shape)
    assert numerics.rank_estimate(a) == 1


def test_ridge_examples():
    np.testing.assert_allclose(numerics.ridge_solve(np.eye(2), np.eye(2), [2.0, 4.0], 1.0), [1.0, 2.0])
    np.testing.assert_allclose(numerics.ridge_solve([[1.0, 1.0]], [[1.0]], [1.0], 1e-10), [0.5, 0.5], atol=1e-8)
    rng = np.random.default_rng(5)
    k, b = rng.normal(size=(5, 4)), rng.normal(size=5)
    target = np.linalg.pinv(k) @ b
    np.testing.assert_allclose(numerics.ridge_solve(k, np.eye(5), b, 1e-8), target, atol=1e-4)


def test_ridge_errors():
    with pytest.raises(SingularSystem):
        numerics.ridge_solve([[1.0, 1.0]], [[1.0]], [1.0], 0.0)
    with pytest.raises(NonPositiveDefiniteWeight):
        numerics.ridge_solve(np.eye(2), np.diag([1.0, -1.0]), [1.0, 1.0], 1.0)
    with pytest.raises(NonPositiveDefiniteWeight):
        numerics.ridge_solve(np.eye(2), [[1.0, 0.5], [0.0, 1.0]], [1.0, 1.0], 1.0)
    with pytest.raises(DomainError):
        numerics.ridge_solve(np.eye(2), np.eye(2), [1.0, 1.0], -1.0)


def test_ridge_uses_weight():
    rng = np.random.default_rng(8)
    k, b = rng.normal(size=(4, 2)), rng.normal(size=4)
    a = rng.normal(size=(4, 4))
    w = a @ a.T + np.eye(4)
    expected = np.linalg.solve(k.T @ w @ k + 0.3 * np.eye(2), k.T @ w @ b)
    np.testing.assert_allclose(numerics.ridge_solve(k, w, b, 0.3), expected, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ridge_to_pinv_continuity(seed):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(4, 2)) @ rng.normal(size=(2, 5))
    b = rng.normal(size=4)
    target = numerics.pinv(k) @ b
    lams = np.logspace(-8, -2, 13)
    dist = np.array([np.linalg.norm(numerics.ridge_solve(k, np.eye(4), b, lam) - target) for lam in lams])
    assert np.all(np.diff(dist) > 0)
    slope = dist / lams
    # linear in lambda: the ratio is bounded by the fitted constant at the smallest lambda
    assert np.all(slope <= 1.01 * slope[0] + 1e-6)


def test_quantile_examples():
    assert numerics.normal_quantile(0.5) == 0.0
    assert abs(numerics.normal_quantile(0.975) - 1.959964) <= 1e-6
    # 1 - 0.975 is not exactly 0.025 in binary, hence the tiny tolerance
    assert numerics.normal_quantile(0.025) == pytest.approx(-numerics.normal_quantile(0.975), abs=1e-14)
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(DomainError):
            numerics.normal_quantile(p)


def test_quantile_against_erf_inversion():
    p = np.concatenate([np.logspace(-15, -1, 60), np.linspace(0.01, 0.99, 99)])
    p = np.concatenate([p, 1 - p])
    exact = -np.sqrt(2.0) * special.erfcinv(2.0 * p)
    got = np.array([numerics.normal_quantile(float(q)) for q in p])
    assert np.max(np.abs(got - exact)) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5))
def test_quantile_inverts_cdf(x):
    assert abs(numerics.normal_quantile(float(stats.norm.cdf(x))) - x) <= 1e-7
