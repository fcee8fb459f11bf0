from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate, stats

from minbridge import (
    FactorDgpConfig,
    PanelDataset,
    SelectionModel,
    bias_oracle_horizontal,
    bias_oracle_vertical,
    bridge_set,
    build_moment_system,
    estimate_did,
    estimate_factor4step,
    estimate_horizontal,
    estimate_treated_mean,
    estimate_vertical,
    simulate_factor,
    simulate_twfe,
    twfe_config,
)
from minbridge.exceptions import DegenerateGroup, RankTooLarge, SingularDesign, SingularVbar


def _panel(a, y_pre, y0, y_post=None, x=None):
    a = np.asarray(a, float)
    n = a.size
    y_pre = np.asarray(y_pre, float).reshape(n, -1)
    y_post = np.zeros((n, 1)) if y_post is None else y_post
    x = np.zeros((n, 0)) if x is None else x
    return PanelDataset(a, x, y_pre, np.asarray(y0, float), y_post)


def _scalar_config(n_units, sigma, loadings=(1.0, 1.0, 1.0, 1.0), n_pre=2, coef_u=0.8):
    t = len(loadings)
    return FactorDgpConfig(
        n_units=n_units,
        n_pre=n_pre,
        n_post=t - n_pre - 1,
        loadings=np.asarray(loadings, float)[:, None],
        confounder_mean=[1.0],
        noise_sigma=sigma,
        selection=SelectionModel(coef_u=[coef_u]),
    )


# difference in differences ---------------------------------------------------


def test_did_single_period_example():
    assert estimate_did(_panel([0, 1], [[1.0], [3.0]], [2.0, 0.0])).gamma_hat == 4.0


def test_did_two_by_two_hand_sums():
    y_pre = [[1.0, 2.0], [3.0, 5.0], [4.0, 4.0], [6.0, 9.0]]
    data = _panel([0, 0, 1, 1], y_pre, [2.0, 4.0, 0.0, 0.0])
    # treated pre mean 23/4, control pre mean 11/4, control target mean 3
    assert estimate_did(data).gamma_hat == pytest.approx(23 / 4 - 11 / 4 + 3, abs=1e-14)
    with pytest.raises(DegenerateGroup):
        estimate_did(_panel([1, 1], [[1.0], [2.0]], [0.0, 0.0]))


def test_did_exact_under_parallel_trends():
    cfg = twfe_config(500, 4, 2, time_effects=[0.1, 0.5, -0.2, 0.3, 1.0, 0.4, 0.0], noise_sigma=0.0)
    data, truth = simulate_twfe(cfg, 3)
    assert estimate_did(data).gamma_hat == pytest.approx(truth.gamma_true_sample, abs=1e-10)


def test_did_equals_frozen_bridge_plus_intercept():
    data, _ = simulate_factor(_scalar_config(300, 1.0), 4)
    system = build_moment_system(data)
    t0 = data.n_pre
    theta = np.full(t0, 1.0 / t0)
    c = data.treatment == 0
    intercept = data.y_target[c].mean() - data.y_pre[c].mean()
    assert estimate_treated_mean(system, theta) + intercept == pytest.approx(estimate_did(data).gamma_hat, abs=1e-10)


# horizontal regression ---------------------------------------------------------


def test_horizontal_orthonormal_design():
    q = np.linalg.qr(np.random.default_rng(0).normal(size=(6, 3)))[0]
    y_pre = np.vstack([q, [[0.5, 1.0, -1.0], [1.5, 0.0, 2.0]]])
    data = _panel([0] * 6 + [1, 1], y_pre, np.concatenate([q[:, 0], [0.0, 0.0]]))
    res = estimate_horizontal(data)
    np.testing.assert_allclose(res.coefficients["theta"], [1.0, 0.0, 0.0], atol=1e-12)
    assert res.gamma_hat == pytest.approx(1.0, abs=1e-12)


def test_horizontal_needs_more_controls_than_regressors():
    data = _panel([0, 0, 1], [[1.0, 2.0], [2.0, 1.0], [0.0, 0.0]], [1.0, 1.0, 0.0])
    with pytest.raises(SingularDesign):
        estimate_horizontal(data)
    assert np.isfinite(estimate_horizontal(data, ridge=0.1).gamma_hat)


def test_horizontal_exact_when_noiseless_and_just_identified():
    cfg = FactorDgpConfig(
        n_units=400, n_pre=2, n_post=2, loadings=np.random.default_rng(1).normal(size=(5, 2)),
        noise_sigma=0.0, selection=SelectionModel(coef_u=[0.5, -0.5]),
    )
    data, truth = simulate_factor(cfg, 5)
    assert estimate_horizontal(data).gamma_hat == pytest.approx(truth.gamma_true_sample, abs=1e-8)


def test_horizontal_matches_bias_decomposition():
    cfg = _scalar_config(100_000, 1.0, loadings=(0.6, 0.5, 0.7, 0.6, 0.8))
    gaps = []
    for seed in range(20):
        data, truth = simulate_factor(cfg, 300 + seed)
        orc = bias_oracle_horizontal(truth, cfg)
        gaps.append(estimate_horizontal(data).gamma_hat - truth.gamma_true_sample - orc.total)
    gaps = np.asarray(gaps)
    assert abs(gaps.mean()) <= 3 * gaps.std(ddof=1) / math.sqrt(gaps.size)


# vertical regression -----------------------------------------------------------


def test_vertical_single_matching_control():
    path = [[1.0, 2.0, 4.0]]
    data = _panel([0, 1, 1], np.vstack([path, [[0.0, 1.0, 5.0]], [[2.0, 3.0, 3.0]]]), [7.0, 0.0, 0.0])
    res = estimate_vertical(data)
    np.testing.assert_allclose(res.coefficients["w"], [1.0], atol=1e-12)
    assert res.gamma_hat == pytest.approx(7.0, abs=1e-12)
    assert res.flags == ()


def test_vertical_ridge_fallback_is_flagged():
    data = _panel([0, 0, 0, 1], [[1.0], [2.0], [3.0], [4.0]], [1.0, 2.0, 3.0, 0.0])
    assert "ridge_fallback" in estimate_vertical(data).flags


def test_vertical_exact_when_noiseless_and_just_identified():
    r = 2
    cfg = FactorDgpConfig(
        n_units=60, n_pre=8, n_post=1, loadings=np.random.default_rng(2).normal(size=(10, r)),
        noise_sigma=0.0, selection=SelectionModel(coef_u=[0.3, 0.2]),
    )
    data, truth = simulate_factor(cfg, 6)
    keep = np.concatenate([np.flatnonzero(data.treatment == 0)[:r], np.flatnonzero(data.treatment == 1)])
    sub, tsub = data.subset(keep), truth.subset(keep)
    assert estimate_vertical(sub).gamma_hat == pytest.approx(tsub.gamma_true_sample, abs=1e-8)


# factor imputation --------------------------------------------------------------


def test_factor4step_rank_one_recovery():
    rng = np.random.default_rng(3)
    u = rng.normal(size=30) + 2.0
    v = rng.normal(size=7) + 1.0
    # the control block of Sigma averages over T0+1 periods and the rest over T0;
    # Sigma stays exactly rank one when v_0^2 equals the pre-period mean of v_t^2
    v[5] = np.sqrt(np.mean(v[:5] ** 2))
    y = np.outer(u, v)
    a = np.zeros(30)
    a[:5] = 1.0
    data = PanelDataset(a, np.zeros((30, 0)), y[:, :5], y[:, 5], y[:, 6:])
    res = estimate_factor4step(data, 1)
    assert res.gamma_hat == pytest.approx(np.mean(u[:5] * v[5]), abs=1e-8)
    # sign of the eigenvector is absorbed by the regression step
    fitted = res.coefficients["u_tilde"] @ res.coefficients["v0_tilde"]
    np.testing.assert_allclose(fitted, u * v[5], atol=1e-8)


def test_factor4step_rank_too_large():
    data = _panel([0, 0, 1], [[1.0, 2.0], [2.0, 1.0], [0.0, 3.0]], [1.0, 1.0, 0.0])
    with pytest.raises(RankTooLarge):
        estimate_factor4step(data, 3)
    with pytest.raises(RankTooLarge):
        estimate_factor4step(data, 0)


@pytest.mark.slow
def test_factor4step_error_shrinks_with_panel_size():
    errs = {}
    for size in (50, 200):
        rng = np.random.default_rng(size)
        cfg = FactorDgpConfig(
            n_units=size, n_pre=size, n_post=1, loadings=1.0 + 0.5 * rng.normal(size=(size + 2, 1)),
            confounder_mean=[1.0], selection=SelectionModel(coef_u=[0.5]),
        )
        vals = []
        for seed in range(200):
            data, truth = simulate_factor(cfg, seed)
            a = data.treatment == 1
            eps_t0 = truth.noise[a, size].mean()
            vals.append(abs(estimate_factor4step(data, 1).gamma_hat - truth.gamma_true_sample + eps_t0))
        errs[size] = float(np.mean(vals))
    assert errs[200] < errs[50]


# bias oracles -------------------------------------------------------------------


def test_bias_oracles_vanish_without_noise():
    cfg = _scalar_config(2000, 0.0)
    _, truth = simulate_factor(cfg, 7)
    hr = bias_oracle_horizontal(truth, cfg)
    vr = bias_oracle_vertical(truth, cfg)
    assert hr.bias_term == 0.0 and hr.bias_upper_bound == 0.0
    assert vr.bias_term == 0.0


def test_horizontal_bias_shrinks_with_loading_scale():
    base = np.array([0.6, 0.5, 0.7, 0.6, 0.8])
    prev_bias = prev_bound = np.inf
    for c in (1.0, 2.0, 4.0):
        cfg = _scalar_config(5000, 1.0, loadings=tuple(c * base))
        _, truth = simulate_factor(cfg, 8)
        res = bias_oracle_horizontal(truth, cfg)
        assert abs(res.bias_term) < prev_bias
        # at c=1 the bound's denominator is negative and the bound is infinite
        assert res.bias_upper_bound < prev_bound or np.isinf(prev_bound) and np.isinf(res.bias_upper_bound)
        if np.isfinite(res.bias_upper_bound):
            assert abs(res.bias_term) <= res.bias_upper_bound + 1e-10
        prev_bias, prev_bound = abs(res.bias_term), res.bias_upper_bound


def _control_second_moment(coef_u, mean=1.0):
    # E[U^2 | A=0] for U ~ N(mean, 1) and P(A=1|U) = logistic(coef_u U) clipped to [0.01, 0.99]
    def f(u, k):
        p1 = np.clip(stats.logistic.cdf(coef_u * u), 0.01, 0.99)
        return u**k * (1.0 - p1) * stats.norm.pdf(u, loc=mean)

    kinks = [stats.logistic.ppf(0.01) / coef_u, stats.logistic.ppf(0.99) / coef_u]
    opts = dict(points=kinks, epsabs=1e-14, epsrel=1e-13, limit=200)
    p0 = integrate.quad(f, -15, 15, args=(0,), **opts)[0]
    return integrate.quad(f, -15, 15, args=(2,), **opts)[0] / p0


def test_horizontal_scalar_hand_check():
    sigma2 = 1.5
    cfg = _scalar_config(3000, math.sqrt(sigma2), loadings=(0.9, 1.1, 1.3, 1.0, 1.0))
    _, truth = simulate_factor(cfg, 9)
    a = truth.treatment == 1
    u_bar = truth.confounders[a, 0].mean()
    s = _control_second_moment(0.8)
    vv = 0.9**2 + 1.1**2
    expected = -1.3 * u_bar / (s * vv / sigma2 + 1.0)
    bound = sigma2 / (s * min(vv, vv) - sigma2) * abs(u_bar) * 1.3
    res = bias_oracle_horizontal(truth, cfg)
    assert res.bias_term == pytest.approx(expected, rel=1e-7)
    assert res.bias_upper_bound == pytest.approx(bound, rel=1e-7)


def test_vertical_scalar_hand_check():
    sigma2 = 0.5
    cfg = _scalar_config(50, math.sqrt(sigma2), loadings=(0.9, 1.1, 1.3, 1.0, 1.0), n_pre=3)
    _, truth = simulate_factor(cfg, 10)
    a = truth.treatment == 1
    uc = truth.confounders[~a, 0]
    u_bar = truth.confounders[a, 0].mean()
    vb = (0.9**2 + 1.1**2 + 1.3**2) / 3
    expected = -1.0 * u_bar / (uc @ uc * vb / sigma2 + 1.0)
    assert bias_oracle_vertical(truth, cfg).bias_term == pytest.approx(expected, rel=1e-12)


def test_vertical_bound_halves_with_twice_the_controls():
    cfg = _scalar_config(8000, 1.0, loadings=(0.9, 1.1, 1.3, 1.0, 1.0), n_pre=3)
    _, truth = simulate_factor(cfg, 11)
    ctrl = np.flatnonzero(truth.treatment == 0)
    trt = np.flatnonzero(truth.treatment == 1)
    small = truth.subset(np.concatenate([ctrl[:1000], trt]))
    big = truth.subset(np.concatenate([ctrl[:2000], trt]))
    b_small = bias_oracle_vertical(small, cfg)
    b_big = bias_oracle_vertical(big, cfg)
    assert b_big.bias_upper_bound / b_small.bias_upper_bound == pytest.approx(0.5, rel=0.1)
    for res in (b_small, b_big):
        assert abs(res.bias_term) <= res.bias_upper_bound + 1e-10


def test_vertical_oracle_needs_full_rank_vbar():
    cfg = dataclasses.replace(
        _scalar_config(100, 1.0), loadings=np.array([[1.0, 2.0]] * 4), confounder_mean=[1.0, 0.0],
        confounder_cov=np.eye(2), selection=SelectionModel(coef_u=[0.1, 0.1]),
    )
    _, truth = simulate_factor(cfg, 0)
    with pytest.raises(SingularVbar):
        bias_oracle_vertical(truth, cfg)


def test_bridge_elements_are_exact_on_noiseless_baseline_design():
    # the horizontal coefficient at sigma=0 and T0=r is the unique bridge element
    cfg = _scalar_config(500, 0.0, loadings=(1.2, 0.9, 1.0, 1.0), n_pre=1)
    data, _ = simulate_factor(cfg, 12)
    theta = estimate_horizontal(data).coefficients["theta"]
    np.testing.assert_allclose(theta, bridge_set(cfg).particular.theta1, atol=1e-10)
