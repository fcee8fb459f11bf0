"""Comparison estimators and the large-sample error decompositions of two of them.

* difference-in-differences;
* horizontal regression of ``Y_0`` on ``Y_pre`` across control units;
* vertical regression of the treated-average path on control paths
  across pre-periods (unconstrained synthetic control);
* a four-step factor imputation (eigenvectors of a cell-averaged
  second-moment matrix, then a cross-sectional regression).

The regression estimators carry errors-in-variables bias when only one
panel dimension grows. :func:`bias_oracle_horizontal` and
:func:`bias_oracle_vertical` evaluate that bias and the accompanying
noise term on a realized draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .dgp import FactorDgpConfig, GroundTruth
from .exceptions import (
    ConfigInvalid,
    DegenerateGroup,
    DomainError,
    EigenFailure,
    RankTooLarge,
    SingularConfounderCov,
    SingularDesign,
    SingularVbar,
)
from .panel import PanelDataset

__all__ = [
    "BaselineEstimate",
    "BiasOracleResult",
    "estimate_did",
    "estimate_horizontal",
    "estimate_vertical",
    "estimate_factor4step",
    "bias_oracle_horizontal",
    "bias_oracle_vertical",
    "horizontal_limit",
]


@dataclass(frozen=True)
class BaselineEstimate:
    """Point estimate of a baseline with its fitted pieces.

    ``coefficients`` holds ``theta`` (horizontal), ``w`` (vertical) or the
    factor pieces ``u_tilde`` and ``v0_tilde``. ``flags`` records
    fallbacks such as a ridge-regularized vertical regression.
    """

    gamma_hat: float
    method: str
    coefficients: dict = field(default_factory=dict)
    flags: tuple = ()

    def __post_init__(self):
        if not np.isfinite(self.gamma_hat):
            raise SingularDesign(f"{self.method}: non-finite estimate")


@dataclass(frozen=True)
class BiasOracleResult:
    """Large-sample error decomposition ``gamma_hat - gamma^S ~ bias + variance``."""

    bias_term: float
    variance_term: float
    bias_upper_bound: float

    @property
    def total(self) -> float:
        return self.bias_term + self.variance_term


def _groups(data: PanelDataset):
    t, c = data.treatment == 1.0, data.treatment == 0.0
    if not t.any():
        raise DegenerateGroup("no treated units: N1 = 0")
    if not c.any():
        raise DegenerateGroup("no control units: N0 = 0")
    return t, c


def estimate_did(data: PanelDataset) -> BaselineEstimate:
    """Treated pre mean minus control pre mean plus control target mean."""
    t, c = _groups(data)
    pre_t = data.y_pre[t].mean()
    pre_c = data.y_pre[c].mean()
    gamma = pre_t - pre_c + data.y_target[c].mean()
    return BaselineEstimate(float(gamma), "did", {"theta1": np.full(data.n_pre, 1.0 / data.n_pre)})


def _gram_solve(gram: np.ndarray, rhs: np.ndarray, ridge: float, what: str) -> np.ndarray:
    gram = gram.copy()
    gram[np.diag_indices_from(gram)] += ridge
    return numerics.solve_spd(gram, rhs, exc=SingularDesign, check_rank=True)


def estimate_horizontal(data: PanelDataset, ridge: float = 0.0, intercept: bool = False) -> BaselineEstimate:
    """Regress control ``Y_0`` on ``(Y_pre, X)`` and average the fit over treated units.

    No intercept is added unless ``intercept=True``.
    """
    if ridge < 0 or not np.isfinite(ridge):
        raise DomainError("ridge must be finite and non-negative")
    t, c = _groups(data)
    reg = np.hstack([data.y_pre, data.covariates])
    if intercept:
        reg = np.hstack([reg, np.ones((data.n_units, 1))])
    rc = reg[c]
    if ridge == 0 and rc.shape[0] <= rc.shape[1]:
        raise SingularDesign(f"need N0 > {rc.shape[1]} regressors, got N0 = {rc.shape[0]}")
    theta = _gram_solve(rc.T @ rc, rc.T @ data.y_target[c], ridge, "horizontal")
    gamma = float(reg[t].mean(axis=0) @ theta)
    return BaselineEstimate(gamma, "horizontal", {"theta": theta})


def estimate_vertical(data: PanelDataset, ridge: float | None = None, intercept: bool = False) -> BaselineEstimate:
    """Regress the treated-average pre path on control pre paths across time.

    Without ``ridge`` the plain least-squares weights need ``T0 > N0``;
    otherwise a small ridge ``1e-6 * trace / N0`` is used and flagged.
    """
    t, c = _groups(data)
    yc = data.y_pre[c]  # N0 x T0
    target = data.y_pre[t].mean(axis=0)
    y0c = data.y_target[c]
    if intercept:
        yc = np.vstack([yc, np.ones((1, data.n_pre))])
        y0c = np.concatenate([y0c, [1.0]])
    gram = yc @ yc.T
    flags = []
    if ridge is None:
        if data.n_pre > yc.shape[0]:
            ridge = 0.0
        else:
            ridge = 1e-6 * np.trace(gram) / gram.shape[0]
            flags.append("ridge_fallback")
    elif ridge < 0:
        raise DomainError("ridge must be non-negative")
    w = _gram_solve(gram, yc @ target, ridge, "vertical")
    return BaselineEstimate(float(w @ y0c), "vertical", {"w": w, "ridge": ridge}, tuple(flags))


def estimate_factor4step(data: PanelDataset, r: int) -> BaselineEstimate:
    """Four-step factor imputation.

    1. ``Sigma_ij`` averages ``Y_it Y_jt`` over ``t = -T0..0`` for two
       control units and over ``t = -T0..-1`` otherwise;
    2. top-``r`` eigenvectors ``U~`` of ``Sigma / N``;
    3. ``V~_0`` from regressing control ``Y_0`` on ``U~``;
    4. treated average of ``U~_i' V~_0``.
    """
    t, c = _groups(data)
    n, t0 = data.n_units, data.n_pre
    if r < 1 or r > min(n, t0):
        raise RankTooLarge(f"r = {r} exceeds min(N, T0) = {min(n, t0)}")
    if c.sum() < r:
        raise RankTooLarge(f"r = {r} exceeds N0 = {int(c.sum())}")
    yp = data.y_pre
    sigma = yp @ yp.T / t0
    ci = np.flatnonzero(c)
    ypc = yp[ci]
    y0c = data.y_target[ci]
    sigma[np.ix_(ci, ci)] = (ypc @ ypc.T + np.outer(y0c, y0c)) / (t0 + 1)
    try:
        vals, vecs = np.linalg.eigh(sigma / n)
    except np.linalg.LinAlgError as err:
        raise EigenFailure(str(err)) from err
    if not np.all(np.isfinite(vals)):
        raise EigenFailure("non-finite eigenvalues")
    u_tilde = vecs[:, ::-1][:, :r]
    uc = u_tilde[ci]
    v0 = _gram_solve(uc.T @ uc, uc.T @ y0c, 0.0, "factor")
    gamma = float(u_tilde[t].mean(axis=0) @ v0)
    return BaselineEstimate(
        gamma, "factor4step", {"u_tilde": u_tilde, "v0_tilde": v0, "eigenvalues": vals[::-1][:r]}
    )


# bias oracles ------------------------------------------------------------------


def _require_factor(config) -> None:
    if not isinstance(config, FactorDgpConfig):
        raise ConfigInvalid("bias oracles need a FactorDgpConfig")


def _treated_pieces(truth: GroundTruth, config):
    if truth.treatment is None:
        raise ConfigInvalid("ground truth lacks the treatment indicator")
    t = truth.treatment == 1.0
    c = ~t
    if not t.any() or not c.any():
        raise DegenerateGroup("need both treated and control units")
    return t, c


def _noise_sigma2(config) -> float:
    if config.noise_block_corr != 0.0:
        raise ConfigInvalid("bias oracles assume serially independent noise")
    return float(config.noise_sigma) ** 2


def horizontal_limit(config: FactorDgpConfig) -> np.ndarray:
    """Probability limit (``N0 -> inf``) of the horizontal coefficients on ``(Y_pre, X)``.

    Solves the population normal equations
    ``(L S L' + D) theta = L S c0`` with ``S = E[(U;X)(U;X)' | A=0]``,
    ``L`` the map from ``(U; X)`` to ``(Y_pre; X)`` and ``D`` the noise
    covariance of the regressors.
    """
    _require_factor(config)
    t0, r, d = config.n_pre, config.n_factors, config.n_cov
    s = config.arm_moments()[0].second[1:, 1:]
    lmat = np.block([[config.loadings[:t0], config.cov_coefs[:t0]], [np.zeros((d, r)), np.eye(d)]])
    c0 = np.concatenate([config.loadings[t0], config.cov_coefs[t0]])
    noise = np.zeros((t0 + d, t0 + d))
    cov = config.noise_cov()
    noise[:t0, :t0] = cov[:t0, :t0]
    gram = lmat @ s @ lmat.T + noise
    rhs = lmat @ s @ c0 + np.concatenate([cov[:t0, t0], np.zeros(d)])
    return numerics.solve_spd(gram, rhs, exc=SingularConfounderCov)


def bias_oracle_horizontal(truth: GroundTruth, config: FactorDgpConfig) -> BiasOracleResult:
    """Limit of ``gamma_HR - gamma^S`` as ``N0`` grows with ``T0`` fixed.

    ``bias = -V0' (S V_pre'V_pre / sigma^2 + I)^{-1} U_T`` and
    ``variance = eps_T,pre' V_pre (sigma^2 S^{-1} + V_pre'V_pre)^{-1} V0 - eps_T,0``,
    where ``U_T`` and ``eps_T`` are treated averages of the realized draws
    and ``S = E[U U' | A = 0]``. Covariates are handled through the
    general limit :func:`horizontal_limit`.

    The bound is
    ``sigma^2 |U_T| |V0| / (s_min(S) s_min(V_pre)^2 - sigma^2)``
    and is reported as ``inf`` when the denominator is not positive.
    """
    _require_factor(config)
    sigma2 = _noise_sigma2(config)
    t, _ = _treated_pieces(truth, config)
    t0, r = config.n_pre, config.n_factors
    v_pre, v0 = config.loadings[:t0], config.loadings[t0]
    s_full = config.arm_moments()[0].second[1:, 1:]
    s = s_full[:r, :r]
    if np.linalg.cond(s) > 1e12:
        raise SingularConfounderCov("E[U U' | A = 0] is singular")
    u_bar = truth.confounders[t].mean(axis=0)
    eps_pre = truth.noise[t, :t0].mean(axis=0)
    eps_0 = truth.noise[t, t0].mean()
    vtv = v_pre.T @ v_pre
    if config.n_cov == 0:
        if sigma2 == 0.0:
            bias, var = 0.0, 0.0
        else:
            bias = -v0 @ np.linalg.solve(s @ vtv / sigma2 + np.eye(r), u_bar)
            var = eps_pre @ v_pre @ np.linalg.solve(sigma2 * np.linalg.inv(s) + vtv, v0) - eps_0
    else:
        theta = horizontal_limit(config)
        x_bar = truth.covariates[t].mean(axis=0)
        lin = np.concatenate([v_pre.T @ theta[:t0] - v0, config.cov_coefs[:t0].T @ theta[:t0] + theta[t0:] - config.cov_coefs[t0]])
        bias = float(lin @ np.concatenate([u_bar, x_bar]))
        var = float(eps_pre @ theta[:t0] - eps_0)
    s_min = np.linalg.svd(s, compute_uv=False)[-1]
    v_min = np.linalg.svd(v_pre, compute_uv=False)[-1] if t0 >= r else 0.0
    denom = s_min * v_min**2 - sigma2
    if sigma2 == 0.0:
        bound = 0.0
    elif denom > 0:
        bound = sigma2 / denom * np.linalg.norm(u_bar) * np.linalg.norm(v0)
    else:
        bound = float("inf")
    return BiasOracleResult(float(bias), float(var), float(bound))


def vbar(config: FactorDgpConfig) -> np.ndarray:
    """``(1/T0) sum_pre V_t V_t'``."""
    v_pre = config.loadings[: config.n_pre]
    return v_pre.T @ v_pre / config.n_pre


def bias_oracle_vertical(truth: GroundTruth, config: FactorDgpConfig) -> BiasOracleResult:
    """Limit of ``gamma_VR - gamma^S`` as ``T0`` grows with the control units fixed.

    Conditional on the realized confounders,
    ``bias = -V0' (U_C'U_C Vbar / sigma^2 + I)^{-1} U_T`` and
    ``variance = eps_C0' U_C (U_C'U_C + sigma^2 Vbar^{-1})^{-1} U_T - eps_T,0``.
    The bound
    ``sigma^2 |V0| |U_T| / (N0 (s_min(U_C'U_C/N0) s_min(Vbar) - sigma^2/N0))``
    shrinks like ``1/N0``.
    """
    _require_factor(config)
    if config.n_cov and np.any(config.cov_coefs != 0):
        raise ConfigInvalid("vertical oracle assumes no covariate effects")
    sigma2 = _noise_sigma2(config)
    t, c = _treated_pieces(truth, config)
    t0, r = config.n_pre, config.n_factors
    v0 = config.loadings[t0]
    vb = vbar(config)
    if numerics.rank_estimate(vb) < r:
        raise SingularVbar("average pre-period loading outer product is singular")
    uc = truth.confounders[c]
    u_bar = truth.confounders[t].mean(axis=0)
    eps_c0 = truth.noise[c, t0]
    eps_0 = truth.noise[t, t0].mean()
    utu = uc.T @ uc
    n0 = uc.shape[0]
    if sigma2 == 0.0:
        bias = 0.0
        var = eps_c0 @ uc @ np.linalg.solve(utu, u_bar) - eps_0
        bound = 0.0
    else:
        bias = -v0 @ np.linalg.solve(utu @ vb / sigma2 + np.eye(r), u_bar)
        var = eps_c0 @ uc @ np.linalg.solve(utu + sigma2 * np.linalg.inv(vb), u_bar) - eps_0
        s_u = np.linalg.svd(utu / n0, compute_uv=False)[-1]
        s_v = np.linalg.svd(vb, compute_uv=False)[-1]
        denom = s_u * s_v - sigma2 / n0
        bound = sigma2 / (n0 * denom) * np.linalg.norm(v0) * np.linalg.norm(u_bar) if denom > 0 else float("inf")
    return BiasOracleResult(float(bias), float(var), float(bound))
