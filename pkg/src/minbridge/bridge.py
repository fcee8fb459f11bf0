"""Minimal-bridge regularized GMM for the counterfactual mean of the treated.

The bridge coefficient ``theta = (theta1, theta2)`` maps pre-treatment
outcomes and covariates ``W = (Y_pre, X)`` to a surrogate of ``Y_0(0)``.
It is estimated from the control-unit moment

    m(O; theta) = (1 - A) (Y_0 - W'theta) Z,   Z = (Y_post, X),

by ridge-penalized GMM, which converges to the minimum-norm element of
the (generally non-unique) set of valid coefficients. The counterfactual
mean is then the treated average of ``W'theta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from . import numerics
from .exceptions import (
    DegenerateGroup,
    DimensionMismatch,
    DomainError,
    ExponentOutOfWindow,
    SingularPenalizedSystem,
)
from .panel import PanelDataset

__all__ = [
    "MomentSystem",
    "BridgeCoefficients",
    "Identity",
    "Fixed",
    "OptimalTwoStage",
    "JointWeight",
    "EstimateResult",
    "build_moment_system",
    "default_lambda",
    "fit_bridge",
    "fit_bridge_weighted_M",
    "resolve_weight",
    "estimate_treated_mean",
    "influence_components",
    "influence_values",
    "variance_and_ci",
    "estimate_bridge",
    "fit_two_stage",
    "estimate_population_mean",
]


@dataclass(frozen=True)
class BridgeCoefficients:
    """Bridge weights on pre-treatment outcomes (``theta1``) and covariates (``theta2``)."""

    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        t1 = np.asarray(self.theta1, dtype=float).reshape(-1)
        t2 = np.asarray(self.theta2, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t2))):
            raise DomainError("bridge coefficients must be finite")
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", t2)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2])

    @classmethod
    def from_vector(cls, vec, n_pre: int) -> "BridgeCoefficients":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        return cls(vec[:n_pre], vec[n_pre:])


@dataclass(frozen=True)
class MomentSystem:
    """Sample moment matrices of the bridge GMM problem.

    ``k_hat = E_n[(1-A) Z W']`` and ``b_hat = E_n[(1-A) Z Y_0]`` are plain
    averages over all ``n`` units. The per-unit arrays are kept so that
    influence values and moment covariances can be formed later.
    """

    k_hat: np.ndarray
    b_hat: np.ndarray
    treated_w_mean: np.ndarray
    p_treated: float
    n: int
    n_pre: int
    w_tilde: np.ndarray = field(repr=False)
    z_tilde: np.ndarray = field(repr=False)
    y0: np.ndarray = field(repr=False)
    treatment: np.ndarray = field(repr=False)

    @property
    def dim_theta(self) -> int:
        return self.k_hat.shape[1]

    @property
    def dim_moment(self) -> int:
        return self.k_hat.shape[0]

    @property
    def w_mean(self) -> np.ndarray:
        """``E_n[W]`` over all units."""
        return self.w_tilde.mean(axis=0)

    def residuals(self, theta) -> np.ndarray:
        """``(1 - A)(Y_0 - W'theta)`` per unit."""
        vec = _theta_vector(theta, self.dim_theta)
        return (1.0 - self.treatment) * (self.y0 - self.w_tilde @ vec)

    def unit_moments(self, theta) -> np.ndarray:
        """Per-unit ``m(O_i; theta)``, shape ``(n, T1 + d)``."""
        return self.residuals(theta)[:, None] * self.z_tilde

    def moment_mean(self, theta) -> np.ndarray:
        return self.b_hat - self.k_hat @ _theta_vector(theta, self.dim_theta)

    def moment_cov(self, theta) -> np.ndarray:
        """Uncentred ``E_n[m m']``."""
        m = self.unit_moments(theta)
        out = m.T @ m / self.n
        return 0.5 * (out + out.T)


def _theta_vector(theta, dim: int) -> np.ndarray:
    vec = theta.vector if isinstance(theta, BridgeCoefficients) else np.asarray(theta, float).reshape(-1)
    if vec.size != dim:
        raise DimensionMismatch(f"theta has length {vec.size}, expected {dim}")
    return vec


def build_moment_system(data: PanelDataset) -> MomentSystem:
    """Assemble ``k_hat``, ``b_hat`` and the treated mean of ``W`` from a panel."""
    n = data.n_units
    a = data.treatment
    control = 1.0 - a
    if control.sum() == 0:
        raise DegenerateGroup("no control units: N0 = 0")
    w = np.hstack([data.y_pre, data.covariates])
    z = np.hstack([data.y_post, data.covariates])
    y0 = data.y_target
    zc = z * control[:, None]
    k_hat = zc.T @ w / n
    b_hat = zc.T @ y0 / n
    p1 = float(a.mean())
    if p1 > 0:
        treated_w_mean = (a @ w) / a.sum()
    else:
        treated_w_mean = np.full(w.shape[1], np.nan)
    return MomentSystem(
        k_hat=k_hat,
        b_hat=b_hat,
        treated_w_mean=treated_w_mean,
        p_treated=p1,
        n=n,
        n_pre=data.n_pre,
        w_tilde=w,
        z_tilde=z,
        y0=y0,
        treatment=a,
    )


def default_lambda(n: int, c: float = 1.0, beta: float = 0.75) -> float:
    """Penalty schedule ``c * n**(-beta)`` with ``beta`` inside ``(1/2, 1)``.

    Inside that window ``lambda * sqrt(n) -> 0`` and ``lambda * n -> inf``.
    """
    if not (0.5 < beta < 1.0):
        raise ExponentOutOfWindow(f"beta must lie in (0.5, 1), got {beta}")
    if n < 1 or not (c > 0):
        raise DomainError("need n >= 1 and c > 0")
    return float(c) * float(n) ** (-float(beta))


# weighting ------------------------------------------------------------------


@dataclass(frozen=True)
class Identity:
    """Identity GMM weight."""


@dataclass(frozen=True)
class Fixed:
    """A user-supplied symmetric positive-definite weight."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", numerics.check_weight(self.matrix))


@dataclass(frozen=True)
class OptimalTwoStage:
    """Inverse of the moment covariance estimated at an identity-weight fit.

    ``jitter`` is the eigenvalue floor added to the estimated covariance
    when it is nearly singular; ``None`` means ``1e-8 * trace / dim``.
    """

    jitter: float | None = None


WeightSpec = Union[Identity, Fixed, OptimalTwoStage]


def _floor_covariance(sigma: np.ndarray, jitter: float | None) -> np.ndarray:
    sigma = 0.5 * (sigma + sigma.T)
    dim = sigma.shape[0]
    if jitter is None:
        jitter = 1e-8 * np.trace(sigma) / dim
    if jitter < 0:
        raise DomainError("jitter must be non-negative")
    if dim and np.linalg.eigvalsh(sigma)[0] < jitter:
        sigma = sigma + jitter * np.eye(dim)
    return sigma


def resolve_weight(spec: WeightSpec, system: MomentSystem, lam: float) -> np.ndarray:
    """Turn a weight specification into a concrete matrix.

    For :class:`OptimalTwoStage` this runs the first (identity) stage at
    the same ``lam`` and inverts the floored moment covariance.
    """
    dim = system.dim_moment
    if isinstance(spec, Identity):
        return np.eye(dim)
    if isinstance(spec, Fixed):
        if spec.matrix.shape != (dim, dim):
            raise DimensionMismatch(f"weight is {spec.matrix.shape}, expected {(dim, dim)}")
        return spec.matrix
    if isinstance(spec, OptimalTwoStage):
        theta0 = fit_bridge(system, Identity(), lam)
        sigma = _floor_covariance(system.moment_cov(theta0), spec.jitter)
        return numerics.spd_inverse(sigma)
    if isinstance(spec, np.ndarray):
        return resolve_weight(Fixed(spec), system, lam)
    raise DomainError(f"unknown weight specification {spec!r}")


# fitting -------------------------------------------------------------------


def fit_bridge(system: MomentSystem, weight: WeightSpec | np.ndarray, lam: float) -> BridgeCoefficients:
    """Ridge-penalized GMM: ``(k'Wk + lam I)^{-1} k'W b``."""
    if not (lam > 0) or not np.isfinite(lam):
        raise DomainError(f"lambda must be positive and finite, got {lam}")
    w = resolve_weight(weight, system, lam)
    vec = numerics.ridge_solve(system.k_hat, w, system.b_hat, lam)
    return BridgeCoefficients.from_vector(vec, system.n_pre)


def fit_bridge_weighted_M(
    system: MomentSystem, m_matrix, weight: WeightSpec | np.ndarray, lam: float
) -> BridgeCoefficients:
    """GMM with penalty ``lam * theta' M theta`` for a PSD matrix ``M``.

    With ``M = I`` this takes the same code path as :func:`fit_bridge`;
    other penalties solve the penalized normal equations by Cholesky.
    """
    if not np.isfinite(lam) or lam < 0:
        raise DomainError("lambda must be finite and non-negative")
    dim = system.dim_theta
    m_matrix = np.asarray(m_matrix, dtype=float)
    if m_matrix.shape != (dim, dim):
        raise DimensionMismatch(f"M is {m_matrix.shape}, expected {(dim, dim)}")
    if not np.allclose(m_matrix, m_matrix.T, atol=1e-12 * max(1.0, np.abs(m_matrix).max())):
        raise DomainError("M must be symmetric")
    if dim and np.linalg.eigvalsh(0.5 * (m_matrix + m_matrix.T))[0] < -1e-10 * max(1.0, np.abs(m_matrix).max()):
        raise DomainError("M must be positive semidefinite")
    w = numerics.check_weight(resolve_weight(weight, system, lam) if lam > 0 else _plain_weight(weight, system))
    if lam > 0 and np.array_equal(m_matrix, np.eye(dim)):
        return BridgeCoefficients.from_vector(numerics.ridge_solve(system.k_hat, w, system.b_hat, lam), system.n_pre)
    kw = system.k_hat.T @ w
    normal = kw @ system.k_hat
    normal += lam * m_matrix
    vec = numerics.solve_spd(normal, kw @ system.b_hat, exc=SingularPenalizedSystem)
    return BridgeCoefficients.from_vector(vec, system.n_pre)


def _plain_weight(weight, system):
    if isinstance(weight, OptimalTwoStage):
        raise DomainError("two-stage weighting needs lambda > 0 for its first stage")
    return resolve_weight(weight, system, 1.0)


def estimate_treated_mean(system: MomentSystem, theta) -> float:
    """Treated average of ``W'theta``."""
    if system.p_treated <= 0:
        raise DegenerateGroup("no treated units: N1 = 0")
    return float(system.treated_w_mean @ _theta_vector(theta, system.dim_theta))


# inference -----------------------------------------------------------------


@dataclass(frozen=True)
class InfluenceParts:
    """Pieces of the plug-in influence function.

    ``g`` is ``A (W'theta - gamma)`` per unit, ``m`` the per-unit moments and
    ``psi_mat`` the row vector multiplying them.
    """

    g: np.ndarray
    m: np.ndarray
    psi_mat: np.ndarray
    p_treated: float

    @property
    def values(self) -> np.ndarray:
        return -(self.g + self.m @ self.psi_mat) / self.p_treated


def influence_components(system: MomentSystem, theta, gamma: float, weight: np.ndarray, lam: float) -> InfluenceParts:
    """Plug-in influence pieces for the treated-mean estimator.

    ``Psi = E_n[A W'] (k'Wk + lam I)^{-1} k'W`` uses the regularized
    inverse, never a pseudoinverse.
    """
    weight = np.asarray(weight, dtype=float)
    dim = system.dim_moment
    if weight.shape != (dim, dim):
        raise DimensionMismatch(f"weight is {weight.shape}, expected {(dim, dim)}")
    if system.p_treated <= 0:
        raise DegenerateGroup("no treated units: N1 = 0")
    vec = _theta_vector(theta, system.dim_theta)
    a = system.treatment
    g = a * (system.w_tilde @ vec - gamma)
    ea_w = system.p_treated * system.treated_w_mean
    psi_mat = numerics.ridge_operator(system.k_hat, weight, lam).T @ ea_w
    return InfluenceParts(g=g, m=system.unit_moments(vec), psi_mat=psi_mat, p_treated=system.p_treated)


def influence_values(system: MomentSystem, theta, gamma: float, weight: np.ndarray, lam: float) -> np.ndarray:
    """Per-unit plug-in influence values ``psi_hat_i``."""
    return influence_components(system, theta, gamma, weight, lam).values


def variance_and_ci(psi, gamma_hat: float, n: int, rho: float = 0.05) -> tuple[float, float, float]:
    """Uncentred variance ``E_n[psi^2]`` and the normal ``1 - rho`` interval."""
    if not (0.0 < rho < 1.0):
        raise DomainError(f"rho must lie in (0, 1), got {rho}")
    psi = np.asarray(psi, dtype=float)
    sigma2 = float(np.mean(psi**2)) if psi.size else 0.0
    half = numerics.normal_quantile(1.0 - rho / 2.0) * np.sqrt(sigma2 / n)
    return sigma2, float(gamma_hat - half), float(gamma_hat + half)


# results -------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate, bridge coefficients and plug-in inference."""

    gamma_hat: float
    theta: BridgeCoefficients
    sigma2_hat: float
    ci_lo: float
    ci_hi: float
    lambda_used: float
    weight_used: np.ndarray
    diagnostics: dict
    rho: float = 0.05
    estimand: str = "treated"
    psi: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return int(self.diagnostics.get("n", 0))

    @property
    def se(self) -> float:
        return float(np.sqrt(self.sigma2_hat / self.n)) if self.n else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma_hat": self.gamma_hat,
            "theta1": self.theta.theta1.tolist(),
            "theta2": self.theta.theta2.tolist(),
            "sigma2_hat": self.sigma2_hat,
            "ci": [self.ci_lo, self.ci_hi],
            "lambda": self.lambda_used,
            "rho": self.rho,
            "estimand": self.estimand,
            "diagnostics": {
                k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.diagnostics.items()
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _diagnostics(system: MomentSystem, theta: BridgeCoefficients) -> dict:
    s = np.linalg.svd(system.k_hat, compute_uv=False) if system.k_hat.size else np.zeros(0)
    # singular values below the O(n^-1/2) sampling-noise floor are not counted
    floor = 5.0 * s[0] / np.sqrt(system.n) if s.size else 0.0
    return {
        "moment_residual_norm": float(np.linalg.norm(system.moment_mean(theta))),
        "k_singular_values": s,
        "effective_rank": int(np.sum(s > floor)),
        "n": system.n,
        "n_treated": int(system.treatment.sum()),
    }


def _resolve_lambda(n: int, lam: float | None, lambda_c: float, lambda_beta: float) -> float:
    return default_lambda(n, lambda_c, lambda_beta) if lam is None else float(lam)


def estimate_bridge(
    data: PanelDataset | MomentSystem,
    weight: WeightSpec | np.ndarray = Identity(),
    lam: float | None = None,
    *,
    lambda_c: float = 1.0,
    lambda_beta: float = 0.75,
    rho: float = 0.05,
) -> EstimateResult:
    """Full treated-mean estimate: coefficients, ``gamma_hat`` and interval.

    ``lam=None`` uses :func:`default_lambda` with ``lambda_c`` and
    ``lambda_beta``.
    """
    system = data if isinstance(data, MomentSystem) else build_moment_system(data)
    if system.p_treated <= 0:
        raise DegenerateGroup("no treated units: N1 = 0")
    lam = _resolve_lambda(system.n, lam, lambda_c, lambda_beta)
    if not (lam > 0):
        raise DomainError("lambda must be positive")
    w = resolve_weight(weight, system, lam)
    theta = BridgeCoefficients.from_vector(numerics.ridge_solve(system.k_hat, w, system.b_hat, lam), system.n_pre)
    gamma = estimate_treated_mean(system, theta)
    psi = influence_values(system, theta, gamma, w, lam)
    sigma2, lo, hi = variance_and_ci(psi, gamma, system.n, rho)
    return EstimateResult(
        gamma_hat=gamma,
        theta=theta,
        sigma2_hat=sigma2,
        ci_lo=lo,
        ci_hi=hi,
        lambda_used=lam,
        weight_used=w,
        diagnostics=_diagnostics(system, theta),
        rho=rho,
        psi=psi,
    )


def fit_two_stage(
    data: PanelDataset | MomentSystem,
    lam: float | None = None,
    jitter: float | None = None,
    *,
    lambda_c: float = 1.0,
    lambda_beta: float = 0.75,
    rho: float = 0.05,
) -> EstimateResult:
    """Identity-weight fit, then refit with the inverse estimated moment covariance."""
    return estimate_bridge(
        data, OptimalTwoStage(jitter), lam, lambda_c=lambda_c, lambda_beta=lambda_beta, rho=rho
    )


# whole-population estimand ---------------------------------------------------


@dataclass(frozen=True)
class JointWeight:
    """Blocks of the joint weight for the whole-population estimand.

    ``w11`` is ``"identity"``, ``"optimal"`` (estimated moment covariance)
    or a matrix; the bridge is fitted with ``w11^{-1}`` as moment weight.
    ``w21`` is ``"zero"``, ``"optimal"`` (estimated cross covariance of the
    mean moment with ``m``) or a row vector.
    """

    w11: Any = "optimal"
    w21: Any = "optimal"
    jitter: float | None = None


def estimate_population_mean(
    data: PanelDataset | MomentSystem,
    lam: float | None = None,
    weight: JointWeight = JointWeight(),
    *,
    lambda_c: float = 1.0,
    lambda_beta: float = 0.75,
    rho: float = 0.05,
) -> EstimateResult:
    """Counterfactual mean ``E[Y_0(0)]`` over all units.

    The bridge is fitted with moment weight ``w11^{-1}`` and the mean then
    solves ``E_n[W'theta - gamma - w21 w11^{-1} m(theta)] = 0``.
    """
    system = data if isinstance(data, MomentSystem) else build_moment_system(data)
    lam = _resolve_lambda(system.n, lam, lambda_c, lambda_beta)
    if not (lam > 0):
        raise DomainError("lambda must be positive")
    dim = system.dim_moment
    needs_pilot = (isinstance(weight.w11, str) and weight.w11 == "optimal") or (
        isinstance(weight.w21, str) and weight.w21 == "optimal"
    )
    if needs_pilot:
        theta0 = numerics.ridge_solve(system.k_hat, np.eye(dim), system.b_hat, lam)
        gamma0 = float(system.w_mean @ theta0)
        m0 = system.unit_moments(theta0)
        g0 = system.w_tilde @ theta0 - gamma0

    if isinstance(weight.w11, str):
        if weight.w11 == "identity":
            w11 = np.eye(dim)
        elif weight.w11 == "optimal":
            w11 = _floor_covariance(m0.T @ m0 / system.n, weight.jitter)
        else:
            raise DomainError(f"unknown w11 option {weight.w11!r}")
    else:
        w11 = numerics.check_weight(weight.w11)
        if w11.shape != (dim, dim):
            raise DimensionMismatch(f"w11 is {w11.shape}, expected {(dim, dim)}")
    if isinstance(weight.w21, str):
        if weight.w21 == "zero":
            w21 = np.zeros(dim)
        elif weight.w21 == "optimal":
            w21 = g0 @ m0 / system.n
        else:
            raise DomainError(f"unknown w21 option {weight.w21!r}")
    else:
        w21 = np.asarray(weight.w21, dtype=float).reshape(-1)
        if w21.size != dim:
            raise DimensionMismatch(f"w21 has length {w21.size}, expected {dim}")

    w_moment = numerics.spd_inverse(w11)
    vec = numerics.ridge_solve(system.k_hat, w_moment, system.b_hat, lam)
    theta = BridgeCoefficients.from_vector(vec, system.n_pre)
    corr = w21 @ w_moment  # w21 w11^{-1}
    gamma = float(system.w_mean @ vec - corr @ system.moment_mean(vec))

    lead = system.w_mean + system.k_hat.T @ corr
    psi_mat = numerics.ridge_operator(system.k_hat, w_moment, lam).T @ lead - corr
    g = system.w_tilde @ vec - gamma
    psi = -(g + system.unit_moments(vec) @ psi_mat)
    sigma2, lo, hi = variance_and_ci(psi, gamma, system.n, rho)
    diag = _diagnostics(system, theta)
    diag["w21"] = w21
    return EstimateResult(
        gamma_hat=gamma,
        theta=theta,
        sigma2_hat=sigma2,
        ci_lo=lo,
        ci_hi=hi,
        lambda_used=lam,
        weight_used=w_moment,
        diagnostics=diag,
        rho=rho,
        estimand="population",
        psi=psi,
    )
