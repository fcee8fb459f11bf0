"""Ground-truth quantities computed from known simulator parameters.

Everything here is a population object: moment matrices, the affine set
of valid bridge coefficients, its minimum-norm and ``M``-targeted
elements, identification rank checks and the asymptotic variance of the
treated-mean estimator. Arm-conditional moments of the confounders come
from :meth:`FactorDgpConfig.arm_moments` (exact one-dimensional
integration of the selection model).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .bridge import BridgeCoefficients
from .dgp import ArDgpConfig, FactorDgpConfig
from .exceptions import (
    ConfigInvalid,
    DimensionMismatch,
    DomainError,
    RankDeficientLoadings,
    SingularSigma0,
    TargetNotUnique,
)

__all__ = [
    "PopulationMoments",
    "BridgeSet",
    "TvStructure",
    "IdentificationReport",
    "population_K_b",
    "bridge_set",
    "theta_min_oracle",
    "theta_M_oracle",
    "identification_check",
    "tv_rank_matrix",
    "moment_covariance_oracle",
    "asymptotic_variance_oracle",
    "gamma_star",
]


# linear design --------------------------------------------------------------


@dataclass(frozen=True)
class _Design:
    """Outcomes and covariates as linear maps of an augmented latent vector.

    ``Y_t(0) = outcome_rows[t] @ xi + eps_t`` and ``X = x_rows @ xi`` with
    ``xi = (1, latent)``; ``moments[a]`` holds ``E[xi xi' | A = a]``.
    """

    outcome_rows: np.ndarray
    x_rows: np.ndarray
    moments: dict
    n_pre: int

    @property
    def lam_w(self) -> np.ndarray:
        return np.vstack([self.outcome_rows[: self.n_pre], self.x_rows])

    @property
    def lam_z(self) -> np.ndarray:
        return np.vstack([self.outcome_rows[self.n_pre + 1 :], self.x_rows])

    @property
    def c0(self) -> np.ndarray:
        return self.outcome_rows[self.n_pre]


def _design(config) -> _Design:
    if isinstance(config, ArDgpConfig):
        moments = config.latent_arm_moments()
        maps = config.state_maps()
        k = maps.shape[2]
        x_rows = config._x_embedding(k, k - config.covariate_mean.size)
        rows = np.zeros((config.n_periods, 1 + k))
        for j in range(config.n_periods):
            rows[j, 1:] = config.loadings[j] @ maps[j]
        rows += config.cov_coefs @ x_rows
        return _Design(rows, x_rows, moments, config.n_pre)
    if isinstance(config, FactorDgpConfig):
        moments = config.arm_moments()
        r, d = config.n_factors, config.n_cov
        rows = np.hstack([np.zeros((config.n_periods, 1)), config.loadings, config.cov_coefs])
        x_rows = np.hstack([np.zeros((d, 1 + r)), np.eye(d)])
        return _Design(rows, x_rows, moments, config.n_pre)
    raise ConfigInvalid(f"unsupported configuration type {type(config).__name__}")


def _blocks(config):
    """``V_pre, V_0, V_post, B_pre, b_0, B_post`` for a factor configuration."""
    t0 = config.n_pre
    v, b = config.loadings, config.cov_coefs
    return v[:t0], v[t0], v[t0 + 1 :], b[:t0], b[t0], b[t0 + 1 :]


# population moments -------------------------------------------------------


@dataclass(frozen=True)
class PopulationMoments:
    """Population analogues of the sample moment system.

    ``second_moment_block`` is ``E[(U; X)(U; X)' | A = 0]`` (``U_0`` for the
    AR process).
    """

    k: np.ndarray
    b: np.ndarray
    treated_w_mean: np.ndarray
    second_moment_block: np.ndarray
    p_control: float
    n_pre: int
    gamma: float

    @property
    def p_treated(self) -> float:
        return 1.0 - self.p_control

    def as_system(self, n: int = 1):
        """A :class:`~minbridge.bridge.MomentSystem` carrying these matrices.

        Only the matrix fields are meaningful; the per-unit arrays are empty.
        """
        from .bridge import MomentSystem

        p, q = self.k.shape
        return MomentSystem(
            k_hat=self.k,
            b_hat=self.b,
            treated_w_mean=self.treated_w_mean,
            p_treated=self.p_treated,
            n=n,
            n_pre=self.n_pre,
            w_tilde=np.zeros((0, q)),
            z_tilde=np.zeros((0, p)),
            y0=np.zeros(0),
            treatment=np.zeros(0),
        )


def population_K_b(config) -> PopulationMoments:
    """``K = P(A=0) L_post S_0 L_pre'`` and ``b = P(A=0) L_post S_0 (V_0; b_0)``.

    ``S_0`` is the control-arm second moment of the latent vector; noise
    terms drop out because post-period errors are independent of the
    pre-period and target errors.
    """
    des = _design(config)
    s0 = des.moments[0].second
    p0 = des.moments[0].prob
    lz, lw = des.lam_z, des.lam_w
    k = p0 * lz @ s0 @ lw.T
    b = p0 * lz @ s0 @ des.c0
    mu1 = des.moments[1].second[:, 0]
    treated_w = lw @ mu1
    if isinstance(config, ArDgpConfig):
        ux = config.ux_embedding()
        block = (ux @ s0 @ ux.T)[1:, 1:]
    else:
        block = s0[1:, 1:]
    return PopulationMoments(
        k=k,
        b=b,
        treated_w_mean=treated_w,
        second_moment_block=0.5 * (block + block.T),
        p_control=p0,
        n_pre=config.n_pre,
        gamma=float(des.c0 @ mu1),
    )


def gamma_star(config) -> float:
    """``E[Y_0(0) | A = 1]``."""
    des = _design(config)
    return float(des.c0 @ des.moments[1].second[:, 0])


# bridge set ----------------------------------------------------------------


@dataclass(frozen=True)
class BridgeSet:
    """The affine set of valid bridge coefficients.

    Every element is ``theta1 = particular.theta1 + nullspace_basis @ c``
    with ``theta2 = b_0 - B_pre' theta1``.
    """

    particular: BridgeCoefficients
    nullspace_basis: np.ndarray
    b_pre: np.ndarray
    b0: np.ndarray

    @property
    def dimension(self) -> int:
        return self.nullspace_basis.shape[1]

    @property
    def theta2_directions(self) -> np.ndarray:
        return -self.b_pre.T @ self.nullspace_basis

    def element(self, coef) -> BridgeCoefficients:
        coef = np.asarray(coef, dtype=float).reshape(-1)
        if coef.size != self.dimension:
            raise DimensionMismatch(f"need {self.dimension} null-space coordinates, got {coef.size}")
        theta1 = self.particular.theta1 + self.nullspace_basis @ coef
        return BridgeCoefficients(theta1, self.b0 - self.b_pre.T @ theta1)

    def sample(self, rng: np.random.Generator, count: int, scale: float = 1.0) -> list[BridgeCoefficients]:
        return [self.element(scale * rng.standard_normal(self.dimension)) for _ in range(count)]


def bridge_set(config: FactorDgpConfig) -> BridgeSet:
    """Particular solution ``pinv(V_pre') V_0`` plus the null space of ``V_pre'``."""
    if not isinstance(config, FactorDgpConfig):
        raise ConfigInvalid("bridge_set needs a FactorDgpConfig")
    v_pre, v0, _, b_pre, b0, _ = _blocks(config)
    t0, r = v_pre.shape
    if t0 < r or numerics.rank_estimate(v_pre) < r:
        raise RankDeficientLoadings(f"pre-period loadings have rank < r = {r}")
    fac = numerics.svd(v_pre.T)
    basis = fac.vt[r:].T
    theta1 = numerics.pinv(v_pre.T) @ v0
    return BridgeSet(
        particular=BridgeCoefficients(theta1, b0 - b_pre.T @ theta1),
        nullspace_basis=basis,
        b_pre=b_pre,
        b0=b0,
    )


def theta_min_oracle(pm: PopulationMoments) -> BridgeCoefficients:
    """Minimum-norm solution ``K^+ b``."""
    return BridgeCoefficients.from_vector(numerics.pinv(pm.k) @ pm.b, pm.n_pre)


def theta_M_oracle(config: FactorDgpConfig, m_matrix) -> BridgeCoefficients:
    """Minimizer of ``theta' M theta`` over the bridge set.

    Solved through the KKT system of the equality-constrained quadratic
    program. The minimizer is unique exactly when ``M`` is positive
    definite on the directions the bridge set spans; otherwise
    :class:`TargetNotUnique` is raised.
    """
    bs = bridge_set(config)
    v_pre, v0, _, b_pre, b0, _ = _blocks(config)
    t0, r = v_pre.shape
    d = b_pre.shape[1]
    dim = t0 + d
    m_matrix = np.asarray(m_matrix, dtype=float)
    if m_matrix.shape != (dim, dim):
        raise DimensionMismatch(f"M is {m_matrix.shape}, expected {(dim, dim)}")
    m_matrix = 0.5 * (m_matrix + m_matrix.T)
    if dim and np.linalg.eigvalsh(m_matrix)[0] < -1e-10 * max(1.0, np.abs(m_matrix).max()):
        raise DomainError("M must be positive semidefinite")
    if bs.dimension == 0:
        return bs.particular
    directions = np.vstack([bs.nullspace_basis, bs.theta2_directions])
    reduced = directions.T @ m_matrix @ directions
    scale = max(1.0, np.abs(m_matrix).max())
    if np.linalg.eigvalsh(reduced)[0] <= 1e-10 * scale:
        raise TargetNotUnique("M is not positive definite on the bridge-set directions")
    cons = np.zeros((r + d, dim))
    cons[:r, :t0] = v_pre.T
    cons[r:, :t0] = b_pre.T
    cons[r:, t0:] = np.eye(d)
    rhs_c = np.concatenate([v0, b0])
    # drop redundant rows so the KKT matrix is square and nonsingular
    keep = _independent_rows(cons)
    cons, rhs_c = cons[keep], rhs_c[keep]
    p = cons.shape[0]
    kkt = np.zeros((dim + p, dim + p))
    kkt[:dim, :dim] = 2.0 * m_matrix
    kkt[:dim, dim:] = cons.T
    kkt[dim:, :dim] = cons
    rhs = np.concatenate([np.zeros(dim), rhs_c])
    sol = np.linalg.solve(kkt, rhs)
    return BridgeCoefficients(sol[:t0], sol[t0:dim])


def _independent_rows(a: np.ndarray) -> list[int]:
    keep: list[int] = []
    for i in range(a.shape[0]):
        if numerics.rank_estimate(a[keep + [i]]) > len(keep):
            keep.append(i)
    return keep


# identification ------------------------------------------------------------


@dataclass(frozen=True)
class IdentificationReport:
    """Both rank conditions with their numerical margins.

    ``margin`` entries are ``s_min / s_max`` of the matrix concerned; a
    condition holds when its rank equals the required count.
    """

    cond1: bool
    cond2: bool
    ranks: dict
    margins: dict
    required: int
    singular_values: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "cond1": self.cond1,
            "cond2": self.cond2,
            "identified": self.cond1 and self.cond2,
            "required_rank": self.required,
            "ranks": self.ranks,
            "margins": self.margins,
            "singular_values": {k: np.asarray(v).tolist() for k, v in self.singular_values.items()},
        }


_RANK_TOL = 1e-9


def _rank_and_margin(a: np.ndarray) -> tuple[int, float, np.ndarray]:
    if a.size == 0:
        return 0, 0.0, np.zeros(0)
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0:
        return 0, 0.0, s
    return int(np.sum(s > _RANK_TOL * s[0])), float(s[-1] / s[0]), s


def _post_block(v_post: np.ndarray, b_post: np.ndarray) -> np.ndarray:
    t1, r = v_post.shape
    d = b_post.shape[1]
    return np.block([[v_post, b_post], [np.zeros((d, r)), np.eye(d)]])


def identification_check(config) -> IdentificationReport:
    """Full rank of ``E[(U;X)(U;X)' | A=0]`` and full column rank of the post block."""
    pm = population_K_b(config)
    r, d = config.n_factors, config.n_cov
    rank1, marg1, s1 = _rank_and_margin(pm.second_moment_block)
    if isinstance(config, ArDgpConfig):
        v_post = tv_rank_matrix(config).v_post_tilde
    else:
        v_post = _blocks(config)[2]
    post = _post_block(v_post, config.cov_coefs[config.n_pre + 1 :])
    rank2, marg2, s2 = _rank_and_margin(post)
    rank_k, marg_k, sk = _rank_and_margin(pm.k)
    return IdentificationReport(
        cond1=rank1 == r + d,
        cond2=rank2 == r + d,
        ranks={"second_moment": rank1, "post_block": rank2, "K": rank_k},
        margins={"second_moment": marg1, "post_block": marg2},
        required=r + d,
        singular_values={"second_moment": s1, "post_block": s2, "K": sk},
    )


# time-varying confounders ----------------------------------------------------


@dataclass(frozen=True)
class TvStructure:
    """Rank structure of the autoregressive-confounder model.

    ``rank_matrix`` has one row per pre-period, ordered ``t = -T0..-1`` like
    the columns of ``Y_pre``. ``exact_rows`` is the exact control-arm
    regression coefficient of ``V_t'U_t`` on ``U_0`` (given ``X``), for
    comparison with the display-form rows.
    """

    rank_matrix: np.ndarray
    v_post_tilde: np.ndarray
    g_blocks: tuple
    rank: int
    margin: float
    post_rank: int
    post_margin: float
    exact_rows: np.ndarray
    general: bool

    @property
    def ok(self) -> bool:
        r = self.rank_matrix.shape[1]
        return self.rank == r and self.post_rank == self.v_post_tilde.shape[1] + self.g_blocks[3].shape[0]


def tv_rank_matrix(config: ArDgpConfig, general: bool = False) -> TvStructure:
    """Gamma-weighted covariance rows, post loadings and partitioned inverse blocks.

    With ``general=False`` the rows use control-arm covariances of
    ``U_{-T0}`` and the innovations; with ``general=True`` they use
    control-arm second moments (including cross moments with ``X``)
    combined through the ``G`` blocks.
    """
    if not isinstance(config, ArDgpConfig):
        raise ConfigInvalid("tv_rank_matrix needs an ArDgpConfig")
    r, t0, t1 = config.n_factors, config.n_pre, config.n_post
    lat = config.latent_arm_moments()[0]
    s0 = lat.second
    cov0 = lat.cov
    maps = config.state_maps()
    k = maps.shape[2]
    x_rows = config._x_embedding(k, k - config.covariate_mean.size)
    d = x_rows.shape[0]

    def gam(a: int, b: int) -> np.ndarray:
        # Gamma_a Gamma_{a-1} ... Gamma_b in calendar time; identity if a < b
        out = np.eye(r)
        for t in range(b, a + 1):
            out = config.transitions[t + t0] @ out
        return out

    def lat_slice(block: int) -> slice:
        # block 0 is U_{-T0}; block j >= 1 is eta_{-T0 + j - 1}
        return slice(1 + r * block, 1 + r * (block + 1))

    def eta_block(t: int) -> int:
        return t + t0 + 1

    u0_rows = np.hstack([np.zeros((r, 1)), maps[t0]])
    ux_rows = np.vstack([u0_rows, x_rows])
    sec = ux_rows @ s0 @ ux_rows.T
    ginv = numerics.spd_inverse(sec, exc=SingularSigma0)
    if np.linalg.cond(sec[:r, :r]) > 1e12:
        raise SingularSigma0("E[U_0 U_0' | A = 0] is singular")
    g11, g12, g21, g22 = _partitioned_inverse(sec, r)

    rows = np.zeros((t0, r))
    us = lat_slice(0)
    for t in range(-t0, 0):
        v_t = config.loadings[t + t0]
        if general:
            su = s0[us, us]
            sux = s0[us] @ x_rows.T
            acc = gam(t - 1, -t0) @ (su @ gam(-1, -t0).T @ g11 + sux @ g21)
            for kk in range(1, t + t0 + 1):
                es = lat_slice(eta_block(t - kk))
                se = s0[es, es]
                sex = s0[es] @ x_rows.T
                acc = acc + gam(t - 1, t - kk + 1) @ (se @ gam(-1, t - kk + 1).T @ g11 + sex @ g21)
        else:
            acc = gam(t - 1, -t0) @ cov0[us.start - 1 : us.stop - 1, us.start - 1 : us.stop - 1] @ gam(-1, -t0).T
            for kk in range(1, t + t0 + 1):
                es = lat_slice(eta_block(t - kk))
                ce = cov0[es.start - 1 : es.stop - 1, es.start - 1 : es.stop - 1]
                acc = acc + gam(t - 1, t - kk + 1) @ ce @ gam(-1, t - kk + 1).T
        rows[t + t0] = v_t @ acc

    exact = np.zeros((t0, r))
    coef = ginv[:, :r]
    for j in range(t0):
        ut_rows = np.hstack([np.zeros((r, 1)), maps[j]])
        exact[j] = config.loadings[j] @ (ut_rows @ s0 @ ux_rows.T @ coef)

    v_post = np.zeros((t1, r))
    for t in range(1, t1 + 1):
        v_post[t - 1] = config.loadings[t0 + t] @ gam(t - 1, 0)
    rank, margin, _ = _rank_and_margin(rows)
    post = _post_block(v_post, config.cov_coefs[t0 + 1 :])
    prank, pmargin, _ = _rank_and_margin(post)
    return TvStructure(
        rank_matrix=rows,
        v_post_tilde=v_post,
        g_blocks=(g11, g12, g21, g22),
        rank=rank,
        margin=margin,
        post_rank=prank,
        post_margin=pmargin,
        exact_rows=exact,
        general=general,
    )


def _partitioned_inverse(sec: np.ndarray, r: int):
    """Schur-complement blocks of ``sec^{-1}`` split after ``r`` rows."""
    suu, sux = sec[:r, :r], sec[:r, r:]
    sxu, sxx = sec[r:, :r], sec[r:, r:]
    d = sxx.shape[0]
    if d == 0:
        g11 = np.linalg.inv(suu)
        return g11, np.zeros((r, 0)), np.zeros((0, r)), np.zeros((0, 0))
    sxx_inv = np.linalg.inv(sxx)
    g11 = np.linalg.inv(suu - sux @ sxx_inv @ sxu)
    g12 = -g11 @ sux @ sxx_inv
    g21 = -sxx_inv @ sxu @ g11
    g22 = sxx_inv + sxx_inv @ sxu @ g11 @ sux @ sxx_inv
    return g11, g12, g21, g22


# asymptotic variance -------------------------------------------------------


def _theta_vec(theta, dim: int) -> np.ndarray:
    vec = theta.vector if isinstance(theta, BridgeCoefficients) else np.asarray(theta, float).reshape(-1)
    if vec.size != dim:
        raise DimensionMismatch(f"theta has length {vec.size}, expected {dim}")
    return vec


def _check_in_bridge_set(des: _Design, vec: np.ndarray) -> None:
    resid = des.c0 - des.lam_w.T @ vec
    scale = max(1.0, np.abs(des.c0).max(), np.abs(vec).max())
    if np.abs(resid).max() > 1e-8 * scale:
        raise DomainError("theta_target is not a valid bridge coefficient")


def moment_covariance_oracle(config: FactorDgpConfig, theta) -> np.ndarray:
    """``Sigma_m = E[m m']`` at a valid bridge coefficient.

    With ``theta`` in the bridge set the moment residual is
    ``eps_0 - theta1' eps_pre``, independent of ``Z`` and ``A``, so
    ``Sigma_m = P(A=0) E[e^2] E[Z Z' | A=0]``.
    """
    if not isinstance(config, FactorDgpConfig):
        raise ConfigInvalid("closed-form variance is available for the factor model only")
    des = _design(config)
    vec = _theta_vec(theta, des.lam_w.shape[0])
    _check_in_bridge_set(des, vec)
    t0, t1 = config.n_pre, config.n_post
    cov = config.noise_cov()
    th1 = vec[:t0]
    e2 = cov[t0, t0] - 2.0 * th1 @ cov[:t0, t0] + th1 @ cov[:t0, :t0] @ th1
    s0 = des.moments[0].second
    zz = des.lam_z @ s0 @ des.lam_z.T
    zz[:t1, :t1] += cov[t0 + 1 :, t0 + 1 :]
    out = des.moments[0].prob * e2 * zz
    return 0.5 * (out + out.T)


def asymptotic_variance_oracle(config: FactorDgpConfig, theta_target=None, weight_limit=None) -> float:
    """Exact ``E[psi^2]`` for the treated-mean estimator.

    Parameters
    ----------
    config : FactorDgpConfig
    theta_target : BridgeCoefficients, optional
        Element of the bridge set the estimator converges to; defaults to
        the minimum-norm coefficient.
    weight_limit : array, optional
        Limiting GMM weight; defaults to the identity.

    Notes
    -----
    ``E[psi^2] = (p1 E[(W'theta - gamma)^2 | A=1] + Psi Sigma_m Psi') / p1^2``
    with ``Psi = p1 E[W | A=1]' (K'WK)^+ K'W``. The treated term includes
    the pre-period noise ``theta1' Sigma_pre theta1``.
    """
    if not isinstance(config, FactorDgpConfig):
        raise ConfigInvalid("closed-form variance is available for the factor model only")
    pm = population_K_b(config)
    des = _design(config)
    theta = theta_min_oracle(pm) if theta_target is None else theta_target
    vec = _theta_vec(theta, pm.k.shape[1])
    _check_in_bridge_set(des, vec)
    dim = pm.k.shape[0]
    w = np.eye(dim) if weight_limit is None else numerics.check_weight(weight_limit)
    if w.shape != (dim, dim):
        raise DimensionMismatch(f"weight is {w.shape}, expected {(dim, dim)}")
    p1 = pm.p_treated
    t0 = config.n_pre
    cov = config.noise_cov()
    s1 = des.moments[1].second
    mu1 = s1[:, 0]
    lin = des.lam_w.T @ vec
    gamma = pm.gamma
    treated = lin @ s1 @ lin - 2.0 * gamma * (lin @ mu1) + gamma**2
    treated += vec[:t0] @ cov[:t0, :t0] @ vec[:t0]
    kw = pm.k.T @ w
    psi = p1 * pm.treated_w_mean @ numerics.pinv(kw @ pm.k) @ kw
    sigma_m = moment_covariance_oracle(config, vec)
    return float((p1 * treated + psi @ sigma_m @ psi) / p1**2)
