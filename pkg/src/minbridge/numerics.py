"""Dense linear-algebra kernels shared by the estimators and oracles.

Everything here is small and dense: the GMM problems have dimension
``T0 + d`` (tens at most), so plain SVD and Cholesky factorizations are
used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .exceptions import (
    DomainError,
    NonFiniteInput,
    NonPositiveDefiniteWeight,
    SingularSystem,
)

__all__ = [
    "SvdFactors",
    "svd",
    "default_rtol",
    "pinv",
    "rank_estimate",
    "ridge_operator",
    "ridge_solve",
    "solve_spd",
    "spd_inverse",
    "normal_cdf",
    "normal_quantile",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SvdFactors:
    """Full singular value decomposition ``a = u @ diag(s) @ vt``."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        m, n = self.u.shape[0], self.vt.shape[0]
        sigma = np.zeros((m, n))
        k = self.s.size
        sigma[:k, :k] = np.diag(self.s)
        return self.u @ sigma @ self.vt


def _as_finite_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DomainError(f"expected a matrix, got array with ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("matrix contains NaN or infinite entries")
    return a


def svd(a) -> SvdFactors:
    a = _as_finite_matrix(a)
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    return SvdFactors(u=u, s=s, vt=vt)


def default_rtol(shape: tuple[int, ...]) -> float:
    """Relative singular-value cutoff ``1e-12 * max(m, n)``."""
    return 1e-12 * max(shape)


def pinv(a, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values at or below ``tol * s_max`` are treated as zero.
    ``tol`` defaults to :func:`default_rtol` of the input shape.
    """
    a = _as_finite_matrix(a)
    m, n = a.shape
    if a.size == 0:
        return np.zeros((n, m))
    if tol is None:
        tol = default_rtol(a.shape)
    if tol <= 0:
        raise DomainError("tol must be positive")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, m))
    keep = s > tol * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (vt.T * s_inv) @ u.T


def rank_estimate(a, tol: float | None = None) -> int:
    """Number of singular values strictly above ``tol * s_max``."""
    a = _as_finite_matrix(a)
    if a.size == 0:
        return 0
    if tol is None:
        tol = default_rtol(a.shape)
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _cholesky(a: np.ndarray, exc: type[Exception], what: str):
    try:
        return sla.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as err:
        raise exc(f"{what} is not positive definite") from err


def solve_spd(a, rhs, *, exc: type[Exception] = SingularSystem, check_rank: bool = True):
    """Solve ``a x = rhs`` for symmetric positive-definite ``a`` by Cholesky.

    With ``check_rank`` the factor's pivots are inspected and a
    numerically singular system raises ``exc`` even when the
    factorization itself succeeded.
    """
    a = np.asarray(a, dtype=float)
    a = 0.5 * (a + a.T)
    factor = _cholesky(a, exc, "system matrix")
    if check_rank:
        diag = np.abs(np.diag(factor[0]))
        if diag.min() ** 2 <= _EPS * a.shape[0] * diag.max() ** 2:
            raise exc("system matrix is numerically singular")
    return sla.cho_solve(factor, np.asarray(rhs, dtype=float), check_finite=False)


def spd_inverse(a, *, exc: type[Exception] = NonPositiveDefiniteWeight) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    inv = solve_spd(a, np.eye(a.shape[0]), exc=exc)
    return 0.5 * (inv + inv.T)


def check_weight(w) -> np.ndarray:
    """Validate a GMM weighting matrix: square, finite, symmetric positive definite."""
    w = _as_finite_matrix(w)
    if w.shape[0] != w.shape[1]:
        raise NonPositiveDefiniteWeight(f"weight must be square, got {w.shape}")
    if not np.allclose(w, w.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(w).max())):
        raise NonPositiveDefiniteWeight("weight matrix is not symmetric")
    w = 0.5 * (w + w.T)
    _cholesky(w, NonPositiveDefiniteWeight, "weight matrix")
    return w


def ridge_solve(k, w, b, lam: float) -> np.ndarray:
    """Return ``(k' w k + lam I)^{-1} k' w b``.

    With ``w = L L'`` (Cholesky) and the thin SVD ``L'k = U S V'`` the
    solution is ``V diag(s / (s^2 + lam)) U' L'b``. This is the same
    closed form as the normal equations but keeps its accuracy when
    ``lam`` is many orders below ``s_max^2``, where forming ``k'wk``
    would lose about ``s_max^2 / lam`` in relative precision. Singular
    values below the :func:`pinv` cutoff count as zero.

    Parameters
    ----------
    k : (p, q) array
    w : (p, p) symmetric positive-definite weight
    b : (p,) array
    lam : float
        Ridge penalty, ``>= 0``. With ``lam == 0`` the whitened ``k`` must
        have full column rank or :class:`SingularSystem` is raised.
    """
    k = _as_finite_matrix(k)
    w = check_weight(w)
    b = np.asarray(b, dtype=float).reshape(-1)
    if w.shape[0] != k.shape[0] or b.size != k.shape[0]:
        raise DomainError(
            f"shape mismatch: k {k.shape}, w {w.shape}, b {b.shape}"
        )
    if not np.isfinite(lam) or lam < 0:
        raise DomainError("lambda must be finite and non-negative")
    return ridge_operator(k, w, lam) @ b


def ridge_operator(k, w, lam: float) -> np.ndarray:
    """The ``q x p`` matrix ``(k' w k + lam I)^{-1} k' w`` (see :func:`ridge_solve`)."""
    k = _as_finite_matrix(k)
    w = check_weight(w)
    if w.shape[0] != k.shape[0]:
        raise DomainError(f"shape mismatch: k {k.shape}, w {w.shape}")
    if not np.isfinite(lam) or lam < 0:
        raise DomainError("lambda must be finite and non-negative")
    chol = np.linalg.cholesky(w)
    u, s, vt = np.linalg.svd(chol.T @ k, full_matrices=False)
    noise = s <= default_rtol(k.shape) * (s[0] if s.size else 0.0)
    if lam == 0:
        if s.size < k.shape[1] or np.any(noise):
            raise SingularSystem("k' w k is singular and lambda is zero")
        scale = 1.0 / s
    else:
        # rounding-level singular values are exact zeros, as in pinv; 1/lam would amplify them
        scale = np.where(noise, 0.0, s / (s * s + lam))
    return (vt.T * scale) @ (chol @ u).T


# normal distribution -------------------------------------------------------

_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        return num / den
    if p > 1.0 - _P_LOW:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF.

    Rational approximation followed by one Newton step against the
    erfc-based CDF. Upper-tail arguments are mapped to the lower tail so
    the refinement works on a well-conditioned residual.
    """
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        return -normal_quantile(1.0 - p)
    x = _acklam(p)
    resid = normal_cdf(x) - p
    density = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return x - resid / density
