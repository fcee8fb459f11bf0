"""Seeded simulators for linear factor panels.

Three data-generating processes are provided:

* :func:`simulate_factor` -- ``Y_t(0) = V_t'U + b_t'X + eps_t`` with a
  time-invariant confounder ``U``;
* :func:`simulate_twfe` -- the two-way fixed effect special case
  (``r = 1``, ``V_t = 1``), time effects entering through an intercept;
* :func:`simulate_ar` -- confounders following ``U_t = G_{t-1} U_{t-1} + eta_{t-1}``.

Treatment is assigned by a :class:`SelectionModel` acting on the confounder
(at ``t = 0`` for the AR process) and the covariates. Each configuration can
also report the exact population moments of ``(U, X)`` within the treated
and control arms, which the oracles build on.

Random numbers come from one Philox stream per (seed, variable) pair.
Every variable is drawn row-major with one row per unit, so the first
``n`` units of a panel do not change when ``n_units`` grows.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate

from .exceptions import ConfigInvalid
from .panel import PanelDataset

__all__ = [
    "SelectionModel",
    "FactorDgpConfig",
    "ArDgpConfig",
    "GroundTruth",
    "ArmMoments",
    "simulate_factor",
    "simulate_twfe",
    "simulate_ar",
    "simulate",
    "twfe_config",
    "config_from_dict",
    "load_config",
    "config_hash",
    "substream",
]

_TAGS = {"confounder": 1, "covariate": 2, "noise": 3, "treatment": 4, "innovation": 5}


def substream(seed: int, tag: str) -> np.random.Generator:
    """Independent counter-based generator for one (seed, variable) pair."""
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=(_TAGS[tag],))
    return np.random.Generator(np.random.Philox(ss))


def _array(value, shape: tuple[int, ...] | None = None, name: str = "") -> np.ndarray:
    arr = np.array(value, dtype=float)
    if shape is not None:
        if arr.size == 0 and 0 in shape:
            arr = arr.reshape(shape)
        if arr.shape != shape:
            raise ConfigInvalid(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigInvalid(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_psd(mat: np.ndarray, name: str) -> None:
    if mat.size == 0:
        return
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ConfigInvalid(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() < -1e-10 * max(1.0, np.abs(mat).max()):
        raise ConfigInvalid(f"{name} must be positive semidefinite")


def _psd_factor(mat: np.ndarray) -> np.ndarray:
    """Square root ``L`` with ``L @ L.T == mat`` for PSD (possibly singular) ``mat``."""
    if mat.size == 0:
        return mat.copy()
    w, q = np.linalg.eigh(mat)
    return q * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class SelectionModel:
    """Treatment assignment ``P(A=1 | U, X)``.

    ``kind="logistic"`` uses ``expit(intercept + coef_u'U + coef_x'X)`` with
    the index clipped so propensities stay within ``[clip, 1 - clip]``.
    ``kind="randomized"`` ignores ``U`` and ``X`` and assigns with the
    constant propensity ``expit(intercept)`` (clipped the same way).
    """

    coef_u: np.ndarray
    coef_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    kind: str = "logistic"
    clip: float = 0.01

    def __post_init__(self):
        if self.kind not in ("logistic", "randomized"):
            raise ConfigInvalid(f"unknown selection kind {self.kind!r}")
        if not (0.01 <= self.clip < 0.5):
            raise ConfigInvalid("selection clip must lie in [0.01, 0.5)")
        object.__setattr__(self, "coef_u", _array(self.coef_u, name="coef_u").reshape(-1))
        object.__setattr__(self, "coef_x", _array(self.coef_x, name="coef_x").reshape(-1))
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def index_bound(self) -> float:
        return math.log((1.0 - self.clip) / self.clip)

    def propensity_from_index(self, index) -> np.ndarray:
        bound = self.index_bound
        return 1.0 / (1.0 + np.exp(-np.clip(index, -bound, bound)))

    def linear_index(self, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        n = u.shape[0]
        if self.kind == "randomized":
            return np.full(n, self.intercept)
        out = self.intercept + u @ self.coef_u
        if self.coef_x.size:
            out = out + x @ self.coef_x
        return out

    def propensity(self, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.propensity_from_index(self.linear_index(u, x))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "coef_u": self.coef_u.tolist(),
            "coef_x": self.coef_x.tolist(),
            "intercept": self.intercept,
            "clip": self.clip,
        }


@dataclass(frozen=True)
class ArmMoments:
    """Moments of a latent vector within one treatment arm.

    ``second`` is the augmented second moment ``E[(1, L)(1, L)' | A = arm]``,
    so ``second[0, 1:]`` is the conditional mean.
    """

    prob: float
    second: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.second[0, 1:]

    @property
    def cov(self) -> np.ndarray:
        m = self.mean
        return self.second[1:, 1:] - np.outer(m, m)

    def transform(self, mat: np.ndarray) -> np.ndarray:
        """``E[v v' | arm]`` for ``v = mat @ (1, L)``."""
        return mat @ self.second @ mat.T


def _gaussian_arm_moments(mean, cov, coef, selection: SelectionModel, offset: float):
    """Exact arm moments of a Gaussian vector under a clipped-logistic selection.

    The index is ``offset + coef'L``. Writing ``L = mu + beta (s - m) + R``
    with ``s = coef'L`` and ``R`` independent of ``s`` reduces everything to
    three one-dimensional integrals, computed by adaptive quadrature with
    the clipping kinks as breakpoints.
    """
    mean = np.asarray(mean, float)
    cov = np.asarray(cov, float)
    k = mean.size
    coef = np.asarray(coef, float)
    m = float(coef @ mean)
    v = float(coef @ cov @ coef)
    out = {}
    if selection.kind == "randomized" or v <= 1e-14 * max(1.0, np.abs(cov).max()):
        p1 = float(selection.propensity_from_index(selection.intercept if selection.kind == "randomized" else offset + m))
        base = np.empty((k + 1, k + 1))
        base[0, 0] = 1.0
        base[0, 1:] = base[1:, 0] = mean
        base[1:, 1:] = cov + np.outer(mean, mean)
        return {1: ArmMoments(p1, base), 0: ArmMoments(1.0 - p1, base.copy())}

    sd = math.sqrt(v)
    bound = selection.index_bound
    lo_kink = (-bound - offset - m) / sd
    hi_kink = (bound - offset - m) / sd
    pts = [z for z in (lo_kink, hi_kink) if -12.0 < z < 12.0]

    def pi1(z):
        return float(selection.propensity_from_index(offset + m + sd * z))

    def expect(fn):
        dens = lambda z: fn(z) * math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        val, _ = integrate.quad(dens, -12.0, 12.0, points=pts or None, limit=200, epsabs=1e-14, epsrel=1e-13)
        return val

    p1 = expect(pi1)
    e1 = expect(lambda z: z * pi1(z))
    e2 = expect(lambda z: z * z * pi1(z))
    beta = cov @ coef / v
    resid = cov - np.outer(beta, beta) * v
    for arm, (p, ez, ez2) in {1: (p1, e1, e2), 0: (1.0 - p1, -e1, 1.0 - e2)}.items():
        cond_mean = mean + beta * sd * ez / p
        centred = np.outer(beta, beta) * v * ez2 / p + resid
        second = np.empty((k + 1, k + 1))
        second[0, 0] = 1.0
        second[0, 1:] = second[1:, 0] = cond_mean
        # E[(L-mu)(L-mu)'] plus mean correction
        d = cond_mean - mean
        second[1:, 1:] = centred + np.outer(mean, mean) + np.outer(mean, d) + np.outer(d, mean)
        second[1:, 1:] = 0.5 * (second[1:, 1:] + second[1:, 1:].T)
        out[arm] = ArmMoments(float(p), second)
    return out


class _ConfigBase:
    """Shared helpers for the factor and AR configurations."""

    @property
    def n_periods(self) -> int:
        return self.n_pre + 1 + self.n_post

    @property
    def n_cov(self) -> int:
        return int(self.intercept) + self.covariate_mean.size

    @property
    def n_factors(self) -> int:
        return self.loadings.shape[1]

    @property
    def effect_path(self) -> np.ndarray:
        eff = np.asarray(self.treatment_effect, dtype=float).reshape(-1)
        if eff.size == 1:
            return np.full(self.n_post + 1, float(eff[0]))
        return eff

    def noise_cov(self) -> np.ndarray:
        """Covariance of ``(eps_{-T0}, ..., eps_{T1})``.

        Equicorrelated within the ``pre + {0}`` block and within the post
        block, independent across the two blocks.
        """
        t = self.n_periods
        rho = self.noise_block_corr
        cov = np.zeros((t, t))
        split = self.n_pre + 1
        for sl in (slice(0, split), slice(split, t)):
            size = sl.stop - sl.start
            cov[sl, sl] = rho * np.ones((size, size)) + (1.0 - rho) * np.eye(size)
        return self.noise_sigma**2 * cov

    def _common_checks(self):
        t = self.n_periods
        if self.n_units < 1 or self.n_pre < 1 or self.n_post < 1:
            raise ConfigInvalid("need n_units >= 1, n_pre >= 1 and n_post >= 1")
        object.__setattr__(self, "covariate_mean", _array(self.covariate_mean, name="covariate_mean").reshape(-1))
        dx = self.covariate_mean.size
        object.__setattr__(self, "covariate_cov", _array(self.covariate_cov, (dx, dx), "covariate_cov"))
        _check_psd(self.covariate_cov, "covariate_cov")
        loadings = _array(self.loadings, name="loadings")
        if loadings.ndim == 1:
            loadings = loadings.reshape(-1, 1)
        if loadings.shape[0] != t:
            raise ConfigInvalid(f"loadings must have {t} rows (T0+1+T1), got {loadings.shape[0]}")
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "cov_coefs", _array(self.cov_coefs, (t, self.n_cov), "cov_coefs"))
        if self.noise_sigma < 0:
            raise ConfigInvalid("noise_sigma must be non-negative")
        if not (0.0 <= self.noise_block_corr < 1.0):
            raise ConfigInvalid("noise_block_corr must lie in [0, 1)")
        eff = np.asarray(self.treatment_effect, dtype=float).reshape(-1)
        if eff.size not in (1, self.n_post + 1):
            raise ConfigInvalid("treatment_effect must be a scalar or have T1+1 entries")
        if isinstance(self.selection, dict):
            object.__setattr__(self, "selection", SelectionModel(**self.selection))
        sel = self.selection
        if sel.coef_u.size != self.n_factors:
            raise ConfigInvalid("selection.coef_u must have one entry per factor")
        if sel.coef_x.size not in (0, self.n_cov):
            raise ConfigInvalid("selection.coef_x must be empty or have n_cov entries")

    def _selection_offset_and_x_coef(self) -> tuple[float, np.ndarray]:
        """Split ``coef_x`` into a constant offset and the non-constant part."""
        cx = self.selection.coef_x
        if cx.size == 0:
            return self.selection.intercept, np.zeros(self.covariate_mean.size)
        if self.intercept:
            return self.selection.intercept + cx[0], cx[1:]
        return self.selection.intercept, cx

    def _draw_covariates(self, seed: int, n: int) -> np.ndarray:
        dx = self.covariate_mean.size
        cols = []
        if self.intercept:
            cols.append(np.ones((n, 1)))
        if dx:
            z = substream(seed, "covariate").standard_normal((n, dx))
            cols.append(self.covariate_mean + z @ _psd_factor(self.covariate_cov).T)
        return np.hstack(cols) if cols else np.zeros((n, 0))

    def _draw_noise(self, seed: int, n: int) -> np.ndarray:
        z = substream(seed, "noise").standard_normal((n, self.n_periods))
        if self.noise_block_corr == 0.0:
            return self.noise_sigma * z
        return z @ np.linalg.cholesky(self.noise_cov()).T

    def _assign(self, seed: int, u: np.ndarray, x: np.ndarray) -> np.ndarray:
        prop = self.selection.propensity(u, x)
        draw = substream(seed, "treatment").random(u.shape[0])
        return (draw < prop).astype(float)

    def _observe(self, y0: np.ndarray, a: np.ndarray, x: np.ndarray) -> PanelDataset:
        y = y0.copy()
        t0 = self.n_pre
        y[a == 1.0, t0:] += self.effect_path
        return PanelDataset(
            treatment=a, covariates=x, y_pre=y[:, :t0], y_target=y[:, t0], y_post=y[:, t0 + 1 :]
        )

    def _x_embedding(self, n_latent: int, x_start: int) -> np.ndarray:
        """Rows mapping augmented latent ``(1, L)`` to ``X``."""
        dx = self.covariate_mean.size
        rows = []
        if self.intercept:
            r = np.zeros(1 + n_latent)
            r[0] = 1.0
            rows.append(r)
        for j in range(dx):
            r = np.zeros(1 + n_latent)
            r[1 + x_start + j] = 1.0
            rows.append(r)
        return np.array(rows).reshape(len(rows), 1 + n_latent)

    def with_units(self, n_units: int):
        return dataclasses.replace(self, n_units=int(n_units))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def arm_moments(self, method: str = "exact", n_draws: int = 10**6, seed: int = 20240607):
        """Moments of ``(U, X)`` (``(U_0, X)`` for the AR process) in each arm.

        Returns ``{1: ArmMoments, 0: ArmMoments}`` for the augmented vector
        ``(1, U, X)``. ``method="exact"`` integrates the selection model
        against the Gaussian latent law; ``method="plugin"`` averages over
        ``n_draws`` simulated units with a fixed seed.
        """
        if method == "exact":
            return _cached_arm_moments(self.to_json())
        if method == "plugin":
            return self._plugin_moments(n_draws, seed)
        raise ConfigInvalid(f"unknown moment method {method!r}")

    def _plugin_moments(self, n_draws: int, seed: int):
        big = self.with_units(n_draws)
        data, truth = simulate(big, seed)
        u = truth.confounders if truth.confounders.ndim == 2 else truth.confounders[:, self.n_pre, :]
        v = np.column_stack([np.ones(n_draws), u, data.covariates])
        out = {}
        for arm in (1, 0):
            sel = data.treatment == arm
            vv = v[sel]
            out[arm] = ArmMoments(float(sel.mean()), vv.T @ vv / sel.sum())
        return out


@dataclass(frozen=True)
class FactorDgpConfig(_ConfigBase):
    """Linear factor model with a time-invariant Gaussian confounder.

    ``loadings`` has one row ``V_t'`` per period ``t = -T0..T1`` and
    ``cov_coefs`` one row ``b_t'``. With ``intercept=True`` the first
    covariate column is the constant 1 and ``covariate_mean`` /
    ``covariate_cov`` describe the remaining Gaussian columns.
    """

    n_units: int
    n_pre: int
    n_post: int
    loadings: np.ndarray
    selection: SelectionModel
    cov_coefs: np.ndarray = None
    confounder_mean: np.ndarray = None
    confounder_cov: np.ndarray = None
    intercept: bool = False
    covariate_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    covariate_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    noise_sigma: float = 1.0
    noise_block_corr: float = 0.0
    treatment_effect: Any = 0.0

    kind = "factor"

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.loadings, float)).shape[-1]
        if np.asarray(self.loadings).ndim == 1:
            r = 1
        t = self.n_pre + 1 + self.n_post
        if self.cov_coefs is None:
            d = int(self.intercept) + np.asarray(self.covariate_mean).size
            object.__setattr__(self, "cov_coefs", np.zeros((t, d)))
        if self.confounder_mean is None:
            object.__setattr__(self, "confounder_mean", np.zeros(r))
        if self.confounder_cov is None:
            object.__setattr__(self, "confounder_cov", np.eye(r))
        self._common_checks()
        r = self.n_factors
        object.__setattr__(self, "confounder_mean", _array(self.confounder_mean, name="confounder_mean").reshape(-1))
        if self.confounder_mean.size != r:
            raise ConfigInvalid("confounder_mean must have one entry per factor")
        object.__setattr__(self, "confounder_cov", _array(self.confounder_cov, (r, r), "confounder_cov"))
        _check_psd(self.confounder_cov, "confounder_cov")

    def latent_law(self):
        """Mean and covariance of ``L = (U, X_nonconstant)``."""
        r, dx = self.n_factors, self.covariate_mean.size
        mean = np.concatenate([self.confounder_mean, self.covariate_mean])
        cov = np.zeros((r + dx, r + dx))
        cov[:r, :r] = self.confounder_cov
        cov[r:, r:] = self.covariate_cov
        return mean, cov

    def ux_embedding(self) -> np.ndarray:
        """Matrix mapping ``(1, L)`` to ``(1, U, X)``."""
        r = self.n_factors
        k = r + self.covariate_mean.size
        top = np.zeros((1 + r, 1 + k))
        top[0, 0] = 1.0
        top[1:, 1 : 1 + r] = np.eye(r)
        return np.vstack([top, self._x_embedding(k, r)])

    def _exact_moments(self):
        mean, cov = self.latent_law()
        offset, cx = self._selection_offset_and_x_coef()
        coef = np.concatenate([self.selection.coef_u, cx])
        latent = _gaussian_arm_moments(mean, cov, coef, self.selection, offset)
        emb = self.ux_embedding()
        return {a: ArmMoments(mom.prob, emb @ mom.second @ emb.T) for a, mom in latent.items()}

    def to_dict(self) -> dict:
        return {
            "kind": "factor",
            "n_units": self.n_units,
            "n_pre": self.n_pre,
            "n_post": self.n_post,
            "loadings": self.loadings.tolist(),
            "cov_coefs": self.cov_coefs.tolist(),
            "confounder_mean": self.confounder_mean.tolist(),
            "confounder_cov": self.confounder_cov.tolist(),
            "intercept": bool(self.intercept),
            "covariate_mean": self.covariate_mean.tolist(),
            "covariate_cov": self.covariate_cov.tolist(),
            "noise_sigma": float(self.noise_sigma),
            "noise_block_corr": float(self.noise_block_corr),
            "selection": self.selection.to_dict(),
            "treatment_effect": np.asarray(self.treatment_effect, float).tolist(),
        }


@dataclass(frozen=True)
class ArDgpConfig(_ConfigBase):
    """Factor model whose confounders follow a first-order autoregression.

    ``transitions[j]`` is ``Gamma_t`` for ``t = -T0 + j`` (``T0 + T1`` of
    them) and ``innovation_cov`` is either one ``r x r`` matrix or one per
    transition. ``init_mean`` / ``init_cov`` describe ``U_{-T0}``.
    Selection acts on ``(U_0, X)``. With ``joint_normal=False`` the
    initial state and innovations are standardized centred exponentials
    (same first two moments, skewed).
    """

    n_units: int
    n_pre: int
    n_post: int
    loadings: np.ndarray
    transitions: np.ndarray
    innovation_cov: np.ndarray
    selection: SelectionModel
    cov_coefs: np.ndarray = None
    init_mean: np.ndarray = None
    init_cov: np.ndarray = None
    intercept: bool = True
    covariate_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    covariate_cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    noise_sigma: float = 1.0
    noise_block_corr: float = 0.0
    treatment_effect: Any = 0.0
    joint_normal: bool = True

    kind = "ar"

    def __post_init__(self):
        loadings = np.asarray(self.loadings, float)
        r = 1 if loadings.ndim == 1 else loadings.shape[1]
        t = self.n_pre + 1 + self.n_post
        if self.cov_coefs is None:
            d = int(self.intercept) + np.asarray(self.covariate_mean).size
            object.__setattr__(self, "cov_coefs", np.zeros((t, d)))
        if self.init_mean is None:
            object.__setattr__(self, "init_mean", np.zeros(r))
        if self.init_cov is None:
            object.__setattr__(self, "init_cov", np.eye(r))
        self._common_checks()
        r = self.n_factors
        steps = t - 1
        gam = _array(self.transitions, name="transitions")
        if gam.ndim == 0 or (gam.ndim == 2 and r == 1 and gam.shape == (1, 1)):
            gam = np.broadcast_to(gam.reshape(1, 1, 1) if gam.ndim == 0 else gam[None], (steps, r, r))
        elif gam.ndim == 1 and r == 1:
            gam = gam.reshape(-1, 1, 1)
        elif gam.ndim == 2:
            gam = np.broadcast_to(gam, (steps, r, r))
        gam = _array(gam, (steps, r, r), "transitions")
        object.__setattr__(self, "transitions", gam)
        inn = _array(self.innovation_cov, name="innovation_cov")
        if inn.ndim == 0:
            inn = inn.reshape(1, 1)
        if inn.ndim == 2:
            inn = np.broadcast_to(inn, (steps, r, r))
        inn = _array(inn, (steps, r, r), "innovation_cov")
        for j in range(steps):
            _check_psd(inn[j], "innovation_cov")
        object.__setattr__(self, "innovation_cov", inn)
        object.__setattr__(self, "init_mean", _array(self.init_mean, name="init_mean").reshape(-1))
        if self.init_mean.size != r:
            raise ConfigInvalid("init_mean must have one entry per factor")
        object.__setattr__(self, "init_cov", _array(self.init_cov, (r, r), "init_cov"))
        _check_psd(self.init_cov, "init_cov")

    # latent vector L = (U_{-T0}, eta_{-T0}, ..., eta_{T1-1}, X_nonconstant)

    def latent_law(self):
        r, steps, dx = self.n_factors, self.n_periods - 1, self.covariate_mean.size
        k = r * (steps + 1) + dx
        mean = np.zeros(k)
        cov = np.zeros((k, k))
        mean[:r] = self.init_mean
        cov[:r, :r] = self.init_cov
        for j in range(steps):
            sl = slice(r * (j + 1), r * (j + 2))
            cov[sl, sl] = self.innovation_cov[j]
        mean[k - dx :] = self.covariate_mean
        cov[k - dx :, k - dx :] = self.covariate_cov
        return mean, cov

    def state_maps(self) -> np.ndarray:
        """``P[j]`` with ``U_{t_j} = P[j] @ L`` for every period index ``j``."""
        r, steps, dx = self.n_factors, self.n_periods - 1, self.covariate_mean.size
        k = r * (steps + 1) + dx
        maps = np.zeros((steps + 1, r, k))
        maps[0, :, :r] = np.eye(r)
        for j in range(steps):
            maps[j + 1] = self.transitions[j] @ maps[j]
            maps[j + 1][:, r * (j + 1) : r * (j + 2)] += np.eye(r)
        return maps

    def ux_embedding(self) -> np.ndarray:
        """Matrix mapping ``(1, L)`` to ``(1, U_0, X)``."""
        r = self.n_factors
        maps = self.state_maps()
        k = maps.shape[2]
        top = np.zeros((1 + r, 1 + k))
        top[0, 0] = 1.0
        top[1:, 1:] = maps[self.n_pre]
        return np.vstack([top, self._x_embedding(k, k - self.covariate_mean.size)])

    def latent_arm_moments(self):
        """Arm moments of the augmented latent vector ``(1, L)`` (Gaussian case)."""
        if not self.joint_normal:
            raise ConfigInvalid("exact latent moments require joint_normal=True")
        return _cached_latent_moments(self.to_json())

    def _latent_exact(self):
        mean, cov = self.latent_law()
        offset, cx = self._selection_offset_and_x_coef()
        u0_map = self.state_maps()[self.n_pre]
        coef = self.selection.coef_u @ u0_map
        coef = coef.copy()
        dx = self.covariate_mean.size
        if dx:
            coef[coef.size - dx :] += cx
        return _gaussian_arm_moments(mean, cov, coef, self.selection, offset)

    def _exact_moments(self):
        latent = self.latent_arm_moments()
        emb = self.ux_embedding()
        return {a: ArmMoments(mom.prob, emb @ mom.second @ emb.T) for a, mom in latent.items()}

    def to_dict(self) -> dict:
        return {
            "kind": "ar",
            "n_units": self.n_units,
            "n_pre": self.n_pre,
            "n_post": self.n_post,
            "loadings": self.loadings.tolist(),
            "cov_coefs": self.cov_coefs.tolist(),
            "transitions": self.transitions.tolist(),
            "innovation_cov": self.innovation_cov.tolist(),
            "init_mean": self.init_mean.tolist(),
            "init_cov": self.init_cov.tolist(),
            "intercept": bool(self.intercept),
            "covariate_mean": self.covariate_mean.tolist(),
            "covariate_cov": self.covariate_cov.tolist(),
            "noise_sigma": float(self.noise_sigma),
            "noise_block_corr": float(self.noise_block_corr),
            "selection": self.selection.to_dict(),
            "treatment_effect": np.asarray(self.treatment_effect, float).tolist(),
            "joint_normal": bool(self.joint_normal),
        }


@lru_cache(maxsize=64)
def _cached_arm_moments(key: str):
    return config_from_dict(json.loads(key))._exact_moments()


@lru_cache(maxsize=64)
def _cached_latent_moments(key: str):
    return config_from_dict(json.loads(key))._latent_exact()


@dataclass(frozen=True)
class GroundTruth:
    """Latent pieces and true targets behind a simulated panel.

    ``confounders`` is ``(N, r)`` for the factor model and ``(N, T, r)``
    for the AR process. ``gamma_true_sample`` is the treated units' mean
    of ``Y_0(0)``; ``gamma_true_population`` is ``E[Y_0(0) | A = 1]``.
    The ``whole_*`` fields are the analogous means over all units.
    """

    confounders: np.ndarray
    potential_y0: np.ndarray
    noise: np.ndarray
    gamma_true_sample: float | None
    gamma_true_population: float | None
    whole_sample_mean: float
    whole_population_mean: float | None
    config: Any
    treatment: np.ndarray | None = None
    covariates: np.ndarray | None = None

    def subset(self, index) -> "GroundTruth":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return dataclasses.replace(
            self,
            confounders=self.confounders[index],
            potential_y0=self.potential_y0[index],
            noise=self.noise[index],
            treatment=None if self.treatment is None else self.treatment[index],
            covariates=None if self.covariates is None else self.covariates[index],
            gamma_true_sample=_treated_mean(self.potential_y0[index], None if self.treatment is None else self.treatment[index], self.config.n_pre),
            whole_sample_mean=float(self.potential_y0[index, self.config.n_pre].mean()),
        )


def _treated_mean(y0, a, t0):
    if a is None or not np.any(a == 1.0):
        return None
    return float(y0[a == 1.0, t0].mean())


def _population_targets(config) -> tuple[float | None, float | None]:
    t0 = config.n_pre
    coef = np.concatenate([[0.0], config.loadings[t0], config.cov_coefs[t0]])
    try:
        mom = config.arm_moments()
    except ConfigInvalid:
        return None, None
    gamma = float(coef @ mom[1].second[:, 0])
    whole = float(coef @ (mom[1].prob * mom[1].second[:, 0] + mom[0].prob * mom[0].second[:, 0]))
    return gamma, whole


def _finish(config, u, x, noise, a, y0, confounders) -> tuple[PanelDataset, GroundTruth]:
    t0 = config.n_pre
    treated = a == 1.0
    gamma_s = float(y0[treated, t0].mean()) if treated.any() else None
    gamma_p, whole_p = _population_targets(config)
    truth = GroundTruth(
        confounders=confounders,
        potential_y0=y0,
        noise=noise,
        gamma_true_sample=gamma_s,
        gamma_true_population=gamma_p,
        whole_sample_mean=float(y0[:, t0].mean()),
        whole_population_mean=whole_p,
        config=config,
        treatment=a,
        covariates=x,
    )
    return config._observe(y0, a, x), truth


def simulate_factor(config: FactorDgpConfig, seed: int) -> tuple[PanelDataset, GroundTruth]:
    """Draw a panel from the linear factor model."""
    if not isinstance(config, FactorDgpConfig):
        raise ConfigInvalid("simulate_factor needs a FactorDgpConfig")
    n, r = config.n_units, config.n_factors
    z = substream(seed, "confounder").standard_normal((n, r))
    u = config.confounder_mean + z @ _psd_factor(config.confounder_cov).T
    x = config._draw_covariates(seed, n)
    noise = config._draw_noise(seed, n)
    a = config._assign(seed, u, x)
    y0 = u @ config.loadings.T + x @ config.cov_coefs.T + noise
    return _finish(config, u, x, noise, a, y0, u)


def twfe_config(
    n_units: int,
    n_pre: int,
    n_post: int,
    time_effects=None,
    unit_mean: float = 0.0,
    unit_sd: float = 1.0,
    noise_sigma: float = 1.0,
    selection_coef: float = 1.0,
    selection_intercept: float = 0.0,
    treatment_effect=0.0,
) -> FactorDgpConfig:
    """Configuration for ``Y_t(0) = U + b_t + eps_t``.

    Time effects ``b_t`` enter through a constant covariate; with
    ``time_effects=None`` there are no covariates at all.
    """
    t = n_pre + 1 + n_post
    intercept = time_effects is not None
    cov_coefs = np.asarray(time_effects, float).reshape(t, 1) if intercept else np.zeros((t, 0))
    return FactorDgpConfig(
        n_units=n_units,
        n_pre=n_pre,
        n_post=n_post,
        loadings=np.ones((t, 1)),
        cov_coefs=cov_coefs,
        confounder_mean=[unit_mean],
        confounder_cov=[[unit_sd**2]],
        intercept=intercept,
        noise_sigma=noise_sigma,
        selection=SelectionModel(coef_u=[selection_coef], intercept=selection_intercept),
        treatment_effect=treatment_effect,
    )


def simulate_twfe(config: FactorDgpConfig, seed: int) -> tuple[PanelDataset, GroundTruth]:
    """Simulate the two-way fixed effect model (see :func:`twfe_config`)."""
    if config.n_factors != 1 or not np.all(config.loadings == 1.0):
        raise ConfigInvalid("TWFE requires a single factor with unit loadings")
    if config.covariate_mean.size or (config.n_cov and not config.intercept):
        raise ConfigInvalid("TWFE allows only an intercept covariate")
    return simulate_factor(config, seed)


def _exp_standard(gen: np.random.Generator, shape) -> np.ndarray:
    return gen.standard_exponential(shape) - 1.0


def simulate_ar(config: ArDgpConfig, seed: int) -> tuple[PanelDataset, GroundTruth]:
    """Draw a panel whose confounders follow the configured autoregression."""
    if not isinstance(config, ArDgpConfig):
        raise ConfigInvalid("simulate_ar needs an ArDgpConfig")
    n, r, t = config.n_units, config.n_factors, config.n_periods
    gen_u = substream(seed, "confounder")
    gen_eta = substream(seed, "innovation")
    if config.joint_normal:
        z0 = gen_u.standard_normal((n, r))
        zeta = gen_eta.standard_normal((n, (t - 1) * r))
    else:
        z0 = _exp_standard(gen_u, (n, r))
        zeta = _exp_standard(gen_eta, (n, (t - 1) * r))
    states = np.empty((n, t, r))
    states[:, 0] = config.init_mean + z0 @ _psd_factor(config.init_cov).T
    for j in range(t - 1):
        eta = zeta[:, j * r : (j + 1) * r] @ _psd_factor(config.innovation_cov[j]).T
        states[:, j + 1] = states[:, j] @ config.transitions[j].T + eta
    x = config._draw_covariates(seed, n)
    noise = config._draw_noise(seed, n)
    a = config._assign(seed, states[:, config.n_pre], x)
    y0 = np.einsum("ntr,tr->nt", states, config.loadings) + x @ config.cov_coefs.T + noise
    return _finish(config, states[:, 0], x, noise, a, y0, states)


def simulate(config, seed: int) -> tuple[PanelDataset, GroundTruth]:
    """Dispatch on the configuration type."""
    if isinstance(config, ArDgpConfig):
        return simulate_ar(config, seed)
    return simulate_factor(config, seed)


def config_from_dict(raw: dict):
    raw = dict(raw)
    kind = raw.pop("kind", "factor")
    if "selection" in raw and isinstance(raw["selection"], dict):
        raw["selection"] = SelectionModel(**raw["selection"])
    cls = {"factor": FactorDgpConfig, "twfe": FactorDgpConfig, "ar": ArDgpConfig}.get(kind)
    if cls is None:
        raise ConfigInvalid(f"unknown dgp kind {kind!r}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigInvalid(f"unknown config fields: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as err:
        raise ConfigInvalid(str(err)) from err


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigInvalid(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    return config_from_dict(raw.get("dgp", raw))


def config_hash(config) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:16]
