"""Shared two-factor design used by the demo scripts."""

from __future__ import annotations

import numpy as np

from minbridge import FactorDgpConfig, SelectionModel

LOADINGS = np.array(
    [[1, 0.2], [0.3, 1], [1, -0.5], [-0.4, 1], [0.8, 0.6], [1, 0.3], [0.2, 1], [-0.6, 0.9]], dtype=float
)
COV_COEFS = np.array([[0.5], [1], [-0.5], [0.2], [0.3], [0.8], [-0.2], [0.4]], dtype=float)


def design(n_units: int = 2000, noise_sigma: float = 1.0) -> FactorDgpConfig:
    # two latent factors, four pre periods, three post periods, one covariate
    return FactorDgpConfig(
        n_units=n_units,
        n_pre=4,
        n_post=3,
        loadings=LOADINGS,
        cov_coefs=COV_COEFS,
        intercept=False,
        covariate_mean=[0.5],
        covariate_cov=[[1.0]],
        noise_sigma=noise_sigma,
        selection=SelectionModel(coef_u=[0.6, -0.4]),
    )
