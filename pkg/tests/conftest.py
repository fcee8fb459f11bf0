from __future__ import annotations

import numpy as np
import pytest

from minbridge import FactorDgpConfig, SelectionModel

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: dict[int, tuple[bool, str]] = {}


def report_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


# r=2 factors, T0=4, T1=3, one Gaussian covariate (d=1) and no intercept
MAIN_LOADINGS = np.array(
    [[1, 0.2], [0.3, 1], [1, -0.5], [-0.4, 1], [0.8, 0.6], [1, 0.3], [0.2, 1], [-0.6, 0.9]], dtype=float
)
MAIN_COV = np.array([[0.5], [1], [-0.5], [0.2], [0.3], [0.8], [-0.2], [0.4]], dtype=float)


def main_config(n_units: int = 2000, noise_sigma: float = 1.0) -> FactorDgpConfig:
    return FactorDgpConfig(
        n_units=n_units,
        n_pre=4,
        n_post=3,
        loadings=MAIN_LOADINGS,
        cov_coefs=MAIN_COV,
        intercept=False,
        covariate_mean=[0.5],
        covariate_cov=[[1.0]],
        noise_sigma=noise_sigma,
        selection=SelectionModel(coef_u=[0.6, -0.4]),
    )


@pytest.fixture
def main_dgp():
    return main_config()


def random_factor_config(rng: np.random.Generator, r: int, n_pre: int, n_post: int | None = None, **kw):
    """Generic identified factor configuration with an intercept."""
    n_post = r + 1 if n_post is None else n_post
    t = n_pre + 1 + n_post
    a = rng.normal(size=(r, r))
    return FactorDgpConfig(
        n_units=kw.pop("n_units", 1000),
        n_pre=n_pre,
        n_post=n_post,
        loadings=rng.normal(size=(t, r)),
        cov_coefs=rng.normal(size=(t, 1)),
        intercept=True,
        confounder_mean=rng.normal(scale=0.5, size=r),
        confounder_cov=a @ a.T / r + 0.5 * np.eye(r),
        noise_sigma=kw.pop("noise_sigma", 1.0),
        selection=SelectionModel(coef_u=rng.normal(scale=0.6, size=r), intercept=float(rng.normal(scale=0.3))),
        **kw,
    )
