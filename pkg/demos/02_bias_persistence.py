"""Horizontal regression bias does not shrink with N; the bridge error does.

Run with ``python3 demos/02_bias_persistence.py``.
"""

from __future__ import annotations

import numpy as np
from _design import design

from minbridge import estimate_bridge, estimate_horizontal, simulate

print(f"{'N':>7s} {'horizontal':>12s} {'bridge':>10s}")
for n in (500, 2000, 8000, 32000):
    h_err, b_err = [], []
    for seed in range(20):
        data, truth = simulate(design(n_units=n), seed=seed)
        h_err.append(estimate_horizontal(data).gamma_hat - truth.gamma_true_sample)
        b_err.append(estimate_bridge(data).gamma_hat - truth.gamma_true_sample)
    print(f"{n:7d} {np.mean(h_err):12.4f} {np.mean(b_err):10.4f}")
