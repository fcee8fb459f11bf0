"""A small Monte Carlo study of interval coverage.

Run with ``python3 demos/03_coverage.py``. The replication count is kept
low so the script finishes in seconds; raise it for a real study.
"""

from __future__ import annotations

from _design import design

from minbridge.harness import ScenarioConfig, coverage_summary, run_scenario

scenario = ScenarioConfig(
    dgp=design(),
    estimators=("did", "bridge_identity", "bridge_two_stage"),
    replications=100,
    master_seed=3,
    sweep={"n_units": [1000, 4000]},
)
report = run_scenario(scenario)
print(report.summary[["n_units", "estimator", "mean_bias", "rmse", "coverage", "n_ok"]].to_string(index=False))
print()
print(coverage_summary(report)[["n_units", "estimator", "coverage", "lower", "upper", "pass"]].to_string(index=False))
