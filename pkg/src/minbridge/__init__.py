"""Minimal-bridge regularized GMM for counterfactual means in factor-model panels."""

from __future__ import annotations

__version__ = "0.1.0"

from .exceptions import EstimationError, MinbridgeError, ValidationError  # noqa: E402
from .panel import PanelDataset, aggregate_target, load_panel_csv, validate_panel, write_panel_csv  # noqa: E402
from .dgp import (  # noqa: E402
    ArDgpConfig,
    FactorDgpConfig,
    GroundTruth,
    SelectionModel,
    simulate,
    simulate_ar,
    simulate_factor,
    simulate_twfe,
    twfe_config,
)
from .bridge import (  # noqa: E402
    BridgeCoefficients,
    EstimateResult,
    Fixed,
    Identity,
    JointWeight,
    MomentSystem,
    OptimalTwoStage,
    build_moment_system,
    default_lambda,
    estimate_bridge,
    estimate_population_mean,
    estimate_treated_mean,
    fit_bridge,
    fit_bridge_weighted_M,
    fit_two_stage,
    influence_values,
    variance_and_ci,
)
from .baselines import (  # noqa: E402
    bias_oracle_horizontal,
    bias_oracle_vertical,
    estimate_did,
    estimate_factor4step,
    estimate_horizontal,
    estimate_vertical,
)
from .oracle import (  # noqa: E402
    asymptotic_variance_oracle,
    bridge_set,
    identification_check,
    population_K_b,
    theta_M_oracle,
    theta_min_oracle,
    tv_rank_matrix,
)
