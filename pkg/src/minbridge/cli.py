"""Command-line entry points.

``minbridge simulate``, ``estimate``, ``mc`` and ``oracle-check``. Exit
status is 0 on success, 2 on invalid input and 3 when estimation fails.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .baselines import estimate_did, estimate_factor4step, estimate_horizontal, estimate_vertical
from .bridge import Identity, estimate_bridge, estimate_population_mean, fit_two_stage
from .dgp import ArDgpConfig, config_hash, load_config, simulate
from .exceptions import EstimationError, MinbridgeError, ValidationError
from .harness import load_scenario, run_scenario
from .oracle import identification_check, tv_rank_matrix
from .panel import load_panel_csv, write_panel_csv

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION = 0, 2, 3

METHODS = (
    "did",
    "horizontal",
    "vertical",
    "factor4step",
    "bridge_identity",
    "bridge_two_stage",
    "bridge_population",
)


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    data, truth = simulate(config, args.seed)
    header = {
        "config_hash": config_hash(config),
        "seed": args.seed,
        "kind": config.kind,
        "gamma_true_sample": truth.gamma_true_sample,
        "gamma_true_population": truth.gamma_true_population,
        "code_version": __version__,
    }
    write_panel_csv(data, args.out, header=header)
    return EXIT_OK


def _cmd_estimate(args) -> int:
    data = load_panel_csv(args.data)
    lam_kw = dict(lambda_c=args.lambda_c, lambda_beta=args.lambda_beta, rho=args.rho)
    method = args.method
    if method == "bridge_identity":
        out = estimate_bridge(data, Identity(), None, **lam_kw).to_dict()
    elif method == "bridge_two_stage":
        out = fit_two_stage(data, None, None, **lam_kw).to_dict()
    elif method == "bridge_population":
        out = estimate_population_mean(data, None, **lam_kw).to_dict()
    else:
        if method == "did":
            est = estimate_did(data)
        elif method == "horizontal":
            est = estimate_horizontal(data)
        elif method == "vertical":
            est = estimate_vertical(data)
        else:
            est = estimate_factor4step(data, args.rank)
        out = {"gamma_hat": est.gamma_hat, "method": est.method, "flags": list(est.flags)}
    out["method"] = method
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_mc(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario)
    report.to_csv(args.out)
    if args.records:
        report.to_csv(args.records, which="records")
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    config = load_config(args.config)
    out = identification_check(config).to_dict()
    if isinstance(config, ArDgpConfig):
        tv = tv_rank_matrix(config, general=args.general)
        out["time_varying"] = {
            "rank": tv.rank,
            "margin": tv.margin,
            "post_rank": tv.post_rank,
            "post_margin": tv.post_margin,
            "ok": tv.ok,
            "rank_matrix": np.asarray(tv.rank_matrix).tolist(),
            "v_post_tilde": np.asarray(tv.v_post_tilde).tolist(),
        }
    out["config_hash"] = config_hash(config)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minbridge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a panel from a JSON configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the counterfactual mean from a panel CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--lambda-c", type=float, default=1.0)
    p.add_argument("--lambda-beta", type=float, default=0.75)
    p.add_argument("--rho", type=float, default=0.05)
    p.add_argument("--rank", type=int, default=1, help="number of factors for factor4step")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("mc", help="run a Monte Carlo scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--records", help="optional CSV of per-replication records")
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("oracle-check", help="print the identification report as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--general", action="store_true", help="general form of the time-varying rank matrix")
    p.set_defaults(func=_cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except EstimationError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (MinbridgeError, np.linalg.LinAlgError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
