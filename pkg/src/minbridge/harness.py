"""Monte Carlo replication of the estimators on simulated panels.

A :class:`ScenarioConfig` names a data-generating process, a list of
estimators, the number of replications and optional sweep axes (any
configuration field, typically ``n_units``). :func:`run_scenario`
simulates each replication from its own sub-seed, runs every estimator,
records failures instead of aborting, and folds the results in
replication order into a :class:`McReport`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd

from . import __version__
from .baselines import estimate_did, estimate_factor4step, estimate_horizontal, estimate_vertical
from .bridge import Identity, estimate_bridge, estimate_population_mean, fit_two_stage
from .dgp import config_from_dict, config_hash, simulate
from .exceptions import ConfigInvalid, MinbridgeError
from .panel import PanelDataset

__all__ = [
    "ESTIMATORS",
    "ScenarioConfig",
    "McReport",
    "replication_seed",
    "run_scenario",
    "coverage_band",
    "coverage_summary",
    "load_scenario",
]


@dataclass(frozen=True)
class _Outcome:
    gamma_hat: float
    ci_lo: float = math.nan
    ci_hi: float = math.nan
    lam: float = math.nan
    sigma2: float = math.nan


def _bridge(weight):
    def run(data: PanelDataset, cfg: "ScenarioConfig") -> _Outcome:
        res = estimate_bridge(data, weight, lambda_c=cfg.lambda_c, lambda_beta=cfg.lambda_beta, rho=cfg.rho)
        return _Outcome(res.gamma_hat, res.ci_lo, res.ci_hi, res.lambda_used, res.sigma2_hat)

    return run


def _two_stage(data, cfg):
    res = fit_two_stage(data, None, cfg.jitter, lambda_c=cfg.lambda_c, lambda_beta=cfg.lambda_beta, rho=cfg.rho)
    return _Outcome(res.gamma_hat, res.ci_lo, res.ci_hi, res.lambda_used, res.sigma2_hat)


def _population(data, cfg):
    res = estimate_population_mean(data, None, lambda_c=cfg.lambda_c, lambda_beta=cfg.lambda_beta, rho=cfg.rho)
    return _Outcome(res.gamma_hat, res.ci_lo, res.ci_hi, res.lambda_used, res.sigma2_hat)


def _baseline(fn):
    def run(data, cfg):
        return _Outcome(fn(data).gamma_hat)

    return run


def _factor(data, cfg):
    rank = cfg.factor_rank if cfg.factor_rank is not None else cfg.dgp.n_factors
    return _Outcome(estimate_factor4step(data, rank).gamma_hat)


ESTIMATORS: dict[str, Callable[[PanelDataset, Any], _Outcome]] = {
    "did": _baseline(estimate_did),
    "horizontal": _baseline(estimate_horizontal),
    "vertical": _baseline(estimate_vertical),
    "factor4step": _factor,
    "bridge_identity": _bridge(Identity()),
    "bridge_two_stage": _two_stage,
    "bridge_population": _population,
}

# estimators whose target is the whole-population mean rather than the treated mean
_WHOLE = {"bridge_population"}


@dataclass(frozen=True)
class ScenarioConfig:
    """One Monte Carlo study.

    ``sweep`` maps configuration field names to lists of values; the
    study runs on their Cartesian product. ``bias_target`` selects the
    sample (``"sample"``) or population (``"population"``) counterfactual
    mean for bias and RMSE; coverage is always reported against both.
    ``rep_offset`` shifts replication indices, so two half-size runs
    with offsets ``0`` and ``R/2`` reproduce one full run.
    """

    dgp: Any
    estimators: tuple = ("bridge_two_stage",)
    replications: int = 100
    master_seed: int = 0
    lambda_c: float = 1.0
    lambda_beta: float = 0.75
    rho: float = 0.05
    sweep: dict = field(default_factory=dict)
    bias_target: str = "sample"
    jitter: float | None = None
    factor_rank: int | None = None
    rep_offset: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigInvalid("replications must be at least 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ConfigInvalid(f"unknown estimators: {sorted(unknown)}")
        if self.bias_target not in ("sample", "population"):
            raise ConfigInvalid("bias_target must be 'sample' or 'population'")
        if not (0 < self.rho < 1):
            raise ConfigInvalid("rho must lie in (0, 1)")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        fields = {f.name for f in dataclasses.fields(self.dgp)}
        bad = set(self.sweep) - fields
        if bad:
            raise ConfigInvalid(f"sweep axes are not configuration fields: {sorted(bad)}")

    def points(self) -> list[dict]:
        if not self.sweep:
            return [{}]
        keys = list(self.sweep)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(self.sweep[k] for k in keys))]

    def to_dict(self) -> dict:
        return {
            "dgp": self.dgp.to_dict(),
            "estimators": list(self.estimators),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "lambda": {"c": self.lambda_c, "beta": self.lambda_beta},
            "rho": self.rho,
            "sweep": self.sweep,
            "bias_target": self.bias_target,
            "jitter": self.jitter,
            "factor_rank": self.factor_rank,
            "rep_offset": self.rep_offset,
        }

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = dict(raw)
        if "dgp" not in raw:
            raise ConfigInvalid("scenario needs a 'dgp' section")
        dgp = config_from_dict(raw.pop("dgp"))
        lam = raw.pop("lambda", {})
        if "c" in lam:
            raw["lambda_c"] = lam["c"]
        if "beta" in lam:
            raw["lambda_beta"] = lam["beta"]
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigInvalid(f"unknown scenario fields: {sorted(unknown)}")
        return cls(dgp=dgp, **raw)


def load_scenario(path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigInvalid(f"cannot read scenario {path}: {err}") from err
    return ScenarioConfig.from_dict(raw)


def replication_seed(master_seed: int, rep: int) -> int:
    """64-bit sub-seed for one replication."""
    state = np.random.SeedSequence([int(master_seed), int(rep)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def _one_replication(args) -> list[dict]:
    cfg, point, rep = args
    dgp = dataclasses.replace(cfg.dgp, **point) if point else cfg.dgp
    seed = replication_seed(cfg.master_seed, rep)
    rows = []
    try:
        data, truth = simulate(dgp, seed)
    except MinbridgeError as err:
        return [
            {**point, "rep": rep, "estimator": name, "error": f"{type(err).__name__}: {err}"}
            for name in cfg.estimators
        ]
    for name in cfg.estimators:
        row = {**point, "rep": rep, "estimator": name, "error": ""}
        if name in _WHOLE:
            row["truth_sample"] = truth.whole_sample_mean
            row["truth_population"] = truth.whole_population_mean
        else:
            row["truth_sample"] = truth.gamma_true_sample
            row["truth_population"] = truth.gamma_true_population
        try:
            out = ESTIMATORS[name](data, cfg)
            row.update(gamma_hat=out.gamma_hat, ci_lo=out.ci_lo, ci_hi=out.ci_hi, lam=out.lam, sigma2=out.sigma2)
        except (MinbridgeError, np.linalg.LinAlgError) as err:
            row["error"] = f"{type(err).__name__}: {err}"
        rows.append(row)
    return rows


_COLUMNS = ["rep", "estimator", "gamma_hat", "truth_sample", "truth_population", "ci_lo", "ci_hi", "lam", "sigma2", "error"]


@dataclass
class McReport:
    """Per-replication records and their aggregate summary."""

    records: pd.DataFrame
    summary: pd.DataFrame
    provenance: dict

    def estimates(self, estimator: str, **point) -> np.ndarray:
        sel = self.records["estimator"] == estimator
        for k, v in point.items():
            sel &= self.records[k] == v
        return self.records.loc[sel, "gamma_hat"].to_numpy(dtype=float)

    def row(self, estimator: str, **point) -> pd.Series:
        sel = self.summary["estimator"] == estimator
        for k, v in point.items():
            sel &= self.summary[k] == v
        out = self.summary.loc[sel]
        if len(out) != 1:
            raise KeyError(f"no unique summary row for {estimator} {point}")
        return out.iloc[0]

    def to_csv(self, path, which: str = "summary") -> None:
        frame = self.summary if which == "summary" else self.records
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for key in ("config_hash", "dgp_hash", "master_seed", "code_version"):
                fh.write(f"# {key}={self.provenance[key]}\n")
            frame.to_csv(fh, index=False, float_format="%.17g")


def _summarize(records: pd.DataFrame, axes: list[str]) -> pd.DataFrame:
    out = []
    keys = axes + ["estimator"]
    for key, grp in records.groupby(keys, sort=False):
        key = key if isinstance(key, tuple) else (key,)
        ok = grp[grp["error"] == ""]
        row = dict(zip(keys, key))
        row["replications"] = len(grp)
        row["failures"] = int((grp["error"] != "").sum())
        row["n_ok"] = len(ok)
        err = (ok["gamma_hat"] - ok["target"]).to_numpy(dtype=float)
        n_ok = err.size
        row["mean_bias"] = float(err.mean()) if n_ok else math.nan
        row["mc_se"] = float(err.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else math.nan
        row["rmse"] = float(math.sqrt(np.mean(err**2))) if n_ok else math.nan
        row["sd"] = float(err.std(ddof=1)) if n_ok > 1 else math.nan
        lo, hi = ok["ci_lo"].to_numpy(dtype=float), ok["ci_hi"].to_numpy(dtype=float)
        has_ci = np.isfinite(lo) & np.isfinite(hi)
        if has_ci.any():
            for label, col in (("coverage", "truth_population"), ("coverage_sample", "truth_sample")):
                tv = ok[col].to_numpy(dtype=float)
                good = has_ci & np.isfinite(tv)
                row[label] = float(np.mean((lo[good] <= tv[good]) & (tv[good] <= hi[good]))) if good.any() else math.nan
            row["mean_ci_width"] = float(np.mean(hi[has_ci] - lo[has_ci]))
            row["degenerate_ci"] = int(np.sum(hi[has_ci] - lo[has_ci] == 0.0))
        else:
            row["coverage"] = row["coverage_sample"] = row["mean_ci_width"] = math.nan
            row["degenerate_ci"] = 0
        row["mean_lambda"] = float(ok["lam"].mean()) if n_ok else math.nan
        out.append(row)
    return pd.DataFrame(out)


def run_scenario(cfg: ScenarioConfig) -> McReport:
    """Run every replication at every sweep point and aggregate."""
    tasks = [
        (cfg, point, rep)
        for point in cfg.points()
        for rep in range(cfg.rep_offset, cfg.rep_offset + cfg.replications)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_one_replication, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        chunks = [_one_replication(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    axes = list(cfg.sweep)
    records = pd.DataFrame(rows)
    for col in _COLUMNS:
        if col not in records:
            records[col] = math.nan if col != "error" else ""
    records["error"] = records["error"].fillna("")
    records = records[axes + _COLUMNS]
    tcol = "truth_sample" if cfg.bias_target == "sample" else "truth_population"
    records["target"] = records[tcol].astype(float)
    summary = _summarize(records, axes)
    # an estimator that fails everywhere is reported with n_ok = 0; only a
    # study where nothing succeeded at all is an error
    if not (records["error"] == "").any():
        raise MinbridgeError("all replications failed for every estimator")
    provenance = {
        "config_hash": cfg.hash(),
        "dgp_hash": config_hash(cfg.dgp),
        "master_seed": cfg.master_seed,
        "code_version": __version__,
    }
    return McReport(records=records, summary=summary, provenance=provenance)


def coverage_band(rho: float, replications: int) -> float:
    """Half-width ``3 sqrt(rho (1 - rho) / R)`` of the binomial acceptance band."""
    return 3.0 * math.sqrt(rho * (1.0 - rho) / replications)


def coverage_summary(report: McReport, rho: float = 0.05, column: str = "coverage") -> pd.DataFrame:
    """Pass/fail of empirical coverage against ``1 - rho`` within the binomial band."""
    rows = []
    for _, row in report.summary.iterrows():
        cov = row.get(column, math.nan)
        if not np.isfinite(cov):
            continue
        band = coverage_band(rho, int(row["n_ok"]))
        rows.append(
            {
                **{k: row[k] for k in report.summary.columns if k not in ("coverage", "coverage_sample")},
                "coverage": cov,
                "lower": 1.0 - rho - band,
                "upper": 1.0 - rho + band,
                "pass": bool(abs(cov - (1.0 - rho)) <= band),
            }
        )
    return pd.DataFrame(rows)
