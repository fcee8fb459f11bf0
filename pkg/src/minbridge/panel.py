"""Observed panel data: container, validation, CSV I/O and target aggregation.

Time periods run ``-T0, ..., -1, 0, 1, ..., T1``. Treatment starts at
``t = 0`` for every treated unit, so treated rows of ``y_target`` and
``y_post`` hold treated outcomes.

The long CSV layout is one row per (unit, period)::

    unit,time,y,a,x1,...,xd

``time`` is a signed integer, ``a`` is 0/1 and constant within a unit, and
covariates are unit-level (constant within a unit). Lines starting with
``#`` are comments.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .exceptions import (
    DimensionMismatch,
    HorizonTooLarge,
    MissingCell,
    NonFiniteInput,
    ParseError,
    TreatmentNotConstantWithinUnit,
)

__all__ = [
    "PanelDataset",
    "ValidationReport",
    "load_panel_csv",
    "write_panel_csv",
    "validate_panel",
    "aggregate_target",
]

DEFAULT_SCHEMA = {"unit": "unit", "time": "time", "y": "y", "a": "a"}


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel with a single adoption date.

    Attributes
    ----------
    treatment : (N,) array of 0/1
    covariates : (N, d) array, ``d`` may be zero
    y_pre : (N, T0) array, columns ordered oldest to newest (t = -T0..-1)
    y_target : (N,) array, outcomes at t = 0
    y_post : (N, T1) array, t = 1..T1
    """

    treatment: np.ndarray
    covariates: np.ndarray
    y_pre: np.ndarray
    y_target: np.ndarray
    y_post: np.ndarray
    unit_ids: tuple = field(default=(), compare=False)

    def __post_init__(self):
        a = _frozen(self.treatment, 1).reshape(-1)
        n = a.size
        x = np.array(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, 0)
        if x.size == 0:
            x = np.zeros((n, 0))
        x.setflags(write=False)
        y_pre = np.array(self.y_pre, dtype=float).reshape(n, -1)
        y_post = np.array(self.y_post, dtype=float).reshape(n, -1)
        y0 = np.array(self.y_target, dtype=float).reshape(-1)
        for arr in (y_pre, y_post, y0):
            arr.setflags(write=False)
        if x.shape[0] != n or y0.size != n:
            raise DimensionMismatch(
                f"inconsistent unit counts: treatment {n}, covariates {x.shape[0]}, "
                f"y_target {y0.size}"
            )
        if not np.all(np.isin(a, (0.0, 1.0))):
            raise ParseError("treatment must be 0/1")
        for name, arr in (("covariates", x), ("y_pre", y_pre), ("y_target", y0), ("y_post", y_post)):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteInput(f"{name} contains non-finite values")
        object.__setattr__(self, "treatment", a)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "y_pre", y_pre)
        object.__setattr__(self, "y_target", y0)
        object.__setattr__(self, "y_post", y_post)
        if not self.unit_ids:
            object.__setattr__(self, "unit_ids", tuple(range(1, n + 1)))
        elif len(self.unit_ids) != n:
            raise DimensionMismatch("unit_ids length does not match number of units")

    @property
    def n_units(self) -> int:
        return self.treatment.size

    @property
    def n_pre(self) -> int:
        return self.y_pre.shape[1]

    @property
    def n_post(self) -> int:
        return self.y_post.shape[1]

    @property
    def n_cov(self) -> int:
        return self.covariates.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return self.treatment == 1.0

    @property
    def control(self) -> np.ndarray:
        return self.treatment == 0.0

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def n_control(self) -> int:
        return int(self.control.sum())

    def outcomes(self) -> np.ndarray:
        """All outcomes as an (N, T0 + 1 + T1) matrix, oldest period first."""
        return np.column_stack([self.y_pre, self.y_target, self.y_post])

    def subset(self, index) -> "PanelDataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return PanelDataset(
            treatment=self.treatment[index],
            covariates=self.covariates[index],
            y_pre=self.y_pre[index],
            y_target=self.y_target[index],
            y_post=self.y_post[index],
            unit_ids=tuple(self.unit_ids[i] for i in index),
        )


@dataclass(frozen=True)
class ValidationReport:
    n_treated: int
    n_control: int
    issues: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_panel(data: PanelDataset) -> ValidationReport:
    """Report group sizes and data problems without raising."""
    issues = []
    n1, n0 = data.n_treated, data.n_control
    if n0 == 0:
        issues.append("degenerate group: N0=0")
    if n1 == 0:
        issues.append("degenerate group: N1=0")
    if data.n_units < 2:
        issues.append(f"dimension mismatch: need N >= 2, got {data.n_units}")
    x = data.covariates
    if data.n_units > 1 and x.shape[1]:
        constant = np.all(x == x[0], axis=0)
        # a single all-ones column is the intercept and is allowed
        intercept = constant & (x[0] == 1.0)
        if intercept.sum() > 1:
            intercept[np.flatnonzero(intercept)[1:]] = False
        for j in np.flatnonzero(constant & ~intercept):
            issues.append(f"no-variation column: x{j + 1}")
    return ValidationReport(n_treated=n1, n_control=n0, issues=tuple(issues))


def aggregate_target(data: PanelDataset, horizon: int) -> PanelDataset:
    """Average periods ``0..L`` into the target and keep ``L+1..T1`` as post.

    The new target column is the row mean of ``(Y_0, Y_1, ..., Y_L)``.
    """
    horizon = int(horizon)
    if horizon <= 0:
        raise HorizonTooLarge(f"horizon must be positive, got {horizon}")
    if horizon >= data.n_post:
        raise HorizonTooLarge(
            f"horizon L={horizon} must be smaller than T1={data.n_post}"
        )
    block = np.column_stack([data.y_target, data.y_post[:, :horizon]])
    return PanelDataset(
        treatment=data.treatment,
        covariates=data.covariates,
        y_pre=data.y_pre,
        y_target=block.mean(axis=1),
        y_post=data.y_post[:, horizon:],
        unit_ids=data.unit_ids,
    )


# CSV --------------------------------------------------------------------------


def _schema(schema: Mapping[str, str] | None) -> dict[str, str]:
    out = dict(DEFAULT_SCHEMA)
    if schema:
        out.update(schema)
    return out


def load_panel_csv(path, schema: Mapping[str, str] | None = None) -> PanelDataset:
    """Read a long-format panel CSV into a :class:`PanelDataset`.

    ``schema`` maps the logical names ``unit``, ``time``, ``y`` and ``a`` to
    column names; covariates are every column named ``x<k>`` (or listed
    under the ``covariates`` key, comma separated), ordered by ``k``.
    """
    cols = _schema(schema)
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise ParseError(f"could not read panel CSV {path}: {err}") from err
    required = [cols["unit"], cols["time"], cols["y"], cols["a"]]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(f"missing columns: {missing}")
    if "covariates" in cols:
        xcols = [c for c in cols["covariates"].split(",") if c]
    else:
        xcols = sorted(
            (c for c in frame.columns if c.startswith("x") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
    unit, time, y, a = (frame[c] for c in required)
    try:
        time = time.astype(np.int64) if time.dtype.kind in "iu" else _as_int(time)
        y = pd.to_numeric(y, errors="raise").astype(float)
        a = pd.to_numeric(a, errors="raise")
        xs = frame[xcols].apply(pd.to_numeric, errors="raise").astype(float)
    except (ValueError, TypeError) as err:
        raise ParseError(f"non-numeric entries in panel CSV: {err}") from err
    if not set(np.unique(a)).issubset({0, 1}):
        raise ParseError("treatment column must contain only 0 and 1")
    if y.isna().any() or xs.isna().any().any():
        raise MissingCell("panel CSV contains empty outcome or covariate cells")

    long = pd.DataFrame({"unit": unit, "time": time, "y": y, "a": a})
    if long.duplicated(["unit", "time"]).any():
        dup = long[long.duplicated(["unit", "time"], keep=False)].iloc[0]
        raise ParseError(f"duplicate row for unit {dup['unit']} at time {dup['time']}")

    units = list(pd.unique(long["unit"]))
    times = np.sort(pd.unique(long["time"]))
    t_min, t_max = int(times.min()), int(times.max())
    if t_min >= 0 or t_max <= 0:
        raise ParseError("panel must contain pre (t<0), target (t=0) and post (t>0) periods")
    full = np.arange(t_min, t_max + 1)
    wide = long.pivot(index="unit", columns="time", values="y").reindex(index=units, columns=full)
    if wide.isna().any().any():
        u, t = np.argwhere(wide.isna().to_numpy())[0]
        raise MissingCell(f"missing cell: unit {units[u]}, time {full[t]}")

    a_by_unit = long.groupby("unit", sort=False)["a"].agg(["min", "max"]).reindex(units)
    bad = a_by_unit[a_by_unit["min"] != a_by_unit["max"]]
    if len(bad):
        raise TreatmentNotConstantWithinUnit(
            f"treatment varies within unit {bad.index[0]}"
        )
    if xcols:
        xs = xs.assign(unit=unit.to_numpy())
        x_min = xs.groupby("unit", sort=False)[xcols].min().reindex(units)
        x_max = xs.groupby("unit", sort=False)[xcols].max().reindex(units)
        if not np.array_equal(x_min.to_numpy(), x_max.to_numpy()):
            raise ParseError("covariates must be constant within a unit")
        x = x_min.to_numpy()
    else:
        x = np.zeros((len(units), 0))

    ymat = wide.to_numpy()
    n_pre = -t_min
    return PanelDataset(
        treatment=a_by_unit["min"].to_numpy(dtype=float),
        covariates=x,
        y_pre=ymat[:, :n_pre],
        y_target=ymat[:, n_pre],
        y_post=ymat[:, n_pre + 1 :],
        unit_ids=tuple(units),
    )


def _as_int(col: pd.Series) -> pd.Series:
    vals = pd.to_numeric(col, errors="raise")
    if not np.all(np.equal(np.mod(vals, 1), 0)):
        raise ParseError("time column must hold integers")
    return vals.astype(np.int64)


def panel_to_frame(data: PanelDataset) -> pd.DataFrame:
    n, t0, t1 = data.n_units, data.n_pre, data.n_post
    times = np.arange(-t0, t1 + 1)
    y = data.outcomes()
    frame = pd.DataFrame(
        {
            "unit": np.repeat(np.asarray(data.unit_ids, dtype=object), times.size),
            "time": np.tile(times, n),
            "y": y.reshape(-1),
            "a": np.repeat(data.treatment.astype(int), times.size),
        }
    )
    for j in range(data.n_cov):
        frame[f"x{j + 1}"] = np.repeat(data.covariates[:, j], times.size)
    return frame


def write_panel_csv(data: PanelDataset, path, header: Mapping[str, object] | None = None) -> None:
    """Write ``data`` in long format; ``header`` entries become ``# key=value`` lines."""
    buf = io.StringIO()
    for key, val in (header or {}).items():
        buf.write(f"# {key}={val}\n")
    panel_to_frame(data).to_csv(buf, index=False, float_format="%.17g")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
