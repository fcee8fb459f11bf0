from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from minbridge import PanelDataset, aggregate_target, estimate_bridge, load_panel_csv, validate_panel, write_panel_csv
from minbridge.exceptions import (
    DimensionMismatch,
    HorizonTooLarge,
    MissingCell,
    NonFiniteInput,
    ParseError,
    TreatmentNotConstantWithinUnit,
)


def _write(tmp_path, text):
    path = tmp_path / "panel.csv"
    path.write_text(text)
    return path


def test_minimal_balanced_panel(tmp_path):
    path = _write(
        tmp_path,
        "unit,time,y,a\n1,-1,1.0,0\n1,0,2.0,0\n1,1,3.0,0\n2,-1,4.0,1\n2,0,5.0,1\n2,1,6.0,1\n",
    )
    data = load_panel_csv(path)
    assert (data.n_units, data.n_pre, data.n_post, data.n_cov) == (2, 1, 1, 0)
    np.testing.assert_array_equal(data.y_pre[:, 0], [1.0, 4.0])
    np.testing.assert_array_equal(data.y_target, [2.0, 5.0])
    np.testing.assert_array_equal(data.y_post[:, 0], [3.0, 6.0])
    np.testing.assert_array_equal(data.treatment, [0.0, 1.0])


def test_missing_cell(tmp_path):
    path = _write(tmp_path, "unit,time,y,a\n1,-1,1,0\n1,0,2,0\n1,1,3,0\n2,-1,4,1\n2,1,6,1\n")
    with pytest.raises(MissingCell):
        load_panel_csv(path)


def test_treatment_varies_within_unit(tmp_path):
    path = _write(tmp_path, "unit,time,y,a\n1,-1,1,0\n1,0,2,0\n1,1,3,1\n2,-1,4,1\n2,0,5,1\n2,1,6,1\n")
    with pytest.raises(TreatmentNotConstantWithinUnit):
        load_panel_csv(path)


@pytest.mark.parametrize(
    "text",
    [
        "unit,time,y\n1,-1,1\n",
        "unit,time,y,a\n1,-1,abc,0\n1,0,2,0\n1,1,3,0\n",
        "unit,time,y,a\n1,-1,1,2\n1,0,2,2\n1,1,3,2\n",
        "unit,time,y,a\n1,-1,1,0\n1,-1,1,0\n1,0,2,0\n1,1,3,0\n",
        "unit,time,y,a\n1,0,1,0\n1,1,2,0\n",
    ],
)
def test_parse_errors(tmp_path, text):
    with pytest.raises(ParseError):
        load_panel_csv(_write(tmp_path, text))


def test_covariates_read_in_index_order(tmp_path):
    path = _write(
        tmp_path,
        "unit,time,y,a,x2,x1\n1,-1,1,0,5,7\n1,0,2,0,5,7\n1,1,3,0,5,7\n2,-1,4,1,6,8\n2,0,5,1,6,8\n2,1,6,1,6,8\n",
    )
    np.testing.assert_array_equal(load_panel_csv(path).covariates, [[7, 5], [8, 6]])


def test_validate_panel_counts_and_findings():
    rng = np.random.default_rng(0)
    a = np.array([1, 1, 1, 0, 0, 0, 0, 0])
    x = np.column_stack([np.ones(8), rng.normal(size=8)])
    data = PanelDataset(a, x, rng.normal(size=(8, 2)), rng.normal(size=8), rng.normal(size=(8, 1)))
    rep = validate_panel(data)
    assert (rep.n_treated, rep.n_control) == (3, 5)
    assert rep.ok and rep.n_treated + rep.n_control == data.n_units

    treated = PanelDataset(np.ones(4), np.zeros((4, 0)), np.zeros((4, 1)), np.zeros(4), np.zeros((4, 1)))
    assert "degenerate group: N0=0" in validate_panel(treated).issues

    flat = PanelDataset(a, np.column_stack([np.ones(8), np.full(8, 3.0)]), np.zeros((8, 1)), np.zeros(8), np.zeros((8, 1)))
    assert any(i.startswith("no-variation column") for i in validate_panel(flat).issues)


def test_constructor_rejects_bad_input():
    with pytest.raises(DimensionMismatch):
        PanelDataset(np.zeros(3), np.zeros((2, 1)), np.zeros((3, 1)), np.zeros(3), np.zeros((3, 1)))
    with pytest.raises(NonFiniteInput):
        PanelDataset(np.zeros(2), np.zeros((2, 0)), np.array([[np.nan], [1.0]]), np.zeros(2), np.zeros((2, 1)))
    with pytest.raises(ParseError):
        PanelDataset(np.array([0, 2]), np.zeros((2, 0)), np.zeros((2, 1)), np.zeros(2), np.zeros((2, 1)))


def test_aggregate_target_examples():
    data = PanelDataset(np.array([0, 1]), np.zeros((2, 0)), [[1.0], [1.0]], [2.0, 2.0], [[4.0, 6.0], [4.0, 6.0]])
    agg = aggregate_target(data, 1)
    np.testing.assert_array_equal(agg.y_target, [3.0, 3.0])
    np.testing.assert_array_equal(agg.y_post, [[6.0], [6.0]])
    np.testing.assert_array_equal(agg.y_pre, data.y_pre)
    with pytest.raises(HorizonTooLarge):
        aggregate_target(data, 2)
    wide = PanelDataset(np.array([0, 1]), np.zeros((2, 0)), np.zeros((2, 1)), np.zeros(2), np.zeros((2, 4)))
    assert aggregate_target(wide, 2).n_post == 2


def test_aggregate_then_estimate_matches_manual_average():
    rng = np.random.default_rng(3)
    n = 400
    a = (rng.random(n) < 0.4).astype(float)
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    data = PanelDataset(a, x, rng.normal(size=(n, 3)), rng.normal(size=n), rng.normal(size=(n, 4)))
    manual = PanelDataset(a, x, data.y_pre, (data.y_target + data.y_post[:, 0]) / 2, data.y_post[:, 1:])
    lhs = estimate_bridge(aggregate_target(data, 1), lam=1e-3)
    rhs = estimate_bridge(manual, lam=1e-3)
    assert lhs.gamma_hat == rhs.gamma_hat
    np.testing.assert_array_equal(lhs.theta.vector, rhs.theta.vector)


finite = st.floats(min_value=-1e12, max_value=1e12, allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(
    n_pre=st.integers(1, 3),
    n_post=st.integers(1, 3),
    n_cov=st.integers(0, 2),
    data=st.data(),
)
def test_csv_round_trip_is_bit_exact(tmp_path_factory, n_pre, n_post, n_cov, data):
    n = 4
    a = np.array([0, 1, 0, 1], dtype=float)
    y = data.draw(arrays(np.float64, (n, n_pre + 1 + n_post), elements=finite))
    x = data.draw(arrays(np.float64, (n, n_cov), elements=finite))
    panel = PanelDataset(a, x, y[:, :n_pre], y[:, n_pre], y[:, n_pre + 1 :])
    path = tmp_path_factory.mktemp("rt") / "p.csv"
    write_panel_csv(panel, path, header={"seed": 1})
    back = load_panel_csv(path)
    for name in ("treatment", "covariates", "y_pre", "y_target", "y_post"):
        np.testing.assert_array_equal(getattr(back, name), getattr(panel, name))
    write_panel_csv(back, path.with_name("q.csv"), header={"seed": 1})
    assert path.read_bytes() == path.with_name("q.csv").read_bytes()
