import os
from pathlib import Path

import numpy as np
import pytest

import backtrack

GRAPH = Path(os.environ.get("BACKTRACK_GRAPH", Path(__file__).resolve().parents[2] / "data" / "morpho_graph.json"))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    work = tmp_path_factory.mktemp("smoke")
    data = work / "data.csv"
    columns, values = backtrack.generate_dataset(3000, 4, data)
    assert values.shape == (3000, len(columns))
    backtrack.train(data, GRAPH, work / "model.json")
    backtrack.train(data, GRAPH, work / "reversed.json", reverse_edge=("T", "I"))
    return work, data


def test_dataset_round_trip(tmp_path):
    path = tmp_path / "d.csv"
    columns, values = backtrack.generate_dataset(50, 1, path)
    again_columns, again = backtrack.read_csv(path)
    assert columns == again_columns
    np.testing.assert_array_equal(values, again)
    assert columns[:2] == ["T", "I"]
    assert np.all(values[:, 0] > 0.5)


def test_mode_query_hits_antecedent(trained):
    work, data = trained
    model = backtrack.Model.load(work / "model.json")
    assert model.nodes == ["T", "I", "image"]
    x = model.factual_from_row(data, 0)
    (row,) = model.query("mode", x, "I=200", lam=1e6)
    assert row["x_star"]["I"][0] == pytest.approx(200.0, abs=1e-2)
    assert row["residual"] < 1e-4
    np.testing.assert_allclose(row["x"]["T"], x["T"])


def test_interventional_keeps_root(trained):
    work, data = trained
    model = backtrack.Model.load(work / "model.json")
    x = model.factual_from_row(data, 3)
    (row,) = model.query("interventional", x, "I=150")
    np.testing.assert_array_equal(row["x_star"]["T"], x["T"])
    assert row["x_star"]["I"][0] == pytest.approx(150.0)


def test_stochastic_samples_and_metrics(trained):
    work, _ = trained
    model = backtrack.Model.load(work / "model.json")
    x = model.sample_prior(seed=2)
    rows = model.query("stochastic", x, "I=180", samples=3, iterations=20, seed=9)
    assert len(rows) == 3
    again = model.query("stochastic", x, "I=180", samples=3, iterations=20, seed=9)
    for a, b in zip(rows, again):
        np.testing.assert_array_equal(a["x_star"]["image"], b["x_star"]["image"])
    m = model.metrics(x, rows[0]["x_star"], ["T", "I"])
    assert set(m) == {"plausible", "obs", "causal"}
    assert all(np.isfinite(v) for v in m.values())


def test_errors_surface_as_backtrack_error(trained):
    work, data = trained
    with pytest.raises(backtrack.Error):
        backtrack.Model.load(work / "missing.json")
    model = backtrack.Model.load(work / "model.json")
    with pytest.raises(backtrack.Error):
        model.query("mode", model.factual_from_row(data, 0), "Q=1")
