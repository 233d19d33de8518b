import json

import numpy as np
import pytest
from click.testing import CliRunner

from ctxopt import cli
from experiments import illustrative_dataset
from models import ContextDataset, write_dataset


@pytest.fixture()
def runner():
    return CliRunner()


def _write(tmp_path, name, data):
    path = tmp_path / name
    write_dataset(data, path)
    return str(path)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_newsvendor_fit_writes_coefficients(runner, tmp_path):
    data = _write(tmp_path, "demand.csv",
                  ContextDataset(np.ones((4, 1)), np.array([[1.0], [2.0], [3.0], [4.0]]), ("demand",)))
    out = tmp_path / "fit.json"
    result = runner.invoke(cli, ["newsvendor", "fit", "--d", "1", "--r", "5", "--data", data,
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = _read_json(out)
    assert payload["w"] == pytest.approx([4.0], abs=1e-9)
    assert payload["critical_ratio"] == pytest.approx(0.8)


def test_newsvendor_invalid_instance_exits_with_message(runner, tmp_path):
    data = _write(tmp_path, "demand.csv", ContextDataset(np.ones((2, 1)), np.ones((2, 1))))
    result = runner.invoke(cli, ["newsvendor", "fit", "--d", "5", "--r", "5", "--data", data])
    assert result.exit_code == 1
    assert "r > d > 0" in result.output or "Error" in result.output


def test_newsvendor_evaluate_requires_costs(runner, tmp_path):
    data = _write(tmp_path, "demand.csv", ContextDataset(np.ones((2, 1)), np.ones((2, 1))))
    result = runner.invoke(cli, ["newsvendor", "evaluate", "--data", data])
    assert result.exit_code == 2


def test_unknown_method_is_a_usage_error(runner, tmp_path):
    data = _write(tmp_path, "demand.csv", ContextDataset(np.ones((2, 1)), np.ones((2, 1))))
    result = runner.invoke(cli, ["newsvendor", "evaluate", "--d", "1", "--r", "2", "--data", data,
                                 "--methods", "bn,magic"])
    assert result.exit_code == 2


def test_producer_fit_dr_and_curve_dump(runner, tmp_path):
    data = _write(tmp_path, "illustrative.csv", illustrative_dataset())
    out, curve = tmp_path / "dr.json", tmp_path / "curve.csv"
    result = runner.invoke(cli, ["producer", "fit", "--c1", "1", "--c2", "1", "--qmax", "20",
                                 "--data", data, "--method", "dr", "--curve-dump", str(curve),
                                 "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = _read_json(out)
    assert payload["coefficients"][0] == pytest.approx([-443 / 6418, 1093 / 6418], abs=1e-8)
    assert curve.read_text().splitlines()[0] == "x,DR"


def test_producer_fit_bn_is_rejected(runner, tmp_path):
    data = _write(tmp_path, "illustrative.csv", illustrative_dataset())
    result = runner.invoke(cli, ["producer", "fit", "--c1", "1", "--c2", "1", "--qmax", "1",
                                 "--data", data, "--method", "bn"])
    assert result.exit_code == 2


def test_producer_fit_writes_solve_log(runner, tmp_path):
    data = _write(tmp_path, "illustrative.csv", illustrative_dataset())
    log, out = tmp_path / "nodes.json", tmp_path / "bl.json"
    result = runner.invoke(cli, ["--solve-log", str(log), "producer", "fit", "--c1", "1", "--c2", "1",
                                 "--qmax", "1", "--data", data, "--method", "bl-m", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert _read_json(out)["in_sample_income"] == pytest.approx(22.325, abs=1e-6)
    assert isinstance(_read_json(log), list)


def test_producer_evaluate_on_synthetic_market(runner, tmp_path):
    data = tmp_path / "market.csv"
    result = runner.invoke(cli, ["market", "synth", "--n", "40", "--seed", "1", "--out", str(data)])
    assert result.exit_code == 0, result.output
    out_dir = tmp_path / "report"
    result = runner.invoke(cli, ["producer", "evaluate", "--c1", "1", "--c2", "0.1", "--qmax", "5",
                                 "--data", str(data), "--methods", "bn,fo,dr", "--bin-size", "20",
                                 "--repeats", "1", "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    payload = _read_json(out_dir / "report.json")
    assert set(payload["methods"]) == {"bn", "fo", "dr"}
    assert payload["methods"]["bn"]["relative_income"] == pytest.approx(100.0)


def test_placement_fit_dr(runner, tmp_path):
    nodes, arcs = tmp_path / "nodes.csv", tmp_path / "arcs.csv"
    nodes.write_text("node,h,r_pen\nnorth,1.0,5.0\nsouth,1.2,5.0\n")
    arcs.write_text("origin,end,g\nnorth,south,0.5\nsouth,north,0.5\n")
    X = np.column_stack([np.ones(3), [0.0, 0.5, 1.0]])
    data = _write(tmp_path, "placement.csv",
                  ContextDataset(X, np.array([[1.0, 0.5], [2.0, 1.0], [3.0, 0.8]]), ("north", "south")))
    out = tmp_path / "dr.json"
    result = runner.invoke(cli, ["placement", "fit", "--network", str(arcs), "--nodes", str(nodes),
                                 "--data", data, "--method", "dr", "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = _read_json(out)
    assert np.array(payload["W"]).shape == (2, 2)
    assert payload["in_sample_cost"] > 0


def test_market_fit_curves(runner, tmp_path):
    bids = tmp_path / "bids.csv"
    bids.write_text("hour,side,quantity_mw,price\n"
                    "0,buy,1,8\n0,buy,1,4\n0,sell,0.5,8\n"
                    "1,buy,0.5,9\n1,sell,1,1\n")
    out = tmp_path / "fitted.csv"
    result = runner.invoke(cli, ["market", "fit-curves", "--bids", str(bids), "--delta", "2",
                                 "--grid", "32", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "Fitted 1 of 2 hours" in result.output
    assert out.read_text().splitlines()[0] == "x1,alpha,beta"


def test_market_synth_rejects_bad_json(runner, tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text("{oops")
    result = runner.invoke(cli, ["market", "synth", "--config", str(cfg), "--out", str(tmp_path / "m.csv")])
    assert result.exit_code == 1


def test_reproduce_illustrative_command(runner, tmp_path):
    result = runner.invoke(cli, ["reproduce", "illustrative", "--out", str(tmp_path / "ill")])
    assert result.exit_code == 0, result.output
    assert "All illustrative values match." in result.output
    assert (tmp_path / "ill" / "curve_constrained.csv").exists()
