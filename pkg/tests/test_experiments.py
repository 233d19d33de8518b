import csv
import json
import math

import numpy as np
import pytest

from errors import EmptyDatasetError, InfeasibleRuleError, InvalidConfigError
from experiments import (
    ExperimentConfig,
    NewsvendorApp,
    ProducerApp,
    build_application,
    illustrative_dataset,
    income_distribution,
    load_data,
    reproduce_illustrative,
    run_experiment,
    run_technology_sweep,
)
from models import ContextDataset, SplitPlan
from newsvendor import NewsvendorInstance
from reports import format_table, method_table, write_illustrative, write_report, write_xlsx

UNIT_PRODUCER = {"c1": 1.0, "c2": 1.0, "qmin": 0.0, "qmax": 1.0}


def _newsvendor_data(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 2.0, n)
    y = 5.0 + 3.0 * x + rng.normal(0.0, 1.0, n)
    return ContextDataset(np.column_stack([np.ones(n), x]), y[:, None], ("demand",))


def _newsvendor_config(methods=("bn", "fo", "bl")):
    return ExperimentConfig(application="newsvendor", methods=methods, instance={"d": 1.0, "r": 4.0},
                            plan=SplitPlan(bin_size=20, train_fraction=0.8, repeats=2, seed=1))


class _FailingBL(NewsvendorApp):
    def fit(self, method, train, config, options, fitted):
        if method == "bl":
            raise InfeasibleRuleError("forced failure")
        return super().fit(method, train, config, options, fitted)


def test_income_distribution_counts_signs():
    dist = income_distribution([1.0, -1.0, 0.0])
    assert dist.pct_positive == pytest.approx(100 / 3)
    assert dist.pct_negative == pytest.approx(100 / 3)
    assert dist.pct_zero == pytest.approx(100 / 3)
    assert (dist.total_positive, dist.total_negative) == (1.0, -1.0)


def test_income_distribution_all_zero_and_empty():
    assert income_distribution(np.zeros(4)).pct_zero == pytest.approx(100.0)
    assert income_distribution([1e-12]).pct_zero == pytest.approx(100.0)
    with pytest.raises(EmptyDatasetError):
        income_distribution([])


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(application="portfolio")
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(application="newsvendor", methods=("bl-m",))
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(application="newsvendor", methods=("bl",), generator={"n": 10})
    with pytest.raises(InvalidConfigError):
        ExperimentConfig(methods=())
    with pytest.raises(InvalidConfigError):
        ExperimentConfig.from_dict({"application": "producer", "colour": "blue"})
    cfg = ExperimentConfig.from_dict({"methods": ["BN", "fo", "bn"], "plan": {"bin_size": 50}})
    assert cfg.methods == ("bn", "fo")
    assert cfg.plan.bin_size == 50


def test_config_from_json(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"application": "newsvendor", "methods": ["fo"], "instance": {"d": 1, "r": 2}}))
    assert ExperimentConfig.from_json(path).instance == {"d": 1, "r": 2}
    path.write_text("{not json")
    with pytest.raises(InvalidConfigError):
        ExperimentConfig.from_json(path)


def test_load_data_needs_a_source():
    with pytest.raises(InvalidConfigError):
        load_data(ExperimentConfig())
    cfg = ExperimentConfig(generator={"n": 30, "seed": 2, "beta_factor": 2.0})
    assert len(load_data(cfg)) == 30


def test_build_application_reports_missing_settings():
    with pytest.raises(InvalidConfigError):
        build_application(ExperimentConfig(instance={"c1": 1.0}))
    app = build_application(ExperimentConfig(instance=UNIT_PRODUCER))
    assert isinstance(app, ProducerApp)


def test_in_sample_illustrative_relative_incomes():
    cfg = ExperimentConfig(methods=("bn", "fo", "dr", "bl-m"), instance=UNIT_PRODUCER, in_sample=True)
    report = run_experiment(cfg, data=illustrative_dataset(), workers=1)
    ri = {m: s.relative_income for m, s in report.methods.items()}
    assert ri["bn"] == pytest.approx(100.0)
    assert ri["fo"] == pytest.approx(92.5, abs=0.1)
    assert ri["dr"] == pytest.approx(91.8, abs=0.1)
    assert ri["bl-m"] == pytest.approx(100.0, abs=1e-4)
    assert report.methods["dr"].infeasibility_rate == 0.0


def test_benchmark_only_run():
    report = run_experiment(_newsvendor_config(("bn",)), data=_newsvendor_data(), workers=1)
    summary = report.methods["bn"]
    assert summary.relative_income == pytest.approx(100.0)
    assert summary.splits == 4
    assert len(report.splits) == 4


def test_failed_method_is_isolated():
    cfg = _newsvendor_config()
    app = _FailingBL(NewsvendorInstance(1.0, 4.0))
    report = run_experiment(cfg, data=_newsvendor_data(), app=app, workers=1)
    bl = report.methods["bl"]
    assert bl.failures == 4 and bl.splits == 0
    assert math.isnan(bl.relative_income)
    assert report.methods["fo"].splits == 4
    assert all(r.status == "failed" for r in report.splits if r.method == "bl")


def test_method_order_does_not_change_results():
    data = _newsvendor_data(seed=5)
    first = run_experiment(_newsvendor_config(("bn", "fo", "bl")), data=data, workers=1)
    second = run_experiment(_newsvendor_config(("bl", "fo", "bn")), data=data, workers=1)
    for method in ("fo", "bl"):
        assert first.methods[method].total_income == pytest.approx(second.methods[method].total_income)
    assert [r.method for r in second.splits[:3]] == ["bl", "fo", "bn"]


def test_newsvendor_relative_income_is_bounded_by_the_benchmark():
    report = run_experiment(_newsvendor_config(), data=_newsvendor_data(n=80, seed=3), workers=1)
    for method in ("fo", "bl"):
        assert report.methods[method].relative_income <= 100.0 + 1e-9


def test_reproduce_illustrative():
    result = reproduce_illustrative()
    assert result.ok, result.deviations
    constrained = result.cases["constrained"]
    assert constrained.extra["reported_w_gamma_income"] == pytest.approx(22.325)
    assert len(constrained.curves["dr"]) == len(constrained.grid)


def test_write_report_and_tables(tmp_path):
    report = run_experiment(_newsvendor_config(), data=_newsvendor_data(), workers=1)
    paths = write_report(report, tmp_path / "out")
    with open(paths["methods"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["Method"] for r in rows] == ["BN", "FO", "BL"]
    with open(paths["json"]) as fh:
        payload = json.load(fh)
    assert payload["application"] == "newsvendor"
    assert len(payload["splits"]) == 12
    assert "RI %" in format_table(method_table(report))


def test_write_illustrative(tmp_path):
    paths = write_illustrative(reproduce_illustrative(), tmp_path)
    assert set(paths) == {"json", "table", "curve_unconstrained", "curve_constrained"}
    with open(paths["curve_constrained"], newline="") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "x"


def test_write_xlsx_sizes_columns_past_z(tmp_path):
    openpyxl = pytest.importorskip("openpyxl")
    headers = ["Method"] + [f"c{i}" for i in range(1, 27)] + ["Flags"]
    path = write_xlsx({"methods": {"headers": headers, "rows": [{"Method": "BL", "c1": 1.0}]}},
                      str(tmp_path / "report.xlsx"))
    ws = openpyxl.load_workbook(path)["methods"]
    assert ws["A2"].value == "BL"
    assert ws.column_dimensions["A"].width == 14
    assert ws.column_dimensions["AB"].width == 40
    assert ws.freeze_panes == "A2"


@pytest.mark.slow
def test_technology_sweep_orders_methods():
    sweep = run_technology_sweep(seeds=range(20), workers=1, time_limit=120)
    assert sweep.seeds == tuple(range(20))
    for name, result in sweep.technologies.items():
        ri, infeasible = result.relative_income, result.infeasibility_rate
        assert ri["bn"] == pytest.approx(100.0)
        assert ri["bl-m"] >= ri["fo"] >= ri["dr"], name
        assert infeasible["dr"] > 0.0, name
        assert infeasible["fo"] == 0.0 and infeasible["bl-m"] == 0.0
        at_min, inside, at_max = result.operating_regime
        assert inside > 0.0 and at_min + at_max > 0.0, name
        assert at_min + inside + at_max == pytest.approx(100.0)
