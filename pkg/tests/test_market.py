import numpy as np
import pytest

from errors import EmptyDatasetError, InvalidConfigError, NonpositiveSlopeError, WindowNotCoveredError
from market import (
    BidStack,
    FittedInverseDemand,
    MarketSynthConfig,
    fit_hours,
    fit_inverse_demand,
    fit_market_dataset,
    read_bid_stacks,
    read_hour_features,
    residual_demand,
    synthesize_market,
)


def _two_step():
    return BidStack(buys=[[1.0, 8.0], [1.0, 4.0]], sells=[[0.5, 8.0]])


class _LinearCurve:
    def covers(self, delta):
        return True

    def inverse_price(self, q):
        return 10.0 - 2.0 * np.asarray(q)


def test_residual_demand_steps():
    curve = residual_demand(_two_step())
    assert curve.total_demand == pytest.approx(2.0)
    assert curve.total_supply == pytest.approx(0.5)
    assert curve([4.0, 8.0, 9.0]) == pytest.approx([2.0, 0.5, -0.5])
    assert curve.steps()["price"].tolist() == [4.0, 8.0]


def test_inverse_price_is_the_highest_reaching_price():
    curve = residual_demand(_two_step())
    assert curve.inverse_price([0.0, 0.5, 1.0, 1.5, 2.0]) == pytest.approx([8.0, 8.0, 8.0, 4.0, 4.0])
    with pytest.raises(WindowNotCoveredError):
        curve.inverse_price(2.5)


def test_fit_matches_least_squares_on_the_grid():
    fit = fit_inverse_demand(residual_demand(_two_step()), delta=2.0, grid_size=64)
    q = np.linspace(0.0, 2.0, 64)
    p = np.where(q <= 1.0, 8.0, 4.0)
    slope, intercept = np.polyfit(q, p, 1)
    assert fit.alpha == pytest.approx(intercept)
    assert fit.beta == pytest.approx(-slope)
    assert fit.fit_rmse > 0


def test_fit_recovers_a_linear_curve():
    fit = fit_inverse_demand(_LinearCurve(), delta=3.0, grid_size=10)
    assert fit.alpha == pytest.approx(10.0)
    assert fit.beta == pytest.approx(2.0)
    assert fit.fit_rmse == pytest.approx(0.0, abs=1e-9)
    assert fit.price(1.0) == pytest.approx(8.0)


def test_fit_requires_a_covered_window():
    with pytest.raises(WindowNotCoveredError):
        fit_inverse_demand(residual_demand(_two_step()), delta=3.0)
    no_supply = BidStack(buys=[[5.0, 10.0]], sells=[])
    with pytest.raises(WindowNotCoveredError):
        fit_inverse_demand(residual_demand(no_supply), delta=1.0)


def test_fit_validation():
    with pytest.raises(InvalidConfigError):
        fit_inverse_demand(_LinearCurve(), delta=0.0)
    with pytest.raises(InvalidConfigError):
        fit_inverse_demand(_LinearCurve(), delta=1.0, grid_size=1)
    with pytest.raises(NonpositiveSlopeError):
        FittedInverseDemand(alpha=1.0, beta=0.0, delta=1.0, fit_rmse=0.0)


def test_bid_stack_validation():
    with pytest.raises(EmptyDatasetError):
        BidStack([], [])
    with pytest.raises(InvalidConfigError):
        BidStack([[0.0, 5.0]], [])


def test_fit_hours_skips_uncovered_hours():
    stacks = {0: _two_step(), 1: BidStack(buys=[[0.5, 9.0]], sells=[[1.0, 1.0]])}
    fits = fit_hours(stacks, delta=2.0, grid_size=16)
    assert list(fits) == [0]


def test_market_dataset_uses_hour_features():
    stacks = {3: _two_step(), 7: _two_step()}
    data = fit_market_dataset(stacks, {3: [1.0, 0.2], 7: [1.0, 0.9]}, delta=2.0, grid_size=16)
    assert data.outcome_names == ("alpha", "beta")
    assert data.contexts[:, 1] == pytest.approx([0.2, 0.9])
    with pytest.raises(EmptyDatasetError):
        fit_market_dataset({0: BidStack(buys=[[0.5, 9.0]], sells=[[1.0, 1.0]])}, delta=2.0)


def test_synthetic_market_has_positive_slopes_and_known_gamma():
    cfg = MarketSynthConfig(a=(0.5, 1.0), noise_scale=0.0, beta_context_coupling=0.3)
    data = synthesize_market(cfg, 50, seed=4)
    alpha, beta = data.outcome("alpha"), data.outcome("beta")
    assert np.all(beta > 0)
    gamma = (alpha - cfg.c1) / (beta + cfg.c2)
    assert gamma == pytest.approx(data.contexts @ np.array([0.5, 1.0]))
    again = synthesize_market(cfg, 50, seed=4)
    assert again.outcomes == pytest.approx(data.outcomes)


def test_synth_config_from_dict():
    cfg = MarketSynthConfig.from_dict({"a": [1.0, 2.0], "beta_mean": 0.5})
    assert cfg.a == (1.0, 2.0)
    with pytest.raises(InvalidConfigError):
        MarketSynthConfig.from_dict({"slope": 1.0})
    with pytest.raises(InvalidConfigError):
        synthesize_market(cfg, 0)


def test_read_bid_stacks_and_features(tmp_path):
    bids = tmp_path / "bids.csv"
    bids.write_text("hour,side,quantity_mw,price\n"
                    "1,buy,1,8\n1,Buy,1,4\n1,sell,0.5,8\n2,buy,3,20\n2,sell,1,5\n")
    stacks = read_bid_stacks(bids)
    assert sorted(stacks) == [1, 2]
    assert stacks[1].buys.shape == (2, 2)
    features = tmp_path / "features.csv"
    features.write_text("hour,x1,x2\n1,1,0.5\n2,1,0.25\n")
    assert read_hour_features(features)[2] == pytest.approx([1.0, 0.25])


def test_read_bid_stacks_rejects_unknown_side(tmp_path):
    bids = tmp_path / "bids.csv"
    bids.write_text("side,quantity_mw,price\nhold,1,8\n")
    with pytest.raises(InvalidConfigError):
        read_bid_stacks(bids)
