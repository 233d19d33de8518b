import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import InvalidConfigError, InvalidInstanceError, NonpositiveSlopeError
from experiments import illustrative_dataset
from market import MarketSynthConfig, synthesize_market
from models import BoundedInterval, ContextDataset, LinearCoefficients
from producer import (
    MarketObservation,
    ProducerInstance,
    ProducerPolicy,
    bn_decisions,
    incomes,
    market_parameters,
    observations,
    pr_decide_dr,
    pr_decide_fo,
    pr_decision_curve,
    pr_fit,
    pr_fit_dr,
    pr_fit_fo,
    pr_in_sample_income,
    pr_income,
    pr_operating_regime,
    pr_solve_bl,
    scale_slopes,
)

WIDE = BoundedInterval(0.0, 20.0)
UNIT = BoundedInterval(0.0, 1.0)


@pytest.fixture()
def data():
    return illustrative_dataset()


def _instance(bounds=WIDE):
    return ProducerInstance(1.0, 1.0, bounds)


def test_instance_validation():
    with pytest.raises(InvalidInstanceError):
        ProducerInstance(0.0, 1.0, WIDE)
    with pytest.raises(InvalidInstanceError):
        ProducerInstance(1.0, 1.0, BoundedInterval(-1.0, 1.0))


def test_market_parameters_are_shifted_by_costs(data):
    alpha_p, beta_p = market_parameters(_instance(), data)
    assert alpha_p == pytest.approx([2.0, 17.0, 8.0, 16.0])
    assert beta_p == pytest.approx([10.0, 10.0, 3.0, 6.0])


def test_nonpositive_slope_is_rejected():
    bad = ContextDataset(np.ones((2, 1)), np.array([[5.0, 1.0], [5.0, -0.5]]), ("alpha", "beta"))
    with pytest.raises(NonpositiveSlopeError):
        market_parameters(_instance(), bad)
    with pytest.raises(NonpositiveSlopeError):
        MarketObservation(5.0, 0.0)


def test_observation_income_and_gamma():
    obs = MarketObservation.for_instance(3.0, 9.0, _instance())
    assert obs.gamma == pytest.approx(0.2)
    assert pr_income(0.1, obs) == pytest.approx(-0.1 + 0.2)


def test_benchmark_decisions_and_income(data):
    alpha_p, beta_p = market_parameters(_instance(), data)
    q = bn_decisions(alpha_p, beta_p, WIDE)
    assert q == pytest.approx([0.1, 0.85, 4 / 3, 4 / 3])
    assert incomes(q, alpha_p, beta_p).sum() == pytest.approx(23.325)
    q_unit = bn_decisions(alpha_p, beta_p, UNIT)
    assert incomes(q_unit, alpha_p, beta_p).sum() == pytest.approx(22.325)


def test_operating_regime(data):
    obs = observations(_instance(), data)
    assert pr_operating_regime(obs, WIDE) == pytest.approx((0.0, 100.0, 0.0))
    assert pr_operating_regime(obs, UNIT) == pytest.approx((0.0, 50.0, 50.0))


def test_fo_coefficients(data):
    w_alpha, w_beta = pr_fit_fo(_instance(), data)
    assert w_alpha.w == pytest.approx([5.0, 1.0], abs=1e-9)
    assert w_beta.w == pytest.approx([12.298, -0.878], abs=1e-3)


def test_fo_decision_with_nonpositive_predicted_slope():
    q = pr_decide_fo([1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], BoundedInterval(0.0, 2.0))
    assert q == pytest.approx(2.0)


def test_dr_matches_closed_form_when_bounds_are_slack(data):
    w = pr_fit_dr(_instance(), data)
    assert w.w == pytest.approx([-443 / 6418, 1093 / 6418], abs=1e-8)


def test_dr_respects_tight_bounds(data):
    inst = _instance(UNIT)
    w = pr_fit_dr(inst, data)
    q, feasible = pr_decide_dr(w, data.contexts, UNIT)
    assert np.all(feasible)
    assert q == pytest.approx([0.345, 0.532, 0.906, 1.0], abs=6e-3)


def test_dr_feasibility_flag_and_repair():
    policy = ProducerPolicy("dr", (LinearCoefficients([-1.0, 1.0]),))
    X = np.array([[1.0, 0.0], [1.0, 2.0]])
    q, feasible = policy.decide(X, UNIT, repair=False)
    assert q == pytest.approx([-1.0, 1.0])
    assert feasible.tolist() == [False, True]
    q, _ = policy.decide(X, UNIT)
    assert q == pytest.approx([0.0, 1.0])


def test_bl_matches_dr_without_binding_bounds(data):
    inst = _instance()
    w, report = pr_solve_bl(inst, data)
    assert w.w == pytest.approx([-0.138, 0.341], abs=2e-3)
    bl = pr_in_sample_income(ProducerPolicy("bl-m", (w,), report), inst, data)
    dr = pr_in_sample_income(pr_fit("dr", inst, data), inst, data)
    assert bl >= dr - 1e-6


def test_bl_reaches_the_benchmark_under_tight_bounds(data):
    inst = _instance(UNIT)
    policy = pr_fit("bl-m", inst, data)
    assert pr_in_sample_income(policy, inst, data) == pytest.approx(22.325, abs=1e-6)


def test_regularized_bl_is_not_better_than_global(data):
    inst = _instance(UNIT)
    local = pr_in_sample_income(pr_fit("bl-r", inst, data), inst, data)
    assert local <= 22.325 + 1e-6


def test_fit_rejects_benchmark_and_unknown_methods(data):
    for method in ("bn", "magic"):
        with pytest.raises(InvalidConfigError):
            pr_fit(method, _instance(), data)


def test_decision_curve_clips_bl_offers():
    policy = ProducerPolicy("bl-m", (LinearCoefficients([0.0, 1.0]),))
    assert pr_decision_curve(policy, [0.0, 1.0, 4.0], UNIT) == pytest.approx([0.0, 0.5, 1.0])


def test_scale_slopes(data):
    scaled = scale_slopes(data, 2.0)
    assert scaled.outcome("beta") == pytest.approx(2.0 * data.outcome("beta"))
    assert scaled.outcome("alpha") == pytest.approx(data.outcome("alpha"))
    with pytest.raises(InvalidConfigError):
        scale_slopes(data, 0.0)


def test_policy_as_dict():
    policy = ProducerPolicy("fo", (LinearCoefficients([1.0, 2.0]), LinearCoefficients([3.0, 0.0])))
    assert policy.as_dict() == {"method": "fo", "coefficients": [[1.0, 2.0], [3.0, 0.0]]}


def _random_market(seed, n=6):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 10.0, n)
    return ContextDataset(np.column_stack([np.ones(n), x]),
                          np.column_stack([rng.uniform(0.0, 20.0, n), rng.uniform(1.0, 10.0, n)]),
                          ("alpha", "beta"))


def _bl_and_dr_incomes(data, bounds=UNIT):
    inst = _instance(bounds)
    bl = pr_in_sample_income(pr_fit("bl-m", inst, data), inst, data)
    dr = pr_in_sample_income(pr_fit("dr", inst, data), inst, data)
    return bl, dr


@settings(max_examples=10)
@given(st.integers(min_value=0, max_value=10_000))
def test_bl_income_dominates_dr(seed):
    bl, dr = _bl_and_dr_incomes(_random_market(seed))
    assert bl >= dr - 1e-6


@pytest.mark.slow
def test_bl_income_dominates_dr_on_a_hundred_markets():
    for seed in range(100):
        bounds = UNIT if seed % 2 else BoundedInterval(0.0, 2.0)
        bl, dr = _bl_and_dr_incomes(_random_market(seed, n=8), bounds)
        assert bl >= dr - 1e-6 * max(1.0, abs(dr)), seed


@pytest.mark.slow
def test_bl_coefficients_are_consistent():
    cfg = MarketSynthConfig(a=(0.5, 1.0, -0.5), noise_scale=0.1)
    inst = ProducerInstance(cfg.c1, cfg.c2, WIDE)

    def error(n, seed):
        w = pr_fit("bl-m", inst, synthesize_market(cfg, n, seed), time_limit=600).coefficients[0].w
        return float(np.linalg.norm(w - np.asarray(cfg.a)))

    small = np.median([error(100, seed) for seed in range(20)])
    large = np.median([error(10_000, seed) for seed in range(20)])
    assert large < small
    assert large < 0.05
