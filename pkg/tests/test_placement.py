import numpy as np
import pytest

from errors import DimensionMismatchError, InvalidConfigError, InvalidInstanceError
from models import ContextDataset
from placement import (
    Network,
    PlacementInstance,
    PlacementPolicy,
    pl_decide_dr,
    pl_fit_dr,
    pl_fit_fo,
    pl_in_sample_cost,
    pl_policy_decisions,
    pl_recourse_cost,
    pl_solve_bl,
    pl_surrogate_decide,
    read_network,
)
from solvers import SolveStatus


@pytest.fixture()
def net():
    return Network(("north", "south"), ((0, 1), (1, 0)))


def _instance(h=(1.0, 1.2), g=(0.5, 0.5), r_pen=(5.0, 5.0)):
    return PlacementInstance(np.array(h), np.array(g), np.array(r_pen))


def _small_data():
    x = np.array([0.0, 0.5, 1.0])
    Y = np.array([[1.0, 0.5], [2.0, 1.0], [3.0, 0.8]])
    return ContextDataset(np.column_stack([np.ones(3), x]), Y, ("north", "south"))


def test_network_validation():
    with pytest.raises(InvalidInstanceError):
        Network((), ())
    with pytest.raises(InvalidInstanceError):
        Network(("a", "a"), ())
    with pytest.raises(InvalidInstanceError):
        Network(("a", "b"), ((0, 2),))
    with pytest.raises(InvalidInstanceError):
        Network(("a", "b"), ((1, 1),))


def test_incidence_marks_origin_and_end(net):
    assert net.incidence.tolist() == [[1.0, -1.0], [-1.0, 1.0]]


def test_instance_validation(net):
    with pytest.raises(InvalidInstanceError):
        _instance(r_pen=(1.0, 5.0))
    with pytest.raises(InvalidInstanceError):
        _instance(g=(0.0, 0.5))
    with pytest.raises(DimensionMismatchError):
        _instance(g=(0.5,)).check(net)


def test_shipping_perturbation_is_small_and_distinct():
    g_prime, delta = _instance().perturbed_shipping()
    assert delta == pytest.approx(5e-8)
    offsets = g_prime - 0.5
    assert len(set(offsets.tolist())) == 2
    assert np.all(offsets > 0) and np.all(offsets <= delta + 1e-18)


def test_uneconomical_shipping(net):
    assert _instance(g=(5.0, 5.0)).shipping_uneconomical(net)
    assert not _instance().shipping_uneconomical(net)


def test_recourse_penalty_only(net):
    result = pl_recourse_cost(_instance(), net, [0.0, 0.0], [1.0, 0.0])
    assert result.cost == pytest.approx(5.0)
    assert result.penalties == pytest.approx([1.0, 0.0], abs=1e-9)


def test_recourse_ships_surplus(net):
    result = pl_recourse_cost(_instance(), net, [2.0, 0.0], [1.0, 1.0])
    assert result.cost == pytest.approx(2.5)
    assert result.flows == pytest.approx([1.0, 0.0], abs=1e-9)


def test_recourse_rejects_negative_placements(net):
    with pytest.raises(InvalidInstanceError):
        pl_recourse_cost(_instance(), net, [-1.0, 0.0], [1.0, 1.0])


def test_surrogate_places_locally_when_shipping_costs_more(net):
    assert pl_surrogate_decide(_instance(), net, [1.0, 1.0]) == pytest.approx([1.0, 1.0], abs=1e-9)


def test_surrogate_ships_from_the_cheap_node(net):
    inst = _instance(h=(1.0, 2.0))
    assert pl_surrogate_decide(inst, net, [1.0, 1.0]) == pytest.approx([2.0, 0.0], abs=1e-9)


def test_surrogate_ignores_negative_predictions(net):
    assert pl_surrogate_decide(_instance(), net, [-1.0, -3.0]) == pytest.approx([0.0, 0.0], abs=1e-12)


def test_fo_recovers_noiseless_demand(net):
    x = np.linspace(0.0, 1.0, 6)
    X = np.column_stack([np.ones(6), x])
    Y = np.column_stack([1.0 + x, 2.0 - x])
    policy = pl_fit_fo(_instance(), net, ContextDataset(X, Y))
    assert policy.W == pytest.approx([[1.0, 1.0], [2.0, -1.0]], abs=1e-9)


def test_dr_beats_placing_nothing(net):
    inst, data = _instance(), _small_data()
    policy = pl_fit_dr(inst, net, data)
    z = pl_policy_decisions(inst, net, policy, data.contexts, method="rule")
    assert np.all(z >= 0)
    nothing = pl_in_sample_cost(inst, net, np.zeros_like(z), data)
    assert pl_in_sample_cost(inst, net, z, data) <= nothing + 1e-9


def test_dr_rule_feasibility_flag():
    policy = PlacementPolicy([[1.0, -2.0], [0.5, 0.0]])
    z, feasible = pl_decide_dr(policy, [1.0, 1.0])
    assert not feasible
    assert z == pytest.approx([-1.0, 0.5])
    z, _ = pl_decide_dr(policy, [1.0, 1.0], repair=True)
    assert z == pytest.approx([0.0, 0.5])


def test_bl_never_worse_than_dr_in_sample():
    net = Network(("north", "south"), ((0, 1),))
    inst = _instance(g=(0.5,))
    data = _small_data()
    dr = pl_fit_dr(inst, net, data)
    dr_cost = pl_in_sample_cost(inst, net, pl_policy_decisions(inst, net, dr, data.contexts, "rule"), data)
    policy, report = pl_solve_bl(inst, net, data, start=dr, time_limit=120)
    assert report.status in (SolveStatus.OPTIMAL, SolveStatus.TIME_LIMIT)
    bl_cost = pl_in_sample_cost(inst, net, pl_policy_decisions(inst, net, policy, data.contexts), data)
    assert bl_cost <= dr_cost + 1e-5


def test_bl_rejects_unknown_mode(net):
    with pytest.raises(InvalidConfigError):
        pl_solve_bl(_instance(), net, _small_data(), mode="heuristic")


def test_read_network(tmp_path):
    nodes = tmp_path / "nodes.csv"
    arcs = tmp_path / "arcs.csv"
    nodes.write_text("node,h,r_pen\nnorth,1.0,6.0\nsouth,0.9,5.0\n")
    arcs.write_text("origin,end,g\nnorth,south,0.6\n")
    net, inst = read_network(arcs, nodes)
    assert net.nodes == ("north", "south")
    assert net.arcs == ((0, 1),)
    assert inst.g == pytest.approx([0.6])


def test_read_network_unknown_node(tmp_path):
    nodes = tmp_path / "nodes.csv"
    arcs = tmp_path / "arcs.csv"
    nodes.write_text("node,h,r_pen\nnorth,1.0,6.0\n")
    arcs.write_text("origin,end,g\nnorth,east,0.6\n")
    with pytest.raises(InvalidConfigError):
        read_network(arcs, nodes)


def test_bl_with_costly_shipping_matches_per_node_enumeration():
    # shipping dearer than every penalty: nodes decouple into newsvendor problems
    net = Network(("north", "south"), ((0, 1),))
    inst = _instance(h=(1.0, 1.0), g=(10.0,), r_pen=(5.0, 4.0))
    Y = np.array([[1.0, 2.0], [2.0, 0.0], [3.0, 3.0], [4.0, 1.0]])
    data = ContextDataset(np.ones((4, 1)), Y, ("north", "south"))
    oracle = 0.0
    for b in range(2):
        y = Y[:, b]
        oracle += min(np.sum(inst.h[b] * z + inst.r_pen[b] * np.maximum(y - z, 0.0))
                      for z in np.append(y, 0.0))
    policy, _ = pl_solve_bl(inst, net, data)
    decisions = pl_policy_decisions(inst, net, policy, data.contexts)
    assert pl_in_sample_cost(inst, net, decisions, data) == pytest.approx(oracle, abs=1e-6)


@pytest.mark.slow
def test_bl_never_worse_than_dr_on_random_instances():
    net = Network(("north", "south"), ((0, 1),))
    for seed in range(100):
        rng = np.random.default_rng(seed)
        h = rng.uniform(0.5, 1.5, 2)
        inst = _instance(h=h, g=rng.uniform(0.1, 1.0, 1), r_pen=h + rng.uniform(1.0, 5.0, 2))
        x = rng.uniform(0.0, 1.0, 3)
        Y = np.maximum(rng.uniform(0.5, 3.0, (3, 2)) + np.outer(x, rng.uniform(-1.0, 1.0, 2)), 0.0)
        data = ContextDataset(np.column_stack([np.ones(3), x]), Y, ("north", "south"))
        dr = pl_fit_dr(inst, net, data)
        dr_cost = pl_in_sample_cost(inst, net, pl_policy_decisions(inst, net, dr, data.contexts, "rule"), data)
        policy, _ = pl_solve_bl(inst, net, data, start=dr, time_limit=120)
        bl_cost = pl_in_sample_cost(inst, net, pl_policy_decisions(inst, net, policy, data.contexts), data)
        assert bl_cost <= dr_cost + 1e-6 * max(1.0, abs(dr_cost)), seed
