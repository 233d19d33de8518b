# placement.py
"""Product placement on a network: place stock before demand is known, ship or pay a penalty after.

Decisions ``z`` (one per node) cost ``h``; once demand ``y`` is revealed, stock moves
along arcs at unit cost ``g`` and unmet demand costs ``r_pen`` per unit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd

from bilevel import (
    BigMConfig,
    BigMDerivation,
    ConvexBilevelProblem,
    LowerLevel,
    UpperTerm,
    solve_bl_bigm,
    solve_bl_regularized,
)
from config import Config
from errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    InvalidConfigError,
    InvalidInstanceError,
    SolverFailedError,
)
from models import ContextDataset, LinearCoefficients, ols_fit
from solvers import LinearProgram, SolveReport, SolveStatus, solve_lp

logger = logging.getLogger("ctxopt.placement")


# ----- Network and instance -----

@dataclass(frozen=True)
class Network:
    nodes: tuple
    arcs: tuple  # (origin index, end index) pairs

    def __post_init__(self):
        nodes = tuple(str(n) for n in self.nodes)
        if not nodes:
            raise InvalidInstanceError("network has no nodes")
        if len(set(nodes)) != len(nodes):
            raise InvalidInstanceError("duplicate node names")
        arcs = tuple((int(o), int(e)) for o, e in self.arcs)
        for o, e in arcs:
            if not (0 <= o < len(nodes) and 0 <= e < len(nodes)):
                raise InvalidInstanceError(f"arc ({o}, {e}) refers to a missing node")
            if o == e:
                raise InvalidInstanceError(f"self-loop at node {nodes[o]!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "arcs", arcs)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    @property
    def incidence(self) -> np.ndarray:
        """Node-arc matrix: +1 at the origin, -1 at the end of every arc."""
        A = np.zeros((self.n_nodes, self.n_arcs))
        for j, (o, e) in enumerate(self.arcs):
            A[o, j] = 1.0
            A[e, j] = -1.0
        return A

    def in_degree(self) -> np.ndarray:
        ends = np.array([e for _, e in self.arcs], dtype=int)
        return np.bincount(ends, minlength=self.n_nodes)


@dataclass(frozen=True, eq=False)
class PlacementInstance:
    h: np.ndarray       # placement cost per node
    g: np.ndarray       # shipping cost per arc
    r_pen: np.ndarray   # unmet-demand penalty per node

    def __post_init__(self):
        h = np.array(self.h, dtype=float).ravel()
        g = np.array(self.g, dtype=float).ravel()
        r = np.array(self.r_pen, dtype=float).ravel()
        if h.shape != r.shape:
            raise DimensionMismatchError(f"{h.size} placement costs but {r.size} penalties")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g)) and np.all(np.isfinite(r))):
            raise InvalidInstanceError("placement costs must be finite")
        if np.any(h <= 0) or np.any(r <= h):
            raise InvalidInstanceError("placement needs r_pen > h > 0 at every node")
        if np.any(g <= 0):
            raise InvalidInstanceError("shipping costs must be positive")
        for name, arr in (("h", h), ("g", g), ("r_pen", r)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def check(self, net: Network) -> None:
        if self.h.size != net.n_nodes or self.g.size != net.n_arcs:
            raise DimensionMismatchError(
                f"instance sized for {self.h.size} nodes / {self.g.size} arcs, "
                f"network has {net.n_nodes} / {net.n_arcs}"
            )

    def shipping_uneconomical(self, net: Network) -> bool:
        """True when no shipment is ever cheaper than placing at the demand node."""
        self.check(net)
        return bool(net.n_arcs == 0 or self.g.min() > self.h.max())

    def perturbed_shipping(self) -> tuple[np.ndarray, float]:
        """Shipping costs with distinct per-arc offsets below ``1e-7 * min g``."""
        if self.g.size == 0:
            return self.g.copy(), 0.0
        delta = 1e-7 * float(self.g.min())
        offsets = (np.arange(self.g.size) + 1.0) * delta / self.g.size
        return self.g + offsets, delta


@dataclass(frozen=True, eq=False)
class PlacementPolicy:
    W: np.ndarray  # nodes x features

    def __post_init__(self):
        W = np.array(self.W, dtype=float, ndmin=2)
        if not np.all(np.isfinite(W)):
            raise InvalidConfigError("policy coefficients must be finite")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def rows(self) -> tuple[LinearCoefficients, ...]:
        return tuple(LinearCoefficients(row) for row in self.W)

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.W.shape[1]:
            raise DimensionMismatchError(
                f"policy has {self.W.shape[1]} features, context has {x.shape[-1]}"
            )
        return x @ self.W.T


class RecourseResult(NamedTuple):
    cost: float
    flows: np.ndarray
    penalties: np.ndarray


# ----- Operations -----

def _check_demands(net, *vectors):
    for v in vectors:
        if v.shape != (net.n_nodes,):
            raise DimensionMismatchError(f"expected {net.n_nodes} node values, got shape {v.shape}")


def pl_recourse_cost(inst: PlacementInstance, net: Network, z, y, config=Config) -> RecourseResult:
    """Placement cost plus the cheapest shipping/penalty response to demand ``y``."""
    inst.check(net)
    z, y = np.asarray(z, dtype=float), np.asarray(y, dtype=float)
    _check_demands(net, z, y)
    if np.any(z < -config.FEASIBILITY_TOL):
        raise InvalidInstanceError("placements must be nonnegative")
    nA, nB = net.n_arcs, net.n_nodes
    # variables: flows (arcs), unmet demand (nodes)
    lp = LinearProgram(
        np.concatenate([inst.g, inst.r_pen]),
        np.hstack([net.incidence, -np.eye(nB)]), z - y,
        lower=np.zeros(nA + nB),
    )
    report = solve_lp(lp, config)
    if not report.ok:
        raise SolverFailedError(f"recourse LP ended {report.status.value}", report)
    return RecourseResult(
        cost=float(inst.h @ z + report.objective),
        flows=report.z[:nA],
        penalties=report.z[nA:],
    )


def _surrogate(inst, net, y_hat, config):
    g_prime, _ = inst.perturbed_shipping()
    nA, nB = net.n_arcs, net.n_nodes
    lp = LinearProgram(
        np.concatenate([inst.h, g_prime]),
        np.hstack([-np.eye(nB), net.incidence]), -y_hat,
        lower=np.zeros(nB + nA),
    )
    report = solve_lp(lp, config)
    if not report.ok:
        raise SolverFailedError(f"placement surrogate LP ended {report.status.value}", report)
    return report.z[:nB], report.z[nB:]


def pl_surrogate_decide(inst: PlacementInstance, net: Network, y_hat, config=Config) -> np.ndarray:
    """Placements that cover the predicted demand at least cost; predictions below 0 ask for nothing."""
    inst.check(net)
    y_hat = np.asarray(y_hat, dtype=float)
    _check_demands(net, y_hat)
    if not np.all(np.isfinite(y_hat)):
        raise InvalidInstanceError("predicted demands must be finite")
    return _surrogate(inst, net, y_hat, config)[0]


def pl_surrogate_flows(inst: PlacementInstance, net: Network, y_hat, config=Config) -> np.ndarray:
    inst.check(net)
    return _surrogate(inst, net, np.asarray(y_hat, dtype=float), config)[1]


def _demands(net, data: ContextDataset) -> np.ndarray:
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    if data.outcome_dim != net.n_nodes:
        raise DimensionMismatchError(
            f"dataset has {data.outcome_dim} demand columns for {net.n_nodes} nodes"
        )
    return data.outcomes


def pl_fit_fo(inst: PlacementInstance, net: Network, data: ContextDataset) -> PlacementPolicy:
    _demands(net, data)
    return PlacementPolicy(np.vstack([ols_fit(data, b).w for b in range(net.n_nodes)]))


def pl_fit_dr(inst: PlacementInstance, net: Network, data: ContextDataset,
              config=Config) -> PlacementPolicy:
    """Decision rule ``z_i = W x_i >= 0`` minimizing the in-sample two-stage cost, as one LP.

    Variables: ``vec(W)`` (free), then per sample flows ``f_i`` and unmet demand ``p_i``.
    """
    inst.check(net)
    Y = _demands(net, data)
    X = data.contexts
    N, p = X.shape
    nB, nA = net.n_nodes, net.n_arcs
    nw, block = nB * p, nA + nB
    nz = nw + N * block
    A_mat = net.incidence

    c = np.zeros(nz)
    c[:nw] = np.kron(inst.h, X.sum(axis=0))
    A = np.zeros((2 * N * nB, nz))
    b = np.zeros(2 * N * nB)
    for i in range(N):
        Xi = np.kron(np.eye(nB), X[i][None, :])
        o = nw + i * block
        c[o:o + nA] = inst.g
        c[o + nA:o + block] = inst.r_pen
        r = slice(2 * i * nB, (2 * i + 1) * nB)
        A[r, :nw] = -Xi
        A[r, o:o + nA] = A_mat
        A[r, o + nA:o + block] = -np.eye(nB)
        b[r] = -Y[i]
        r = slice((2 * i + 1) * nB, (2 * i + 2) * nB)
        A[r, :nw] = -Xi
    lower = np.concatenate([np.full(nw, -np.inf), np.zeros(N * block)])
    report = solve_lp(LinearProgram(c, A, b, lower=lower), config)
    if not report.ok:
        raise SolverFailedError(f"placement DR LP ended {report.status.value}", report)
    logger.info("Placement DR fit", extra={"objective": report.objective, "samples": N})
    return PlacementPolicy(report.z[:nw].reshape(nB, p))


def placement_bilevel(inst: PlacementInstance, net: Network, data: ContextDataset,
                      config=Config) -> tuple[ConvexBilevelProblem, float]:
    """The BL program: surrogate LP as lower level, recourse cost as upper level.

    Lower variables ``v = (z, f)``; upper auxiliaries ``(f_hat, p_hat)`` are the
    realized recourse. Returns the problem and the shipping-cost perturbation used.
    """
    inst.check(net)
    Y = _demands(net, data)
    nB, nA = net.n_nodes, net.n_arcs
    n = nB + nA
    A_mat = net.incidence
    g_prime, delta = inst.perturbed_shipping()

    G = np.block([
        [-np.eye(nB), np.zeros((nB, nA))],
        [np.zeros((nA, nB)), -np.eye(nA)],
        [-np.eye(nB), A_mat],
    ])
    D = np.vstack([np.zeros((nB + nA, nB)), -np.eye(nB)])
    lower = LowerLevel(
        H=np.zeros((n, n)), c=np.concatenate([inst.h, g_prime]), C=np.zeros((n, nB)),
        G=G, d=np.zeros(G.shape[0]), D=D,
    )
    q = np.concatenate([inst.h, np.zeros(nA), inst.g, inst.r_pen])
    m = q.size
    A_up = np.vstack([
        np.hstack([-np.eye(nB), np.zeros((nB, nA)), A_mat, -np.eye(nB)]),
        np.hstack([np.zeros((nA + nB, n)), -np.eye(nA + nB)]),
    ])
    upper = tuple(
        UpperTerm(np.zeros((m, m)), q, A_up, np.concatenate([-y, np.zeros(nA + nB)]))
        for y in Y
    )
    scale = config.BIGM_PREDICTION_SCALE * max(float(np.abs(Y).max()), 1.0)
    t_hi = np.full(nB, scale)
    v_hi = float(np.maximum(t_hi, 0.0).sum())
    problem = ConvexBilevelProblem(
        lower=lower, contexts=data.contexts, upper=upper,
        decision_bounds=(np.zeros(n), np.full(n, v_hi)),
        prediction_range=(-t_hi, t_hi), name="placement",
    )
    return problem, delta


def placement_big_m(inst: PlacementInstance, net: Network, problem: ConvexBilevelProblem) -> BigMConfig:
    """Big-M constants from the surrogate's dual structure.

    Stationarity in ``z`` caps every balance and placement multiplier by ``h``; in ``f``
    it caps the flow multipliers by ``g' + max h``. The dual constant doubles that
    so an attained bound never reads as cap contact.
    """
    g_prime, _ = inst.perturbed_shipping()
    m_dual = 2.0 * float(inst.h.max() + (g_prime.max() if g_prime.size else 0.0))
    v_hi = float(problem.decision_bounds[1].max())
    t_hi = float(np.abs(np.concatenate(problem.prediction_range)).max())
    m_primal = v_hi * (1.0 + float(net.in_degree().max(initial=0))) + t_hi
    return BigMConfig(m_primal, m_dual, BigMDerivation.FROM_BOUNDS)


def pl_solve_bl(inst: PlacementInstance, net: Network, data: ContextDataset, config=Config, *,
                mode="bigm", start=None, bigm: BigMConfig | None = None,
                time_limit=None, solve_log=None) -> tuple[PlacementPolicy, SolveReport]:
    """Fit the BL policy and return it with the solver report.

    ``mode`` is ``"bigm"`` (global, warm-started from the DR policy) or ``"regularized"``.
    """
    problem, delta = placement_bilevel(inst, net, data, config)
    if start is None:
        try:
            start = pl_fit_dr(inst, net, data, config).W
        except SolverFailedError:
            logger.warning("DR warm start unavailable, starting from zero coefficients")
            start = None
    elif isinstance(start, PlacementPolicy):
        start = start.W

    if mode == "bigm":
        m = bigm or placement_big_m(inst, net, problem)
        report = solve_bl_bigm(problem, m, config, start=start, strategy="complementarity",
                               time_limit=time_limit, solve_log=solve_log)
    elif mode == "regularized":
        report = solve_bl_regularized(problem, start=start, config=config)
    else:
        raise InvalidConfigError(f"unknown BL mode {mode!r}")

    report = report.replace(message=f"{report.message}; shipping perturbation {delta:.3g}")
    if any(flag.startswith("degenerate") for flag in report.flags):
        logger.warning("Several surrogate optima at the fitted policy",
                       extra={"flags": list(report.flags)})
    if report.z is None:
        raise SolverFailedError(f"placement BL fit ended {report.status.value}", report)
    W = np.asarray(report.z)[:problem.n_w].reshape(problem.k, problem.p)
    return PlacementPolicy(W), report


def pl_fit_bl(inst: PlacementInstance, net: Network, data: ContextDataset, config=Config,
              **options) -> PlacementPolicy:
    policy, report = pl_solve_bl(inst, net, data, config, **options)
    if report.status not in (SolveStatus.OPTIMAL, SolveStatus.TIME_LIMIT, SolveStatus.ITER_LIMIT):
        raise SolverFailedError(f"placement BL fit ended {report.status.value}", report)
    return policy


def pl_decide(inst: PlacementInstance, net: Network, policy: PlacementPolicy, x, config=Config) -> np.ndarray:
    return pl_surrogate_decide(inst, net, policy.predict(x), config)


def pl_decide_dr(policy: PlacementPolicy, x, *, repair=False, tol=Config.FEASIBILITY_TOL):
    """Raw rule output ``W x`` and whether it is a valid (nonnegative) placement."""
    z = policy.predict(x)
    feasible = bool(np.all(z >= -tol))
    if repair:
        z = np.maximum(z, 0.0)
    return z, feasible


def pl_in_sample_cost(inst: PlacementInstance, net: Network, decisions, data: ContextDataset,
                      config=Config) -> float:
    Y = _demands(net, data)
    decisions = np.asarray(decisions, dtype=float)
    return float(sum(pl_recourse_cost(inst, net, z, y, config).cost for z, y in zip(decisions, Y)))


def pl_policy_decisions(inst: PlacementInstance, net: Network, policy: PlacementPolicy,
                        contexts, method="surrogate", config=Config) -> np.ndarray:
    """Decisions of a fitted policy at every context; ``method="rule"`` uses ``max(W x, 0)``."""
    contexts = np.atleast_2d(contexts)
    if method == "rule":
        return np.maximum(policy.predict(contexts), 0.0)
    return np.vstack([pl_decide(inst, net, policy, x, config) for x in contexts])


# ----- File input -----

def read_network(arcs_path, nodes_path) -> tuple[Network, PlacementInstance]:
    """Read ``node,h,r_pen`` and ``origin,end,g`` CSV files."""
    nodes = pd.read_csv(nodes_path)
    arcs = pd.read_csv(arcs_path)
    for frame, cols, path in ((nodes, ("node", "h", "r_pen"), nodes_path),
                              (arcs, ("origin", "end", "g"), arcs_path)):
        missing = [c for c in cols if c not in frame.columns]
        if missing:
            raise InvalidConfigError(f"{path}: missing columns {missing}")
    names = [str(n) for n in nodes["node"]]
    index = {name: j for j, name in enumerate(names)}
    try:
        pairs = [(index[str(o)], index[str(e)]) for o, e in zip(arcs["origin"], arcs["end"])]
    except KeyError as exc:
        raise InvalidConfigError(f"{arcs_path}: unknown node {exc.args[0]!r}") from None
    try:
        inst = PlacementInstance(
            h=nodes["h"].to_numpy(dtype=float),
            g=arcs["g"].to_numpy(dtype=float),
            r_pen=nodes["r_pen"].to_numpy(dtype=float),
        )
    except InvalidInstanceError:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidConfigError(f"non-numeric cost entry ({exc})") from exc
    return Network(tuple(names), tuple(pairs)), inst
