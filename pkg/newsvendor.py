# newsvendor.py
"""Contextual newsvendor: order z at unit cost d, sell min(z, demand) at unit price r."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from config import Config
from errors import EmptyDatasetError, InvalidInstanceError, SolverFailedError
from models import ContextDataset, LinearCoefficients, ols_fit, predict_linear
from solvers import LinearProgram, SolveStatus, solve_lp

logger = logging.getLogger("ctxopt.newsvendor")


@dataclass(frozen=True)
class NewsvendorInstance:
    d: float  # unit cost
    r: float  # unit revenue

    def __post_init__(self):
        if not (np.isfinite(self.d) and np.isfinite(self.r)) or not self.r > self.d > 0:
            raise InvalidInstanceError(f"newsvendor needs r > d > 0, got d={self.d}, r={self.r}")

    @property
    def critical_ratio(self) -> float:
        return (self.r - self.d) / self.r


def nv_cost(inst: NewsvendorInstance, z, y):
    """Net cost ``d z - r min(z, y)``; vectorized over matching arrays."""
    return inst.d * np.asarray(z) - inst.r * np.minimum(z, y)


def nv_surrogate_decide(inst: NewsvendorInstance, y_hat: float) -> float:
    # orders are nonnegative
    return max(float(y_hat), 0.0)


def nv_fit_fo(inst: NewsvendorInstance, data: ContextDataset, target=0) -> LinearCoefficients:
    return ols_fit(data, target)


def _solve_order_lp(inst: NewsvendorInstance, X, y, ordering, config):
    """LP over ``(w, s)`` with ``s_i <= x_i^T w`` and ``s_i <= y_i``.

    ``ordering`` is ``None`` for the plain LP. Otherwise it fixes the sign of every
    prediction: samples marked True keep ``x_i^T w >= 0`` and carry the cost
    ``d x_i^T w - r s_i``; the rest keep ``x_i^T w <= 0`` and cost nothing.
    """
    N, p = X.shape
    charged = np.ones(N, dtype=bool) if ordering is None else ordering
    c = np.concatenate([inst.d * X[charged].sum(axis=0), np.where(charged, -inst.r, 0.0)])
    A = np.hstack([-X, np.eye(N)])
    b = np.zeros(N)
    if ordering is not None:
        sign = np.where(ordering, -1.0, 1.0)
        A = np.vstack([A, np.hstack([sign[:, None] * X, np.zeros((N, N))])])
        b = np.zeros(2 * N)
    upper = np.concatenate([np.full(p, np.inf), y])
    report = solve_lp(LinearProgram(c, A, b, upper=upper), config)
    if report.status is not SolveStatus.OPTIMAL:
        raise SolverFailedError(f"newsvendor LP ended {report.status.value}", report)
    return report


def nv_fit_bl(inst: NewsvendorInstance, data: ContextDataset, target=0,
              config=Config) -> LinearCoefficients:
    """Linear predictor minimizing the in-sample newsvendor cost of the orders ``max(x^T w, 0)``.

    The LP over ``(w, s)``, ``min sum_i d x_i^T w - r s_i`` with ``s_i <= x_i^T w`` and
    ``s_i <= y_i``, charges negative predictions that the clipped orders never place. The
    better of its solution and the OLS coefficients is therefore re-solved with every
    prediction's sign held fixed, until the clipped cost stops falling. On a fixed sign
    pattern the LP objective is the clipped cost, so no round is worse than its start.
    """
    if len(data) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    X, y = data.contexts, data.outcome(target)
    p = X.shape[1]
    report = _solve_order_lp(inst, X, y, None, config)
    candidates = [LinearCoefficients(report.z[:p]), ols_fit(data, target)]
    costs = [nv_in_sample_cost(inst, w, data, target) for w in candidates]
    best = int(np.argmin(costs))
    w, cost = candidates[best], costs[best]
    rounds = 0
    for rounds in range(1, config.POLISH_MAX_ROUNDS + 1):
        ordering = X @ w.w > config.FEASIBILITY_TOL
        trial = LinearCoefficients(_solve_order_lp(inst, X, y, ordering, config).z[:p])
        trial_cost = nv_in_sample_cost(inst, trial, data, target)
        if trial_cost >= cost - config.OPTIMALITY_TOL * max(1.0, abs(cost)):
            break
        w, cost = trial, trial_cost
    logger.info("Newsvendor BL fit", extra={
        "lp_objective": report.objective, "cost": cost, "start": ("lp", "ols")[best],
        "rounds": rounds, "samples": len(X),
    })
    return w


def nv_fit_dr(inst: NewsvendorInstance, data: ContextDataset, target=0,
              config=Config) -> LinearCoefficients:
    """The decision-rule fit coincides with the BL fit for this problem."""
    logger.debug("Newsvendor DR fit delegated to the BL fit")
    return nv_fit_bl(inst, data, target, config)


def nv_decide(inst: NewsvendorInstance, w, x) -> float:
    return nv_surrogate_decide(inst, predict_linear(w, x))


def nv_decisions(inst: NewsvendorInstance, w, contexts) -> np.ndarray:
    return np.maximum(predict_linear(w, np.atleast_2d(contexts)), 0.0)


def nv_in_sample_cost(inst: NewsvendorInstance, w, data: ContextDataset, target=0) -> float:
    z = nv_decisions(inst, w, data.contexts)
    return float(nv_cost(inst, z, data.outcome(target)).sum())
