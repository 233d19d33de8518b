# producer.py
"""Strategic producer offering a quantity into a market with linear inverse demand.

Per period the price is ``alpha - beta q`` and the production cost ``c2 q^2 + c1 q``,
so the income is ``-beta' q^2 + alpha' q`` with ``alpha' = alpha - c1`` and
``beta' = beta + c2``. The only parameter the decision depends on is
``gamma = alpha' / beta'``: the best offer is ``clip(gamma / 2, lo, hi)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from bilevel import (
    BigMConfig,
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
    InfeasibleRuleError,
    InvalidConfigError,
    InvalidInstanceError,
    NonpositiveSlopeError,
    SolverFailedError,
)
from models import BoundedInterval, ContextDataset, LinearCoefficients, ols_fit, predict_linear
from solvers import QuadraticProgram, SolveReport, SolveStatus, solve_qp

logger = logging.getLogger("ctxopt.producer")

METHODS = ("fo", "dr", "bl-m", "bl-r", "bn")


@dataclass(frozen=True)
class ProducerInstance:
    c1: float
    c2: float
    bounds: BoundedInterval

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0) or not np.isfinite(self.c1 + self.c2):
            raise InvalidInstanceError(f"costs must be positive, got c1={self.c1}, c2={self.c2}")
        if self.bounds.lo < 0:
            raise InvalidInstanceError(f"minimum output must be nonnegative, got {self.bounds.lo}")

    def with_bounds(self, lo, hi) -> "ProducerInstance":
        return ProducerInstance(self.c1, self.c2, BoundedInterval(lo, hi))


TECHNOLOGIES = {
    "base": ProducerInstance(10.0, 0.005, BoundedInterval(0.0, 1000.0)),
    "medium": ProducerInstance(35.0, 0.005, BoundedInterval(0.0, 500.0)),
    "peak": ProducerInstance(50.0, 0.005, BoundedInterval(0.0, 250.0)),
}


@dataclass(frozen=True)
class MarketObservation:
    alpha: float
    beta: float
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise InvalidInstanceError("market parameters must be finite")
        if self.beta <= 0 or self.beta_prime <= 0:
            raise NonpositiveSlopeError(f"inverse demand slope must be positive, got {self.beta}")

    @classmethod
    def for_instance(cls, alpha, beta, inst: ProducerInstance) -> "MarketObservation":
        return cls(float(alpha), float(beta), inst.c1, inst.c2)

    @property
    def alpha_prime(self) -> float:
        return self.alpha - self.c1

    @property
    def beta_prime(self) -> float:
        return self.beta + self.c2

    @property
    def gamma(self) -> float:
        return self.alpha_prime / self.beta_prime


def _outcome_columns(data: ContextDataset):
    names = data.outcome_names
    if "alpha" in names and "beta" in names:
        return names.index("alpha"), names.index("beta")
    if data.outcome_dim < 2:
        raise DimensionMismatchError("producer data needs alpha and beta outcome columns")
    return 0, 1


def market_parameters(inst: ProducerInstance, data: ContextDataset) -> tuple[np.ndarray, np.ndarray]:
    """Transformed ``(alpha', beta')`` per sample; rejects nonpositive slopes."""
    if len(data) == 0:
        raise EmptyDatasetError("producer data is empty")
    ia, ib = _outcome_columns(data)
    alpha, beta = data.outcomes[:, ia], data.outcomes[:, ib]
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise InvalidInstanceError("market parameters must be finite")
    bad = np.flatnonzero((beta <= 0) | (beta + inst.c2 <= 0))
    if bad.size:
        raise NonpositiveSlopeError(f"{bad.size} samples with a nonpositive slope, first at row {bad[0]}")
    return alpha - inst.c1, beta + inst.c2


def observations(inst: ProducerInstance, data: ContextDataset) -> list[MarketObservation]:
    ia, ib = _outcome_columns(data)
    return [MarketObservation.for_instance(a, b, inst) for a, b in data.outcomes[:, [ia, ib]]]


def scale_slopes(data: ContextDataset, factor: float) -> ContextDataset:
    """Multiply every inverse-demand slope by ``factor`` (less elastic residual demand)."""
    if not factor > 0:
        raise InvalidConfigError(f"slope factor must be positive, got {factor}")
    _, ib = _outcome_columns(data)
    outcomes = np.array(data.outcomes)
    outcomes[:, ib] *= factor
    return data.with_outcomes(outcomes)


# ----- Income and benchmark -----

def pr_income(q, obs: MarketObservation) -> float:
    return float(-obs.beta_prime * q * q + obs.alpha_prime * q)


def incomes(q, alpha_p, beta_p) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return -beta_p * q * q + alpha_p * q


def pr_decide_bn(obs: MarketObservation, bounds: BoundedInterval) -> float:
    return float(bounds.clip(obs.gamma / 2.0))


def bn_decisions(alpha_p, beta_p, bounds: BoundedInterval) -> np.ndarray:
    return bounds.clip(np.asarray(alpha_p) / np.asarray(beta_p) / 2.0)


def pr_operating_regime(obs, bounds: BoundedInterval, tol=1e-9) -> tuple[float, float, float]:
    """Share of periods (%) whose perfect-information offer sits at the minimum, inside, or at the maximum."""
    obs = list(obs)
    if not obs:
        raise EmptyDatasetError("no observations")
    q = np.array([pr_decide_bn(o, bounds) for o in obs])
    margin = tol * max(1.0, bounds.scale)
    at_lo = np.mean(q <= bounds.lo + margin)
    at_hi = np.mean((q >= bounds.hi - margin) & (q > bounds.lo + margin))
    return 100.0 * at_lo, 100.0 * (1.0 - at_lo - at_hi), 100.0 * at_hi


# ----- Forecast-then-optimize -----

def pr_fit_fo(inst: ProducerInstance, data: ContextDataset) -> tuple[LinearCoefficients, LinearCoefficients]:
    alpha_p, beta_p = market_parameters(inst, data)
    transformed = data.with_outcomes(np.column_stack([alpha_p, beta_p]), ("alpha", "beta"))
    return ols_fit(transformed, 0), ols_fit(transformed, 1)


def pr_decide_fo(w_alpha, w_beta, x, bounds: BoundedInterval):
    """Minimize the predicted ``b q^2 - a q`` over the bounds by candidate enumeration."""
    a = np.asarray(predict_linear(w_alpha, x), dtype=float)
    b = np.asarray(predict_linear(w_beta, x), dtype=float)
    lo, hi = bounds.lo, bounds.hi
    safe_b = np.where(b > 0, b, 1.0)
    interior = np.clip(a / (2.0 * safe_b), lo, hi)
    endpoint = np.where(b * hi * hi - a * hi < b * lo * lo - a * lo, hi, lo)
    q = np.where(b > 0, interior, endpoint)
    return float(q) if q.ndim == 0 else q


# ----- Decision rule -----

def pr_fit_dr(inst: ProducerInstance, data: ContextDataset, config=Config) -> LinearCoefficients:
    """Linear offer rule ``q = w^T x`` maximizing in-sample income within the bounds."""
    alpha_p, beta_p = market_parameters(inst, data)
    X = data.contexts
    lo, hi = inst.bounds.lo, inst.bounds.hi
    Q = 2.0 * (X * beta_p[:, None]).T @ X
    c = -X.T @ alpha_p
    qp = QuadraticProgram(Q, c, np.vstack([X, -X]),
                          np.concatenate([np.full(len(X), hi), np.full(len(X), -lo)]))
    report = solve_qp(qp, config)
    if report.status is SolveStatus.INFEASIBLE:
        raise InfeasibleRuleError("no linear offer rule stays within the bounds at every training context")
    if not report.ok:
        raise SolverFailedError(f"DR fit ended {report.status.value}", report)
    logger.info("Producer DR fit", extra={"income": -report.objective, "samples": len(X)})
    return LinearCoefficients(report.z)


def pr_decide_dr(w_q, x, bounds: BoundedInterval, *, repair=False, tol=Config.FEASIBILITY_TOL):
    """Raw rule output and whether it respects the bounds; ``repair`` clips the output."""
    q = np.asarray(predict_linear(w_q, x), dtype=float)
    margin = tol * max(1.0, bounds.scale)
    feasible = (q >= bounds.lo - margin) & (q <= bounds.hi + margin)
    if repair:
        q = bounds.clip(q)
    if q.ndim == 0:
        return float(q), bool(feasible)
    return q, feasible


# ----- Bilevel -----

@dataclass(frozen=True)
class _Scaling:
    decision: float   # quantities are divided by this
    objective: float  # incomes are divided by this


def producer_bilevel(inst: ProducerInstance, data: ContextDataset,
                     config=Config) -> tuple[ConvexBilevelProblem, _Scaling]:
    """The gamma-surrogate bilevel program in scaled units.

    Lower level per sample: ``min q^2 - theta q`` over the bounds, so ``q = clip(theta / 2)``.
    Upper level: ``beta'_i q^2 - alpha'_i q`` (the negated income).
    """
    alpha_p, beta_p = market_parameters(inst, data)
    s = inst.bounds.scale
    b_mean = float(beta_p.mean())
    scaling = _Scaling(decision=s, objective=s * s * b_mean)
    beta_t = beta_p / b_mean
    alpha_t = alpha_p / (s * b_mean)
    lo, hi = inst.bounds.lo / s, inst.bounds.hi / s
    lower = LowerLevel(H=[[2.0]], c=[0.0], C=[[-1.0]], G=[[-1.0], [1.0]], d=[-lo, hi])
    upper = tuple(UpperTerm([[2.0 * b]], [-a]) for a, b in zip(alpha_t, beta_t))
    gamma_t = alpha_t / beta_t
    T = config.BIGM_PREDICTION_SCALE * max(float(np.abs(gamma_t).max()), 2 * abs(lo), 2 * abs(hi))
    problem = ConvexBilevelProblem(
        lower=lower, contexts=data.contexts, upper=upper,
        decision_bounds=([lo], [hi]), prediction_range=([-T], [T]), name="producer",
    )
    return problem, scaling


def pr_solve_bl(inst: ProducerInstance, data: ContextDataset, mode="bigm", config=Config, *,
                start=None, bigm: BigMConfig | None = None, time_limit=None,
                solve_log=None) -> tuple[LinearCoefficients, SolveReport]:
    """Fit ``w_gamma`` and return it with the solver report (objective in income units, negated).

    ``mode`` is ``"bigm"`` (global) or ``"regularized"`` (local, started from twice the DR
    rule when available). ``start`` is an unscaled ``w_gamma``.
    """
    if mode not in ("bigm", "regularized"):
        raise InvalidConfigError(f"unknown BL mode {mode!r}")
    problem, scaling = producer_bilevel(inst, data, config)
    if start is None and mode == "regularized":
        try:
            start = 2.0 * pr_fit_dr(inst, data, config).w
        except (InfeasibleRuleError, SolverFailedError):
            start = None
    if isinstance(start, LinearCoefficients):
        start = start.w
    start_t = None if start is None else np.asarray(start, dtype=float) / scaling.decision

    if mode == "bigm":
        report = solve_bl_bigm(problem, bigm, config, start=start_t, time_limit=time_limit,
                               solve_log=solve_log)
    else:
        report = solve_bl_regularized(problem, start=start_t, config=config)
    if report.z is None:
        raise SolverFailedError(f"producer BL fit ended {report.status.value}", report)
    w = np.asarray(report.z)[:problem.n_w] * scaling.decision
    report = report.replace(objective=report.objective * scaling.objective)
    return LinearCoefficients(w), report


def pr_fit_bl(inst: ProducerInstance, data: ContextDataset, mode="bigm", config=Config,
              **options) -> LinearCoefficients:
    w, report = pr_solve_bl(inst, data, mode, config, **options)
    if report.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
        raise SolverFailedError(f"producer BL fit ended {report.status.value}", report)
    return w


def pr_decide_bl(w_gamma, x, bounds: BoundedInterval):
    q = bounds.clip(np.asarray(predict_linear(w_gamma, x), dtype=float) / 2.0)
    return float(q) if np.ndim(q) == 0 else q


# ----- Fitted policies -----

@dataclass(frozen=True, eq=False)
class ProducerPolicy:
    """A fitted method: its coefficients and, for bilevel fits, the solver report."""
    method: str
    coefficients: tuple
    report: SolveReport | None = None

    def decide(self, X, bounds: BoundedInterval, *, repair=True):
        """Offers at every context and a per-context feasibility flag of the raw rule."""
        X = np.atleast_2d(X)
        if self.method == "fo":
            q = pr_decide_fo(*self.coefficients, X, bounds)
            return q, np.ones(len(X), dtype=bool)
        if self.method == "dr":
            return pr_decide_dr(self.coefficients[0], X, bounds, repair=repair)
        if self.method in ("bl-m", "bl-r"):
            return pr_decide_bl(self.coefficients[0], X, bounds), np.ones(len(X), dtype=bool)
        raise InvalidConfigError(f"method {self.method!r} has no fitted policy")

    def as_dict(self) -> dict:
        out = {"method": self.method,
               "coefficients": [c.w.tolist() for c in self.coefficients]}
        if self.report is not None:
            out["report"] = self.report.as_dict()
        return out


def pr_fit(method: str, inst: ProducerInstance, data: ContextDataset, config=Config,
           **options) -> ProducerPolicy:
    if method == "fo":
        return ProducerPolicy("fo", pr_fit_fo(inst, data))
    if method == "dr":
        return ProducerPolicy("dr", (pr_fit_dr(inst, data, config),))
    if method in ("bl-m", "bl-r"):
        mode = "bigm" if method == "bl-m" else "regularized"
        w, report = pr_solve_bl(inst, data, mode, config, **options)
        return ProducerPolicy(method, (w,), report)
    raise InvalidConfigError(f"unknown producer method {method!r}")


def pr_in_sample_income(policy: ProducerPolicy, inst: ProducerInstance, data: ContextDataset) -> float:
    alpha_p, beta_p = market_parameters(inst, data)
    q, _ = policy.decide(data.contexts, inst.bounds, repair=True)
    return float(incomes(q, alpha_p, beta_p).sum())


def pr_decision_curve(policy: ProducerPolicy, grid, bounds: BoundedInterval, *, repair=False) -> np.ndarray:
    """Offers over a grid of single-feature contexts ``(1, x)``."""
    grid = np.asarray(grid, dtype=float)
    X = np.column_stack([np.ones_like(grid), grid])
    q, _ = policy.decide(X, bounds, repair=repair)
    return np.asarray(q, dtype=float)
