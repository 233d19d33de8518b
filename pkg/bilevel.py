# bilevel.py
"""Single-level reformulations of the contextual bilevel estimation problem.

For every sample i the lower level is the convex program

    min_v  1/2 v^T H v + (c + C theta_i)^T v
    s.t.   G v <= d + D theta_i,   E v = e + F theta_i

with the prediction theta_i = W x_i. The upper level picks W to minimize
sum_i 1/2 y_i^T P_i y_i + q_i^T y_i over y_i = [v_i; u_i], A_i y_i <= b_i, where
u_i are upper-level auxiliaries (for instance recourse flows).

Three solution routes are offered:

* ``build_kkt``              the KKT single-level system,
* ``solve_bl_regularized``   Scholtes relaxation along an epsilon schedule (BL-R),
* ``solve_bl_bigm``          Fortuny-Amat big-M branch-and-bound (BL-M).
"""
from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from config import Config
from errors import (
    DimensionMismatchError,
    InvalidConfigError,
    InvalidInstanceError,
    NonAffineEqualityError,
    UnboundedDataRangeError,
)
from models import LinearCoefficients
from solvers import (
    QuadraticProgram,
    SolveReport,
    SolveStatus,
    independent_rows,
    minimize_penalized,
    solve_qp,
)

logger = logging.getLogger("ctxopt.bilevel")


def _rows(values, n, name):
    if values is None:
        return np.zeros((0, n))
    arr = np.array(values, dtype=float, ndmin=2)
    if arr.size == 0:
        return np.zeros((0, n))
    if arr.shape[1] != n:
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected (*, {n})")
    return arr


def _block(values, shape, name):
    if values is None:
        return np.zeros(shape)
    arr = np.array(values, dtype=float, ndmin=2)
    if arr.size == 0 and 0 in shape:
        return np.zeros(shape)
    if arr.shape != shape:
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _vec(values, m, name):
    if values is None:
        return np.zeros(m)
    arr = np.array(values, dtype=float).ravel()
    if arr.shape[0] != m:
        raise DimensionMismatchError(f"{name} has length {arr.shape[0]}, expected {m}")
    return arr


def _check_psd(M, name, tol):
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise InvalidInstanceError(f"{name} is not symmetric")
    if M.size and np.linalg.eigvalsh(0.5 * (M + M.T))[0] < -tol * scale:
        raise InvalidInstanceError(f"{name} is not positive semidefinite")


def _interval(values, size, name):
    if values is None:
        return None
    lo, hi = values
    lo = np.broadcast_to(np.array(lo, dtype=float), (size,)).copy()
    hi = np.broadcast_to(np.array(hi, dtype=float), (size,)).copy()
    if np.any(lo > hi):
        raise InvalidInstanceError(f"{name} has lower > upper")
    return lo, hi


# ----- Problem description -----

@dataclass(frozen=True, eq=False)
class LowerLevel:
    H: np.ndarray
    c: np.ndarray
    C: np.ndarray             # n x k, cost sensitivity to the prediction
    G: np.ndarray | None = None
    d: np.ndarray | None = None
    D: np.ndarray | None = None
    E: np.ndarray | None = None
    e: np.ndarray | None = None
    F: np.ndarray | None = None
    equality_hessians: tuple = ()  # curvature of the equalities; must all vanish

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        n = c.shape[0]
        C = np.array(self.C, dtype=float, ndmin=2)
        if C.shape[0] != n:
            raise DimensionMismatchError(f"C has {C.shape[0]} rows, expected {n}")
        k = C.shape[1]
        H = _block(self.H, (n, n), "H")
        G = _rows(self.G, n, "G")
        E = _rows(self.E, n, "E")
        for hess in self.equality_hessians:
            if np.any(np.asarray(hess, dtype=float) != 0.0):
                raise NonAffineEqualityError("lower-level equalities must be affine")
        _check_psd(H, "H", Config.PSD_TOL)
        values = {
            "H": 0.5 * (H + H.T), "c": c, "C": C, "G": G,
            "d": _vec(self.d, G.shape[0], "d"),
            "D": _block(self.D, (G.shape[0], k), "D"),
            "E": E,
            "e": _vec(self.e, E.shape[0], "e"),
            "F": _block(self.F, (E.shape[0], k), "F"),
        }
        for name, arr in values.items():
            if not np.all(np.isfinite(arr)):
                raise InvalidInstanceError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def k(self) -> int:
        return self.C.shape[1]

    @property
    def mG(self) -> int:
        return self.G.shape[0]

    @property
    def mE(self) -> int:
        return self.E.shape[0]

    def program(self, theta) -> QuadraticProgram:
        theta = np.asarray(theta, dtype=float)
        return QuadraticProgram(
            self.H, self.c + self.C @ theta,
            self.G, self.d + self.D @ theta, self.E, self.e + self.F @ theta,
        )


@dataclass(frozen=True, eq=False)
class UpperTerm:
    """One sample's upper-level cost over ``y = [v; u]``."""
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        q = np.array(self.q, dtype=float).ravel()
        m = q.shape[0]
        P = _block(self.P, (m, m), "P")
        _check_psd(P, "P", Config.PSD_TOL)
        A = _rows(self.A, m, "A")
        b = _vec(self.b, A.shape[0], "b")
        for name, arr in (("P", 0.5 * (P + P.T)), ("q", q), ("A", A), ("b", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def size(self) -> int:
        return self.q.shape[0]

    def value(self, y) -> float:
        return float(0.5 * y @ self.P @ y + self.q @ y)


@dataclass(frozen=True, eq=False)
class ConvexBilevelProblem:
    lower: LowerLevel
    contexts: np.ndarray                  # N x p
    upper: tuple                          # one UpperTerm per sample
    decision_bounds: tuple | None = None  # (lo, hi) over v, for big-M derivation
    prediction_range: tuple | None = None  # (lo, hi) over theta, admissible predictions
    name: str = "bilevel"

    def __post_init__(self):
        X = np.array(self.contexts, dtype=float, ndmin=2)
        if X.shape[0] == 0:
            raise InvalidInstanceError("bilevel problem needs at least one sample")
        upper = tuple(self.upper)
        if len(upper) != X.shape[0]:
            raise DimensionMismatchError(f"{len(upper)} upper terms for {X.shape[0]} samples")
        sizes = {term.size for term in upper}
        if len(sizes) != 1 or next(iter(sizes)) < self.lower.n:
            raise DimensionMismatchError("upper terms must share one size of at least the lower dimension")
        X.setflags(write=False)
        object.__setattr__(self, "contexts", X)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "decision_bounds",
                           _interval(self.decision_bounds, self.lower.n, "decision_bounds"))
        object.__setattr__(self, "prediction_range",
                           _interval(self.prediction_range, self.lower.k, "prediction_range"))

    @property
    def N(self) -> int:
        return self.contexts.shape[0]

    @property
    def p(self) -> int:
        return self.contexts.shape[1]

    @property
    def k(self) -> int:
        return self.lower.k

    @property
    def n_aux(self) -> int:
        return self.upper[0].size - self.lower.n

    @property
    def n_w(self) -> int:
        return self.k * self.p

    def predictions(self, W) -> np.ndarray:
        return self.contexts @ np.asarray(W, dtype=float).reshape(self.k, self.p).T


@dataclass(frozen=True)
class EpsilonSchedule:
    values: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise InvalidConfigError("epsilon schedule is empty")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise InvalidConfigError(f"epsilon schedule must strictly decrease: {values}")
        if values[-1] < 0.0:
            raise InvalidConfigError("epsilon schedule must end at a nonnegative value")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_config(cls, config=Config) -> "EpsilonSchedule":
        return cls(tuple(config.EPSILON_SCHEDULE))


class BigMDerivation(str, Enum):
    MANUAL = "manual"
    FROM_BOUNDS = "from_bounds"


@dataclass(frozen=True)
class BigMConfig:
    M_primal: float
    M_dual: float
    derivation: BigMDerivation = BigMDerivation.MANUAL

    def __post_init__(self):
        for name in ("M_primal", "M_dual"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidConfigError(f"{name} must be finite and positive, got {value}")

    def scaled(self, factor: float) -> "BigMConfig":
        return BigMConfig(self.M_primal * factor, self.M_dual * factor, BigMDerivation.MANUAL)


# ----- KKT system -----

@dataclass(frozen=True, eq=False)
class KKTSystem:
    """Linear blocks of the KKT single-level program plus its complementarity pairs.

    Variable layout: ``[vec(W) | per sample: v, u, lambda, upsilon]``.
    Each pair is (multiplier column, row of ``A_in``) with slack ``b_in - A_in z``.
    """
    problem: ConvexBilevelProblem
    Q: np.ndarray
    c: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pairs: np.ndarray
    pair_sample: np.ndarray
    n_stationarity: int

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.pairs.shape[0]

    @property
    def block(self) -> int:
        lower = self.problem.lower
        return lower.n + self.problem.n_aux + lower.mG + lower.mE

    def _blocks(self, z):
        return np.asarray(z)[self.problem.n_w:].reshape(self.problem.N, self.block)

    def coefficients(self, z) -> np.ndarray:
        return np.asarray(z)[:self.problem.n_w].reshape(self.problem.k, self.problem.p)

    def decisions(self, z) -> np.ndarray:
        return self._blocks(z)[:, :self.problem.lower.n]

    def auxiliaries(self, z) -> np.ndarray:
        n = self.problem.lower.n
        return self._blocks(z)[:, n:n + self.problem.n_aux]

    def multipliers(self, z) -> np.ndarray:
        start = self.problem.lower.n + self.problem.n_aux
        return self._blocks(z)[:, start:start + self.problem.lower.mG]

    def objective(self, z) -> float:
        return float(0.5 * z @ self.Q @ z + self.c @ z)

    def slacks(self, z) -> np.ndarray:
        rows = self.pairs[:, 1]
        return self.b_in[rows] - self.A_in[rows] @ z

    def complementarity(self, z) -> np.ndarray:
        """Per pair ``min(lambda, slack)``; zero when the pair is complementary."""
        return np.minimum(np.asarray(z)[self.pairs[:, 0]], self.slacks(z))

    def stationarity_residual(self, z) -> np.ndarray:
        rows = slice(0, self.n_stationarity)
        return self.A_eq[rows] @ z - self.b_eq[rows]

    def primal_residual(self, z) -> float:
        parts = [0.0, float(np.max(self.A_in @ z - self.b_in, initial=0.0))]
        rest = slice(self.n_stationarity, None)
        parts.append(float(np.abs(self.A_eq[rest] @ z - self.b_eq[rest]).max(initial=0.0)))
        parts.append(float(np.max(self.lower - z, initial=0.0)))
        return max(parts)

    def assemble(self, W, V, U, L, Y) -> np.ndarray:
        N = self.problem.N
        parts = [np.asarray(a, dtype=float).reshape(N, -1) for a in (V, U, L, Y)]
        return np.concatenate([np.asarray(W, dtype=float).ravel(), np.hstack(parts).ravel()])

    def relaxation(self, active=(), inactive=(), bigm: BigMConfig | None = None) -> QuadraticProgram:
        """Convex relaxation with some pairs fixed.

        ``active`` pairs get zero slack, ``inactive`` pairs a zero multiplier. With
        ``bigm`` the Fortuny-Amat caps apply: fixed pairs keep their big-M bound and
        unfixed pairs satisfy ``lambda / M_dual + slack / M_primal <= 1``.
        """
        active = np.asarray(sorted(active), dtype=int)
        inactive = np.asarray(sorted(inactive), dtype=int)
        if np.intersect1d(active, inactive).size:
            raise InvalidConfigError("a pair cannot be both active and inactive")
        upper = self.upper.copy()
        cols, rows = self.pairs[:, 0], self.pairs[:, 1]
        A_eq = [self.A_eq, self.A_in[rows[active]]]
        b_eq = [self.b_eq, self.b_in[rows[active]]]
        A_in, b_in = [self.A_in], [self.b_in]
        upper[cols[inactive]] = 0.0
        if bigm is not None:
            upper[cols[active]] = np.minimum(upper[cols[active]], bigm.M_dual)
            A_in.append(-self.A_in[rows[inactive]])
            b_in.append(bigm.M_primal - self.b_in[rows[inactive]])
            free = np.setdiff1d(np.arange(self.n_pairs), np.concatenate([active, inactive]))
            if free.size:
                relaxed = -self.A_in[rows[free]] / bigm.M_primal
                relaxed[np.arange(free.size), cols[free]] += 1.0 / bigm.M_dual
                A_in.append(relaxed)
                b_in.append(1.0 - self.b_in[rows[free]] / bigm.M_primal)
        return QuadraticProgram(
            self.Q, self.c, np.vstack(A_in), np.concatenate(b_in),
            np.vstack(A_eq), np.concatenate(b_eq), self.lower, upper,
        )


def build_kkt(problem: ConvexBilevelProblem) -> KKTSystem:
    lower = problem.lower
    n, k, mG, mE = lower.n, lower.k, lower.mG, lower.mE
    N, p, na = problem.N, problem.p, problem.n_aux
    nw = problem.n_w
    s = n + na + mG + mE
    nz = nw + N * s

    n_upper_rows = sum(term.A.shape[0] for term in problem.upper)
    if problem.prediction_range is not None:
        lo_t, hi_t = problem.prediction_range
        range_hi, range_lo = np.flatnonzero(np.isfinite(hi_t)), np.flatnonzero(np.isfinite(lo_t))
    else:
        range_hi = range_lo = np.zeros(0, dtype=int)
    n_range = range_hi.size + range_lo.size

    A_eq = np.zeros((N * (n + mE), nz))
    b_eq = np.zeros(N * (n + mE))
    A_in = np.zeros((N * (mG + n_range) + n_upper_rows, nz))
    b_in = np.zeros(A_in.shape[0])
    Q = np.zeros((nz, nz))
    c = np.zeros(nz)
    lower_bounds = np.full(nz, -np.inf)
    upper_bounds = np.full(nz, np.inf)
    pairs, pair_sample = [], []

    eye_k = np.eye(k)
    next_row = N * mG
    for i in range(N):
        Xi = np.kron(eye_k, problem.contexts[i][None, :])
        o = nw + i * s
        v, lam, ups = slice(o, o + n), slice(o + n + na, o + n + na + mG), slice(o + n + na + mG, o + s)

        r = slice(i * n, (i + 1) * n)
        A_eq[r, v] = lower.H
        A_eq[r, lam] = lower.G.T
        A_eq[r, ups] = lower.E.T
        A_eq[r, :nw] = lower.C @ Xi
        b_eq[r] = -lower.c
        r = slice(N * n + i * mE, N * n + (i + 1) * mE)
        A_eq[r, v] = lower.E
        A_eq[r, :nw] = -lower.F @ Xi
        b_eq[r] = lower.e

        r0 = i * mG
        A_in[r0:r0 + mG, v] = lower.G
        A_in[r0:r0 + mG, :nw] = -lower.D @ Xi
        b_in[r0:r0 + mG] = lower.d
        for j in range(mG):
            pairs.append((o + n + na + j, r0 + j))
            pair_sample.append(i)
        lower_bounds[lam] = 0.0

        term = problem.upper[i]
        y = slice(o, o + n + na)
        Q[y, y] = term.P
        c[y] = term.q
        m_up = term.A.shape[0]
        A_in[next_row:next_row + m_up, y] = term.A
        b_in[next_row:next_row + m_up] = term.b
        next_row += m_up
        for j in range_hi:
            A_in[next_row, :nw] = Xi[j]
            b_in[next_row] = hi_t[j]
            next_row += 1
        for j in range_lo:
            A_in[next_row, :nw] = -Xi[j]
            b_in[next_row] = -lo_t[j]
            next_row += 1

    return KKTSystem(
        problem=problem, Q=Q, c=c, A_in=A_in, b_in=b_in, A_eq=A_eq, b_eq=b_eq,
        lower=lower_bounds, upper=upper_bounds,
        pairs=np.array(pairs, dtype=int).reshape(-1, 2),
        pair_sample=np.array(pair_sample, dtype=int),
        n_stationarity=N * n,
    )


# ----- Lower-level response -----

@dataclass(frozen=True, eq=False)
class ScalarBox:
    """A lower level ``min 1/2 H v^2 + (c + C theta) v`` over ``lo <= v <= hi``.

    Its solution is ``clip(a + b theta, lo, hi)``.
    """
    lo: float
    hi: float
    H: float
    a: float
    b: float
    lo_row: int
    hi_row: int
    P: np.ndarray   # per-sample upper curvature
    q: np.ndarray   # per-sample upper linear cost

    def response(self, t):
        return np.clip(self.a + self.b * t, self.lo, self.hi)

    def cost(self, v):
        return 0.5 * self.P * v ** 2 + self.q * v


def scalar_box(problem: ConvexBilevelProblem) -> ScalarBox | None:
    """Recognize a scalar box-constrained lower level with a plain quadratic upper cost."""
    lower = problem.lower
    if lower.n != 1 or lower.k != 1 or lower.mE or lower.mG != 2 or problem.n_aux:
        return None
    if any(term.A.shape[0] for term in problem.upper) or np.any(lower.D):
        return None
    H = float(lower.H[0, 0])
    g = lower.G[:, 0]
    if H <= 0.0 or sorted(g.tolist()) != [-1.0, 1.0] or lower.C[0, 0] == 0.0:
        return None
    lo_row, hi_row = int(np.argmin(g)), int(np.argmax(g))
    lo, hi = -float(lower.d[lo_row]), float(lower.d[hi_row])
    if lo > hi:
        return None
    return ScalarBox(
        lo=lo, hi=hi, H=H,
        a=-float(lower.c[0]) / H, b=-float(lower.C[0, 0]) / H,
        lo_row=lo_row, hi_row=hi_row,
        P=np.array([term.P[0, 0] for term in problem.upper]),
        q=np.array([term.q[0] for term in problem.upper]),
    )


@dataclass(frozen=True, eq=False)
class Response:
    W: np.ndarray
    decisions: np.ndarray        # N x n
    auxiliaries: np.ndarray      # N x n_aux
    multipliers: np.ndarray      # N x mG
    eq_multipliers: np.ndarray   # N x mE
    values: np.ndarray           # per-sample upper cost
    degenerate: int              # samples whose lower level had several optima
    z: np.ndarray                # KKT layout

    @property
    def value(self) -> float:
        return float(self.values.sum())

    @property
    def feasible(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def _coefficient_matrix(problem, W):
    if W is None:
        return np.zeros((problem.k, problem.p))
    if isinstance(W, LinearCoefficients):
        W = W.w
    W = np.asarray(W, dtype=float)
    if W.size != problem.n_w:
        raise DimensionMismatchError(f"coefficients have {W.size} entries, expected {problem.n_w}")
    return W.reshape(problem.k, problem.p)


def optimistic_response(problem: ConvexBilevelProblem, W, config=Config) -> Response:
    """Lower-level solutions at ``theta_i = W x_i``, ties broken in the upper level's favour."""
    W = _coefficient_matrix(problem, W)
    lower = problem.lower
    N, n, na, mG, mE = problem.N, lower.n, problem.n_aux, lower.mG, lower.mE
    theta = problem.predictions(W)
    V, U = np.zeros((N, n)), np.zeros((N, na))
    L, Y = np.zeros((N, mG)), np.zeros((N, mE))
    values = np.zeros(N)
    degenerate = 0

    sb = scalar_box(problem)
    if sb is not None:
        t = theta[:, 0]
        v = sb.response(t)
        r = sb.H * (v - (sb.a + sb.b * t))
        L[:, sb.lo_row] = np.where(v <= sb.lo, np.maximum(r, 0.0), 0.0)
        L[:, sb.hi_row] = np.where(v >= sb.hi, np.maximum(-r, 0.0), 0.0)
        V[:, 0] = v
        values = sb.cost(v)
    else:
        for i in range(N):
            rep = solve_qp(lower.program(theta[i]), config)
            if not rep.ok:
                values[i] = np.inf
                continue
            v_star = rep.z
            L[i] = rep.duals[:mG]
            Y[i] = rep.duals[mG:]
            y = _optimal_face_choice(problem, i, theta[i], v_star, config)
            if y is None:
                values[i] = np.inf
                V[i] = v_star
                continue
            if np.abs(y[:n] - v_star).max(initial=0.0) > 1e-7 * (1.0 + np.abs(v_star).max(initial=0.0)):
                degenerate += 1
            V[i], U[i] = y[:n], y[n:]
            values[i] = problem.upper[i].value(y)

    z = np.concatenate([W.ravel(), np.hstack([V, U, L, Y]).ravel()])
    return Response(W=W, decisions=V, auxiliaries=U, multipliers=L, eq_multipliers=Y,
                    values=values, degenerate=degenerate, z=z)


def _optimal_face_choice(problem, i, theta, v_star, config):
    """Upper-level-best point of sample i's optimal lower-level face (plus auxiliaries)."""
    lower, term = problem.lower, problem.upper[i]
    n, na = lower.n, problem.n_aux
    unique = na == 0 and term.A.shape[0] == 0
    if unique and (n == 0 or np.linalg.eigvalsh(lower.H)[0] > config.PSD_TOL):
        return v_star

    g_star = lower.H @ v_star + lower.c + lower.C @ theta
    f_tol = 1e-9 * (1.0 + abs(float(g_star @ v_star)))
    A_in = [np.hstack([lower.G, np.zeros((lower.mG, na))]),
            np.concatenate([g_star, np.zeros(na)])[None, :], term.A]
    b_in = [lower.d + lower.D @ theta, [g_star @ v_star + f_tol], term.b]
    A_eq = [np.hstack([lower.E, np.zeros((lower.mE, na))]),
            np.hstack([lower.H, np.zeros((n, na))])]
    b_eq = [lower.e + lower.F @ theta, lower.H @ v_star]
    face = QuadraticProgram(term.P, term.q, np.vstack(A_in), np.concatenate(b_in),
                            np.vstack(A_eq), np.concatenate(b_eq))
    start = np.concatenate([v_star, np.zeros(na)])
    rep = solve_qp(face, config, start=start)
    if rep.ok:
        return rep.z
    # fall back to the lower solution itself, optimizing the auxiliaries only
    fixed = QuadraticProgram(term.P, term.q, term.A, term.b,
                             np.hstack([np.eye(n), np.zeros((n, na))]), v_star)
    rep = solve_qp(fixed, config)
    return rep.z if rep.ok else None


# ----- Big-M constants -----

def derive_big_m(problem: ConvexBilevelProblem, config=Config) -> BigMConfig:
    """Big-M constants by interval arithmetic over decision bounds and admissible predictions.

    ``M_primal`` bounds every lower-level slack; ``M_dual`` bounds every basic
    multiplier ``lambda_S = -pinv([G_S; E]^T)(H v + c + C theta)`` over linearly
    independent active sets ``S``.
    """
    lower = problem.lower
    if problem.decision_bounds is None or problem.prediction_range is None:
        raise UnboundedDataRangeError("big-M derivation needs decision bounds and a prediction range")
    v_lo, v_hi = problem.decision_bounds
    t_lo, t_hi = problem.prediction_range
    if not (np.all(np.isfinite(v_lo)) and np.all(np.isfinite(v_hi))
            and np.all(np.isfinite(t_lo)) and np.all(np.isfinite(t_hi))):
        raise UnboundedDataRangeError("decision bounds and prediction range must be finite")
    if lower.mG > config.BIGM_MAX_SUBSETS_ROWS:
        raise InvalidInstanceError(
            f"{lower.mG} lower-level inequalities; supply a manual BigMConfig above "
            f"{config.BIGM_MAX_SUBSETS_ROWS}"
        )
    vc, vr = 0.5 * (v_lo + v_hi), 0.5 * (v_hi - v_lo)
    tc, tr = 0.5 * (t_lo + t_hi), 0.5 * (t_hi - t_lo)

    def upper_bound(const, coef_v, coef_t):
        return const + coef_v @ vc + coef_t @ tc + np.abs(coef_v) @ vr + np.abs(coef_t) @ tr

    slack_max = upper_bound(lower.d, -lower.G, lower.D)
    m_primal = float(np.max(slack_max, initial=0.0))

    E = lower.E[independent_rows(lower.E, range(lower.mE))]
    m_dual = 0.0
    for size in range(1, min(lower.mG, lower.n - E.shape[0]) + 1):
        for subset in itertools.combinations(range(lower.mG), size):
            K = np.vstack([lower.G[list(subset)], E])
            if np.linalg.matrix_rank(K) < K.shape[0]:
                continue
            M = np.linalg.pinv(K.T)[:size]
            bound = upper_bound(-M @ lower.c, -M @ lower.H, -M @ lower.C)
            m_dual = max(m_dual, float(bound.max()))

    floor = 1e-6 * max(1.0, float(np.abs(v_hi).max()), float(np.abs(t_hi).max()))
    result = BigMConfig(max(m_primal, floor), max(m_dual, floor), BigMDerivation.FROM_BOUNDS)
    logger.debug("Derived big-M constants",
                 extra={"M_primal": result.M_primal, "M_dual": result.M_dual})
    return result


def _fa_admissible(problem, response, m: BigMConfig, tol=1e-7) -> bool:
    if not response.feasible:
        return False
    lower = problem.lower
    theta = problem.predictions(response.W)
    if problem.prediction_range is not None:
        lo, hi = problem.prediction_range
        scale = tol * (1.0 + np.abs(theta).max(initial=0.0))
        if np.any(theta < lo - scale) or np.any(theta > hi + scale):
            return False
    if np.any(response.multipliers > m.M_dual * (1.0 + tol) + tol):
        return False
    slack = lower.d + theta @ lower.D.T - response.decisions @ lower.G.T
    return not np.any(slack > m.M_primal * (1.0 + tol) + tol)


def audit_big_m(problem: ConvexBilevelProblem, report: SolveReport, m: BigMConfig,
                config=Config) -> list[str]:
    """Re-solve the lower levels at the returned coefficients and flag cap contact or mismatch."""
    kkt_nw = problem.n_w
    W = np.asarray(report.z)[:kkt_nw].reshape(problem.k, problem.p)
    response = optimistic_response(problem, W, config)
    lower = problem.lower
    theta = problem.predictions(W)
    cap = 1.0 - config.BIGM_CAP_TOL
    violations = []
    if lower.mG:
        lam = response.multipliers.max(initial=0.0)
        if lam >= m.M_dual * cap:
            violations.append(f"multiplier {lam:.6g} at the dual cap {m.M_dual:.6g}")
        slack = (lower.d + theta @ lower.D.T - response.decisions @ lower.G.T).max(initial=0.0)
        if slack > m.M_primal * (1.0 + config.BIGM_CAP_TOL):
            violations.append(f"slack {slack:.6g} above the primal cap {m.M_primal:.6g}")
    if problem.prediction_range is not None:
        lo, hi = problem.prediction_range
        width = np.maximum(hi - lo, 1e-12)
        at_edge = (theta <= lo + config.BIGM_CAP_TOL * width) | (theta >= hi - config.BIGM_CAP_TOL * width)
        # a sample pinned by a positive multiplier does not respond to its prediction
        free = response.multipliers.max(axis=1, initial=0.0) <= config.OPTIMALITY_TOL
        if np.any(at_edge.any(axis=1) & free):
            violations.append("prediction range binding")
    if not response.feasible:
        violations.append("lower level infeasible at the returned coefficients")
    elif abs(response.value - report.objective) > 1e-6 * max(1.0, abs(report.objective)):
        violations.append(
            f"objective {report.objective:.10g} differs from the re-solved {response.value:.10g}"
        )
    return violations


# ----- Regularized route (BL-R) -----

class _ScholtesOracle:
    """Linear rows of the KKT program plus one Scholtes row per sample."""

    def __init__(self, kkt: KKTSystem):
        self.kkt = kkt
        nz = kkt.n_vars
        eye = np.eye(nz)
        lo = np.flatnonzero(np.isfinite(kkt.lower))
        hi = np.flatnonzero(np.isfinite(kkt.upper))
        self.J_lin = np.vstack([kkt.A_in, kkt.A_eq, -kkt.A_eq, -eye[lo], eye[hi]])
        self.h_lin = np.concatenate([kkt.b_in, kkt.b_eq, -kkt.b_eq, -kkt.lower[lo], kkt.upper[hi]])
        self.N = kkt.problem.N if kkt.n_pairs else 0
        self.cols = kkt.pairs[:, 0]
        self.A_pairs = kkt.A_in[kkt.pairs[:, 1]]
        self.onehot = np.zeros((self.N, kkt.n_pairs))
        if self.N:
            self.onehot[kkt.pair_sample, np.arange(kkt.n_pairs)] = 1.0
        self.eps = 0.0

    @property
    def n_rows(self) -> int:
        return self.J_lin.shape[0] + self.N

    def __call__(self, z):
        g_lin = self.J_lin @ z - self.h_lin
        if not self.N:
            return g_lin, self.J_lin, None
        lam = z[self.cols]
        slack = self.kkt.slacks(z)
        g_s = self.onehot @ (lam * slack) - self.eps
        J_s = -self.onehot @ (lam[:, None] * self.A_pairs)
        J_s[self.kkt.pair_sample, self.cols] += slack
        n_lin = self.J_lin.shape[0]

        def curvature(weights):
            wp = weights[n_lin:][self.kkt.pair_sample]
            B = wp[:, None] * self.A_pairs
            H = np.zeros((z.size, z.size))
            H[self.cols, :] -= B
            H[:, self.cols] -= B.T
            return H

        return np.concatenate([g_lin, g_s]), np.vstack([self.J_lin, J_s]), curvature


def _regularized_stage(kkt, oracle, z, eps, mu, config):
    oracle.eps = eps
    Q, c = kkt.Q, kkt.c

    def objective(point):
        return float(0.5 * point @ Q @ point + c @ point), Q @ point + c, Q

    scale = max(1.0, float(np.abs(oracle.h_lin).max(initial=0.0)))
    tol = config.FEASIBILITY_TOL * scale
    rho = config.AL_PENALTY_INIT
    best = np.inf
    iterations = 0
    for _ in range(config.AL_MAX_OUTER):
        rep = minimize_penalized(objective, oracle, z, rho, mu, config)
        iterations += rep.iterations
        z, mu = rep.z, rep.duals
        violation = float(np.max(oracle(z)[0], initial=0.0))
        if violation <= tol:
            return z, mu, True, iterations
        if violation > 0.25 * best:
            rho = min(rho * config.AL_PENALTY_GROWTH, config.AL_PENALTY_MAX)
        best = min(best, violation)
    return z, mu, False, iterations


def _polish_patterns(problem, kkt, z, config):
    """Fix the realized complementarity pattern, re-solve, and repeat while it helps."""
    best = None
    current = z
    pairs = np.arange(kkt.n_pairs)
    for _ in range(config.POLISH_MAX_ROUNDS):
        lam = current[kkt.pairs[:, 0]]
        slack = kkt.slacks(current)
        tol = 1e-7 * (1.0 + max(np.abs(lam).max(initial=0.0), np.abs(slack).max(initial=0.0)))
        tied = (lam <= tol) & (slack <= tol)
        base = slack < lam
        improved = False
        patterns = {tuple(base | tied), tuple(base & ~tied)}
        for pattern in patterns:
            act = np.array(pattern, dtype=bool)
            rep = solve_qp(kkt.relaxation(pairs[act], pairs[~act]), config, start=current)
            if not rep.ok:
                continue
            response = optimistic_response(problem, kkt.coefficients(rep.z), config)
            if not response.feasible:
                continue
            if best is None or response.value < best.value - 1e-9 * (1.0 + abs(best.value)):
                best, candidate, improved = response, rep.z, True
        if not improved:
            break
        current = candidate
    return best


def _polish_scalar(problem, sb: ScalarBox, W, config):
    """Pattern polishing for scalar box lower levels, carried out in coefficient space."""
    X = problem.contexts
    best = None
    w = np.asarray(W, dtype=float).ravel()
    for _ in range(config.POLISH_MAX_ROUNDS):
        u = sb.a + sb.b * (X @ w)
        tol = 1e-9 * (1.0 + abs(sb.lo) + abs(sb.hi))
        near_lo, near_hi = np.abs(u - sb.lo) <= tol, np.abs(u - sb.hi) <= tol
        at_lo, at_hi = u < sb.lo - tol, u > sb.hi + tol
        improved = False
        for boundary in (True, False):
            lo_set = at_lo | (near_lo & boundary)
            hi_set = at_hi | (near_hi & boundary)
            w_new = _fixed_regime_qp(problem, sb, lo_set, hi_set, w, config)
            if w_new is None:
                continue
            response = optimistic_response(problem, w_new[None, :], config)
            if best is None or response.value < best.value - 1e-9 * (1.0 + abs(best.value)):
                best, w_candidate, improved = response, w_new, True
        if not improved:
            break
        w = w_candidate
    return best


def _fixed_regime_qp(problem, sb: ScalarBox, lo_set, hi_set, start, config):
    X = problem.contexts
    interior = ~(lo_set | hi_set)
    Xi = X[interior]
    P, q = sb.P[interior], sb.q[interior]
    Q = (Xi * (P * sb.b ** 2)[:, None]).T @ Xi
    c = Xi.T @ (sb.b * (P * sb.a + q))
    bx = sb.b * X
    rows = [bx[lo_set], -bx[hi_set], bx[interior], -bx[interior]]
    rhs = [np.full(lo_set.sum(), sb.lo - sb.a), np.full(hi_set.sum(), sb.a - sb.hi),
           np.full(interior.sum(), sb.hi - sb.a), np.full(interior.sum(), sb.a - sb.lo)]
    if problem.prediction_range is not None:
        t_lo, t_hi = problem.prediction_range
        if np.isfinite(t_hi[0]):
            rows.append(X)
            rhs.append(np.full(len(X), t_hi[0]))
        if np.isfinite(t_lo[0]):
            rows.append(-X)
            rhs.append(np.full(len(X), -t_lo[0]))
    rep = solve_qp(QuadraticProgram(Q, c, np.vstack(rows), np.concatenate(rhs)), config, start=start)
    return rep.z if rep.ok else None


def solve_bl_regularized(problem: ConvexBilevelProblem, schedule: EpsilonSchedule | None = None,
                         start=None, config=Config, *, polish=True) -> SolveReport:
    """Scholtes relaxation ``sum_j lambda_ij * slack_ij <= eps`` along ``schedule``.

    Every stage runs an augmented-Lagrangian loop warm-started from the previous
    stage. With ``polish`` and a schedule ending at zero, the realized pattern is
    polished and the best evaluated point is returned; otherwise the report holds
    the last iterate.
    """
    started = time.perf_counter()
    schedule = schedule or EpsilonSchedule.from_config(config)
    kkt = build_kkt(problem)
    z = optimistic_response(problem, _coefficient_matrix(problem, start), config).z
    z = np.where(np.isfinite(z), z, 0.0)
    oracle = _ScholtesOracle(kkt)
    mu = None
    flags = []
    iterations = 0
    converged = True
    for eps in schedule.values:
        z, mu, converged, used = _regularized_stage(kkt, oracle, z, eps, mu, config)
        iterations += used
        if not converged:
            flags.append(f"stage eps={eps:g} not converged")
        logger.debug("Scholtes stage finished",
                     extra={"eps": eps, "objective": kkt.objective(z), "converged": converged})

    status = SolveStatus.OPTIMAL if converged else SolveStatus.ITER_LIMIT
    if not polish or schedule.values[-1] > 0.0:
        report = SolveReport(
            status=status, z=z, objective=kkt.objective(z), duals=mu, iterations=iterations,
            wall_time=time.perf_counter() - started, flags=tuple(flags),
        )
        return report

    candidates = [optimistic_response(problem, kkt.coefficients(z), config)]
    sb = scalar_box(problem)
    polished = (_polish_scalar(problem, sb, kkt.coefficients(z), config) if sb is not None
                else _polish_patterns(problem, kkt, z, config))
    if polished is not None:
        candidates.append(polished)
        status = SolveStatus.OPTIMAL
    feasible = [r for r in candidates if r.feasible]
    if not feasible:
        return SolveReport(
            status=SolveStatus.ITER_LIMIT, z=z, objective=kkt.objective(z), duals=mu,
            iterations=iterations, wall_time=time.perf_counter() - started,
            flags=tuple(flags + ["no feasible lower-level response"]),
        )
    best = min(feasible, key=lambda r: r.value)
    if best.degenerate:
        flags.append(f"degenerate lower level at {best.degenerate} samples")
    report = SolveReport(
        status=status, z=best.z, objective=best.value, duals=mu, iterations=iterations,
        wall_time=time.perf_counter() - started, flags=tuple(flags),
    )
    logger.info("BL-R fit finished", extra={
        "problem": problem.name, "status": status.value, "objective": best.value,
        "seconds": report.wall_time,
    })
    return report


# ----- Big-M route (BL-M) -----

def _gap_tol(incumbent, config):
    if not np.isfinite(incumbent):
        return 0.0
    return max(config.BIGM_ABS_GAP, config.BIGM_REL_GAP * abs(incumbent))


def _relative_gap(incumbent, bound):
    if not np.isfinite(incumbent):
        return np.inf
    if not np.isfinite(bound):
        return np.inf
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


def _initial_box(X, t_lo, t_hi):
    """Bounding box of ``{w : t_lo <= X w <= t_hi}`` from p well-conditioned rows."""
    N, p = X.shape
    chosen, basis = [], []
    residual = X.copy()
    for _ in range(p):
        norms = np.linalg.norm(residual, axis=1)
        norms[chosen] = -1.0
        i = int(np.argmax(norms))
        if norms[i] <= 1e-10 * max(1.0, np.linalg.norm(X, axis=1).max()):
            return None
        q = residual[i] / norms[i]
        basis.append(q)
        chosen.append(i)
        residual = residual - np.outer(residual @ q, q)
    inv = np.linalg.inv(X[chosen])
    center = inv @ np.full(p, 0.5 * (t_lo + t_hi))
    radius = np.abs(inv) @ np.full(p, 0.5 * (t_hi - t_lo))
    return center, radius


def _bigm_predictor_space(problem, sb: ScalarBox, m: BigMConfig, config, start, deadline,
                          node_limit, solve_log):
    """Branch-and-bound over boxes of coefficient space for scalar box lower levels.

    Within a box every sample is either pinned to a regime (lower bound, interior,
    upper bound) or ambiguous; the box bound adds the constants of pinned samples,
    the separate minimum of each ambiguous sample and a box QP over the interior ones.
    Admissible coefficients keep every multiplier below ``M_dual``.
    """
    if m.M_primal < sb.hi - sb.lo - 1e-12 or problem.prediction_range is None:
        return None
    X = problem.contexts
    absX = np.abs(X)
    t_lo, t_hi = (float(v[0]) for v in problem.prediction_range)
    if not (np.isfinite(t_lo) and np.isfinite(t_hi)):
        return None
    band = ((sb.lo - m.M_dual / sb.H - sb.a) / sb.b, (sb.hi + m.M_dual / sb.H - sb.a) / sb.b)
    t_lo, t_hi = max(t_lo, min(band)), min(t_hi, max(band))
    if t_lo > t_hi:
        return "infeasible", None, 0, np.inf, []
    root = _initial_box(X, t_lo, t_hi)
    if root is None:
        return None
    adm_tol = 1e-9 * (1.0 + max(abs(t_lo), abs(t_hi)))

    def evaluate(w):
        t = X @ w
        if np.any(t < t_lo - adm_tol) or np.any(t > t_hi + adm_tol):
            return np.inf
        return float(sb.cost(sb.response(t)).sum())

    incumbent, best_w = np.inf, None

    def consider(w):
        nonlocal incumbent, best_w
        value = evaluate(w)
        if value < incumbent:
            incumbent, best_w = value, np.array(w, dtype=float)

    if start is not None:
        consider(np.asarray(start, dtype=float).ravel())
    consider(root[0])

    P, q = sb.P, sb.q
    own = np.where(P > 0, -q / np.where(P > 0, P, 1.0), 0.0)
    cost_lo = sb.cost(np.full(X.shape[0], sb.lo))
    cost_hi = sb.cost(np.full(X.shape[0], sb.hi))
    counter = itertools.count()
    heap = [(-np.inf, next(counter), root[0], root[1], 0)]
    nodes, status, flags = 0, "optimal", []
    unresolved = np.inf
    while heap:
        bound, _, center, radius, depth = heap[0]
        if bound >= incumbent - _gap_tol(incumbent, config):
            break
        if time.perf_counter() > deadline:
            status = "time_limit"
            break
        if nodes >= node_limit:
            status = "node_limit"
            break
        heapq.heappop(heap)
        nodes += 1

        t_c, t_r = X @ center, absX @ radius
        t_min, t_max = t_c - t_r, t_c + t_r
        if np.any(t_max < t_lo - adm_tol) or np.any(t_min > t_hi + adm_tol):
            continue
        u1, u2 = sb.a + sb.b * t_min, sb.a + sb.b * t_max
        u_min, u_max = np.minimum(u1, u2), np.maximum(u1, u2)
        lo_set, hi_set = u_max <= sb.lo, u_min >= sb.hi
        interior = (u_min >= sb.lo) & (u_max <= sb.hi) & ~lo_set & ~hi_set
        ambiguous = ~(lo_set | hi_set | interior)

        fixed = float(cost_lo[lo_set].sum() + cost_hi[hi_set].sum())
        v_min, v_max = np.clip(u_min, sb.lo, sb.hi), np.clip(u_max, sb.lo, sb.hi)
        v_best = np.where(P > 0, np.clip(own, v_min, v_max),
                          np.where(sb.cost(v_min) <= sb.cost(v_max), v_min, v_max))
        loose = float(sb.cost(v_best)[ambiguous].sum())

        Xi = X[interior]
        Q = (Xi * (P[interior] * sb.b ** 2)[:, None]).T @ Xi
        c = Xi.T @ (sb.b * (P[interior] * sb.a + q[interior]))
        const = float((0.5 * P[interior] * sb.a ** 2 + q[interior] * sb.a).sum())
        risky = (t_min < t_lo) | (t_max > t_hi)
        rows = np.vstack([X[risky], -X[risky]])
        rhs = np.concatenate([np.full(risky.sum(), t_hi), np.full(risky.sum(), -t_lo)])
        rep = solve_qp(QuadraticProgram(Q, c, rows, rhs, lower=center - radius, upper=center + radius),
                       config, start=center)
        if not rep.ok:
            if rep.status is not SolveStatus.INFEASIBLE:
                flags.append(f"box relaxation {rep.status.value}")
            continue
        node_bound = fixed + loose + const + rep.objective
        consider(rep.z)
        consider(center)
        if solve_log is not None:
            solve_log.append({
                "node": nodes, "depth": depth, "bound": node_bound,
                "box": np.column_stack([center - radius, center + radius]).tolist(),
                "fixed": {"lo": int(lo_set.sum()), "hi": int(hi_set.sum()),
                          "interior": int(interior.sum()), "ambiguous": int(ambiguous.sum())},
            })
        if node_bound >= incumbent - _gap_tol(incumbent, config):
            continue
        weight = absX[ambiguous].sum(axis=0) if ambiguous.any() else absX.sum(axis=0)
        score = radius * weight
        j = int(np.argmax(score))
        if radius[j] <= 1e-13 * (1.0 + np.abs(center).max()) or score[j] <= 0.0:
            unresolved = min(unresolved, node_bound)
            continue
        half = radius.copy()
        half[j] *= 0.5
        for sign in (-1.0, 1.0):
            child = center.copy()
            child[j] += sign * half[j]
            heapq.heappush(heap, (node_bound, next(counter), child, half, depth + 1))

    open_bound = min([entry[0] for entry in heap] + [unresolved])
    if status == "optimal" and not np.isfinite(incumbent):
        status = "infeasible"
    gap = _relative_gap(incumbent, min(open_bound, incumbent))
    if status == "optimal" and np.isfinite(unresolved) and unresolved < incumbent - _gap_tol(incumbent, config):
        flags.append("box resolution limit reached")
    return status, best_w, nodes, gap, flags


def _bigm_complementarity(problem, kkt, m: BigMConfig, config, start, deadline, node_limit,
                          solve_log):
    """Best-first branch-and-bound over complementarity pairs with Fortuny-Amat relaxations."""
    incumbent, best_W = np.inf, None

    def consider(W):
        nonlocal incumbent, best_W
        response = optimistic_response(problem, W, config)
        if _fa_admissible(problem, response, m) and response.value < incumbent:
            incumbent, best_W = response.value, response.W

    if start is not None:
        consider(start)
    counter = itertools.count()
    heap = [(-np.inf, next(counter), (), (), 0, None)]
    nodes, status, flags = 0, "optimal", []
    comp_tol = config.OPTIMALITY_TOL
    while heap:
        bound, _, active, inactive, depth, warm = heap[0]
        if bound >= incumbent - _gap_tol(incumbent, config):
            break
        if time.perf_counter() > deadline:
            status = "time_limit"
            break
        if nodes >= node_limit:
            status = "node_limit"
            break
        heapq.heappop(heap)
        rep = solve_qp(kkt.relaxation(active, inactive, m), config, start=warm)
        nodes += 1
        if solve_log is not None:
            solve_log.append({
                "node": nodes, "depth": depth, "status": rep.status.value,
                "bound": rep.objective if rep.ok else None,
                "active": list(map(int, active)), "inactive": list(map(int, inactive)),
            })
        if not rep.ok:
            if rep.status is not SolveStatus.INFEASIBLE:
                flags.append(f"node relaxation {rep.status.value}")
            continue
        if rep.objective >= incumbent - _gap_tol(incumbent, config):
            continue
        lam = rep.z[kkt.pairs[:, 0]]
        slack = kkt.slacks(rep.z)
        free = np.ones(kkt.n_pairs, dtype=bool)
        free[list(active) + list(inactive)] = False
        consider(kkt.coefficients(rep.z))
        violation = np.where(free, np.minimum(lam, slack), 0.0)
        if violation.max(initial=0.0) <= comp_tol:
            continue
        j = int(np.argmax(np.where(free, lam * slack, -np.inf)))
        heapq.heappush(heap, (rep.objective, next(counter), active + (j,), inactive, depth + 1, rep.z))
        heapq.heappush(heap, (rep.objective, next(counter), active, inactive + (j,), depth + 1, rep.z))

    open_bound = min([entry[0] for entry in heap], default=np.inf)
    if status == "optimal" and not np.isfinite(incumbent):
        status = "infeasible"
    gap = _relative_gap(incumbent, min(open_bound, incumbent))
    W = None if best_W is None else best_W.ravel()
    return status, W, nodes, gap, flags


_STATUS = {
    "optimal": SolveStatus.OPTIMAL,
    "infeasible": SolveStatus.INFEASIBLE,
    "time_limit": SolveStatus.TIME_LIMIT,
    "node_limit": SolveStatus.ITER_LIMIT,
}


def solve_bl_bigm(problem: ConvexBilevelProblem, m: BigMConfig | None = None, config=Config, *,
                  start=None, strategy="auto", time_limit=None, node_limit=None,
                  solve_log: list | None = None) -> SolveReport:
    """Global solution of the Fortuny-Amat program by best-first branch-and-bound.

    ``strategy`` is ``"auto"`` (coefficient-space boxes for scalar box lower levels,
    complementarity branching otherwise), ``"boxes"`` or ``"complementarity"``.
    ``start`` coefficients seed the incumbent. Node records are appended to
    ``solve_log`` when given.
    """
    if strategy not in ("auto", "boxes", "complementarity"):
        raise InvalidConfigError(f"unknown branch-and-bound strategy {strategy!r}")
    started = time.perf_counter()
    m = m or derive_big_m(problem, config)
    deadline = started + (config.BIGM_TIME_LIMIT if time_limit is None else time_limit)
    node_limit = config.BIGM_NODE_LIMIT if node_limit is None else node_limit
    start_W = None if start is None else _coefficient_matrix(problem, start)

    outcome = None
    sb = scalar_box(problem) if strategy in ("auto", "boxes") else None
    if sb is not None:
        outcome = _bigm_predictor_space(problem, sb, m, config, start_W, deadline, node_limit, solve_log)
        used = "boxes"
    if outcome is None:
        if strategy == "boxes":
            raise InvalidInstanceError("coefficient-space branching needs a scalar box lower level")
        outcome = _bigm_complementarity(problem, build_kkt(problem), m, config, start_W, deadline,
                                        node_limit, solve_log)
        used = "complementarity"
    status_key, w, nodes, gap, flags = outcome
    status = _STATUS[status_key]
    elapsed = time.perf_counter() - started

    if w is None:
        return SolveReport(
            status=SolveStatus.INFEASIBLE if status is SolveStatus.OPTIMAL else status,
            z=None, objective=np.nan, duals=np.zeros(0), iterations=nodes, wall_time=elapsed,
            gap=np.inf, nodes=nodes, flags=tuple(flags), message=f"strategy={used}",
        )

    response = optimistic_response(problem, np.asarray(w).reshape(problem.k, problem.p), config)
    report = SolveReport(
        status=status, z=response.z, objective=response.value,
        duals=response.multipliers.ravel(), iterations=nodes,
        wall_time=time.perf_counter() - started, gap=gap, nodes=nodes,
        flags=tuple(flags), message=f"strategy={used}",
    )
    violations = audit_big_m(problem, report, m, config)
    if violations:
        logger.warning("Big-M audit failed", extra={"problem": problem.name, "violations": violations})
        report = report.replace(flags=report.flags + tuple(violations))
        if report.ok:
            report = report.replace(status=SolveStatus.BIG_M_VIOLATED)
    if response.degenerate:
        report = report.replace(flags=report.flags + (f"degenerate lower level at {response.degenerate} samples",))
    logger.info("BL-M fit finished", extra={
        "problem": problem.name, "status": report.status.value, "objective": report.objective,
        "nodes": nodes, "gap": gap, "seconds": report.wall_time, "strategy": used,
    })
    return report
