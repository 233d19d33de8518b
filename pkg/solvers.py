# solvers.py
"""Dense convex-optimization kernels.

``solve_lp``          two-phase tableau simplex with Bland's rule
``solve_qp``          primal active-set method for convex quadratic programs
``minimize_penalized`` augmented-Lagrangian Newton minimizer for smooth programs

Multiplier convention for ``min f(z) s.t. A z <= b, A_eq z = b_eq, l <= z <= u``::

    grad f(z) + A^T mu + A_eq^T nu = r,   mu >= 0

``duals`` holds ``concat(mu, nu)`` and ``reduced_costs`` holds ``r``, the net
multiplier of the variable bounds (``r > 0`` at a lower bound, ``r < 0`` at an upper one).
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from config import Config
from errors import DimensionMismatchError, InvalidConfigError, InvalidInstanceError, SolverFailedError

logger = logging.getLogger("ctxopt.solvers")
trace = logging.getLogger("ctxopt.trace")


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"
    TIME_LIMIT = "time_limit"
    BIG_M_VIOLATED = "big_m_violated"


@dataclass(frozen=True, eq=False)
class SolveReport:
    status: SolveStatus
    z: np.ndarray | None
    objective: float
    duals: np.ndarray
    iterations: int
    wall_time: float
    gap: float = 0.0
    nodes: int = 0
    flags: tuple = ()
    reduced_costs: np.ndarray | None = None
    active: tuple = ()        # QP working set at termination (rows of inequality_rows())
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def replace(self, **changes) -> "SolveReport":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "status": self.status.value,
            "objective": None if not np.isfinite(self.objective) else float(self.objective),
            "iterations": int(self.iterations),
            "wall_time": float(self.wall_time),
            "gap": float(self.gap),
            "nodes": int(self.nodes),
            "flags": list(self.flags),
            "message": self.message,
        }


# ----- Programs -----

def _as_matrix(values, n, name):
    if values is None:
        return np.zeros((0, n))
    arr = np.array(values, dtype=float, ndmin=2)
    if arr.size == 0:
        return np.zeros((0, n))
    if arr.ndim != 2 or arr.shape[1] != n:
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected (*, {n})")
    return arr


def _as_rhs(values, m, name):
    if values is None:
        if m:
            raise DimensionMismatchError(f"{name} missing for {m} rows")
        return np.zeros(0)
    arr = np.array(values, dtype=float).ravel()
    if arr.shape[0] != m:
        raise DimensionMismatchError(f"{name} has length {arr.shape[0]}, expected {m}")
    return arr


def _as_bounds(values, n, fill, name):
    if values is None:
        return np.full(n, fill)
    arr = np.broadcast_to(np.array(values, dtype=float), (n,)).copy()
    if np.any(np.isnan(arr)):
        raise InvalidInstanceError(f"{name} contains NaN")
    return arr


class _ConstraintBlocks:
    """Validation and helpers shared by LinearProgram and QuadraticProgram."""

    def _set_blocks(self, n):
        A = _as_matrix(self.A_ineq, n, "A_ineq")
        b = _as_rhs(self.b_ineq, A.shape[0], "b_ineq")
        E = _as_matrix(self.A_eq, n, "A_eq")
        e = _as_rhs(self.b_eq, E.shape[0], "b_eq")
        lower = _as_bounds(self.lower, n, -np.inf, "lower")
        upper = _as_bounds(self.upper, n, np.inf, "upper")
        for name, arr in (("A_ineq", A), ("b_ineq", b), ("A_eq", E), ("b_eq", e)):
            if not np.all(np.isfinite(arr)):
                raise InvalidInstanceError(f"{name} has non-finite entries")
        if np.any(lower > upper):
            raise InvalidInstanceError("variable bounds with lower > upper")
        for name, arr in (("A_ineq", A), ("b_ineq", b), ("A_eq", E), ("b_eq", e),
                          ("lower", lower), ("upper", upper)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m_ineq(self) -> int:
        return self.A_ineq.shape[0]

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def var_bounds(self) -> list[tuple[float, float]]:
        return list(zip(self.lower.tolist(), self.upper.tolist()))

    def inequality_rows(self):
        """All inequalities, bounds included, as ``G z <= h``.

        Rows are ordered: general rows, finite upper bounds, finite lower bounds.
        """
        eye = np.eye(self.n)
        hi = np.flatnonzero(np.isfinite(self.upper))
        lo = np.flatnonzero(np.isfinite(self.lower))
        G = np.vstack([self.A_ineq, eye[hi], -eye[lo]])
        h = np.concatenate([self.b_ineq, self.upper[hi], -self.lower[lo]])
        return G, h

    def violation(self, z) -> float:
        """Largest primal infeasibility of ``z``."""
        z = np.asarray(z, dtype=float)
        parts = [0.0]
        if self.m_ineq:
            parts.append(float(np.max(self.A_ineq @ z - self.b_ineq)))
        if self.m_eq:
            parts.append(float(np.max(np.abs(self.A_eq @ z - self.b_eq))))
        parts.append(float(np.max(self.lower - z, initial=0.0)))
        parts.append(float(np.max(z - self.upper, initial=0.0)))
        return max(parts)


@dataclass(frozen=True, eq=False)
class LinearProgram(_ConstraintBlocks):
    c: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None   # -inf where unbounded; default free
    upper: np.ndarray | None = None

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise InvalidInstanceError("cost vector has non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        self._set_blocks(c.shape[0])

    def objective(self, z) -> float:
        return float(self.c @ z)


@dataclass(frozen=True, eq=False)
class QuadraticProgram(_ConstraintBlocks):
    Q: np.ndarray
    c: np.ndarray
    A_ineq: np.ndarray | None = None
    b_ineq: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    psd_tol: float = Config.PSD_TOL

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        n = c.shape[0]
        Q = np.array(self.Q, dtype=float, ndmin=2)
        if Q.shape != (n, n):
            raise DimensionMismatchError(f"Q has shape {Q.shape}, expected ({n}, {n})")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c))):
            raise InvalidInstanceError("objective has non-finite entries")
        scale = max(1.0, float(np.abs(Q).max(initial=0.0)))
        if np.abs(Q - Q.T).max(initial=0.0) > self.psd_tol * scale:
            raise InvalidInstanceError("Q is not symmetric")
        Q = 0.5 * (Q + Q.T)
        if n and np.linalg.eigvalsh(Q)[0] < -self.psd_tol * scale:
            raise InvalidInstanceError("Q is not positive semidefinite")
        Q.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        self._set_blocks(n)

    def objective(self, z) -> float:
        return float(0.5 * z @ self.Q @ z + self.c @ z)

    def as_lp(self, c=None) -> LinearProgram:
        return LinearProgram(
            self.c if c is None else c, self.A_ineq, self.b_ineq, self.A_eq, self.b_eq,
            self.lower, self.upper,
        )


# ----- Simplex -----

def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])
    np.maximum(tab[:, -1], 0.0, out=tab[:, -1])


def _run_simplex(tab, basis, cost, allowed, rc_tol, piv_tol, budget, phase):
    """Bland's rule on a tableau already in canonical form for ``basis``.

    Returns (outcome, pivots) with outcome in {"optimal", "unbounded", "limit"}.
    """
    pivots = 0
    while True:
        reduced = cost - cost[basis] @ tab[:, :-1]
        entering = np.flatnonzero((reduced < -rc_tol) & allowed)
        if entering.size == 0:
            return "optimal", pivots
        if pivots >= budget:
            return "limit", pivots
        col = int(entering[0])
        rows = np.flatnonzero(tab[:, col] > piv_tol)
        if rows.size == 0:
            return "unbounded", pivots
        ratios = tab[rows, -1] / tab[rows, col]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        leave = int(min(ties, key=lambda i: basis[i]))
        if trace.isEnabledFor(logging.DEBUG):
            trace.debug(
                "simplex phase %d pivot %d: enter %d leave %d (row %d)\n%s",
                phase, pivots, col, basis[leave], leave, np.array2string(tab, precision=6),
            )
        _pivot(tab, leave, col)
        basis[leave] = col
        pivots += 1


def solve_lp(p: LinearProgram, config=Config, *, max_iter=None) -> SolveReport:
    """Minimize ``c^T z`` over ``p`` with a dense two-phase simplex."""
    started = time.perf_counter()
    budget = config.LP_MAX_ITER if max_iter is None else max_iter
    n = p.n

    # z = offset + T y with y >= 0; finite two-sided bounds add rows y <= u - l
    offset = np.zeros(n)
    columns, widths = [], []
    for j in range(n):
        lo, hi = p.lower[j], p.upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            columns.append((j, 1.0))
            if np.isfinite(hi):
                widths.append((len(columns) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            columns.append((j, -1.0))
        else:
            columns.append((j, 1.0))
            columns.append((j, -1.0))
    ny = len(columns)
    T = np.zeros((n, ny))
    for k, (j, s) in enumerate(columns):
        T[j, k] = s

    ub = np.zeros((len(widths), ny))
    for r, (k, _) in enumerate(widths):
        ub[r, k] = 1.0
    A_in = np.vstack([p.A_ineq @ T, ub])
    b_in = np.concatenate([p.b_ineq - p.A_ineq @ offset, [w for _, w in widths]])
    A_eq = p.A_eq @ T
    b_eq = p.b_eq - p.A_eq @ offset
    m_in, m_eq = A_in.shape[0], A_eq.shape[0]
    m = m_in + m_eq
    n_real = ny + m_in

    A_std = np.zeros((m, n_real))
    A_std[:m_in, :ny] = A_in
    A_std[:m_in, ny:] = np.eye(m_in)
    A_std[m_in:, :ny] = A_eq
    b_std = np.concatenate([b_in, b_eq])
    sign = np.where(b_std < 0, -1.0, 1.0)
    A_std *= sign[:, None]
    b_std = b_std * sign
    c_std = np.concatenate([T.T @ p.c, np.zeros(m_in)])

    art_rows = [i for i in range(m) if not (i < m_in and sign[i] > 0)]
    n_art = len(art_rows)
    tab = np.zeros((m, n_real + n_art + 1))
    tab[:, :n_real] = A_std
    tab[:, -1] = b_std
    basis = np.zeros(m, dtype=int)
    for i in range(m_in):
        if sign[i] > 0:
            basis[i] = ny + i
    for k, i in enumerate(art_rows):
        tab[i, n_real + k] = 1.0
        basis[i] = n_real + k
    row_ids = np.arange(m)

    piv_tol = config.PIVOT_TOL
    pivots = 0

    def finish(status, z=None, duals=None, reduced=None, message=""):
        objective = float(p.c @ z) if z is not None else np.nan
        report = SolveReport(
            status=status,
            z=z,
            objective=objective,
            duals=np.zeros(p.m_ineq + p.m_eq) if duals is None else duals,
            iterations=pivots,
            wall_time=time.perf_counter() - started,
            reduced_costs=reduced,
            message=message,
        )
        logger.debug("LP solved", extra={"status": status.value, "pivots": pivots, "n": n})
        return report

    def current_z():
        y = np.zeros(tab.shape[1] - 1)
        y[basis] = tab[:, -1]
        return offset + T @ y[:ny]

    # Phase 1
    if n_art:
        cost1 = np.zeros(n_real + n_art)
        cost1[n_real:] = 1.0
        allowed = np.ones(n_real + n_art, dtype=bool)
        outcome, k = _run_simplex(tab, basis, cost1, allowed, piv_tol, piv_tol, budget, 1)
        pivots += k
        if outcome == "limit":
            return finish(SolveStatus.ITER_LIMIT, current_z(), message="phase 1 iteration cap")
        infeasibility = float(cost1[basis] @ tab[:, -1])
        if infeasibility > config.FEASIBILITY_TOL * max(1.0, np.abs(b_std).max(initial=0.0)):
            return finish(SolveStatus.INFEASIBLE, message=f"phase 1 residual {infeasibility:.3g}")

        keep = np.ones(tab.shape[0], dtype=bool)
        for i in range(tab.shape[0]):
            if basis[i] < n_real:
                continue
            candidates = np.abs(tab[i, :n_real])
            j = int(np.argmax(candidates)) if n_real else -1
            if j >= 0 and candidates[j] > piv_tol:
                _pivot(tab, i, j)
                basis[i] = j
                pivots += 1
            else:
                keep[i] = False       # redundant row
        tab = np.delete(tab[keep], np.s_[n_real:n_real + n_art], axis=1)
        basis = basis[keep]
        row_ids = row_ids[keep]

    # Phase 2
    allowed = np.ones(n_real, dtype=bool)
    rc_tol = piv_tol * max(1.0, np.abs(c_std).max(initial=0.0))
    outcome, k = _run_simplex(tab, basis, c_std, allowed, rc_tol, piv_tol, budget - pivots, 2)
    pivots += k
    z = current_z()
    if outcome == "unbounded":
        return finish(SolveStatus.UNBOUNDED, z, message="objective unbounded below")
    if outcome == "limit":
        return finish(SolveStatus.ITER_LIMIT, z, message="phase 2 iteration cap")

    # B^T pi = c_B on the rows that survived phase 1
    B = A_std[row_ids][:, basis]
    if B.size:
        try:
            pi = np.linalg.solve(B.T, c_std[basis])
        except np.linalg.LinAlgError:
            pi = np.linalg.lstsq(B.T, c_std[basis], rcond=None)[0]
    else:
        pi = np.zeros(0)
    pi_full = np.zeros(m)
    pi_full[row_ids] = pi
    multipliers = -sign * pi_full
    mu = np.maximum(multipliers[:p.m_ineq], 0.0)
    nu = multipliers[m_in:]
    reduced = p.c + p.A_ineq.T @ mu + p.A_eq.T @ nu
    return finish(SolveStatus.OPTIMAL, z, np.concatenate([mu, nu]), reduced)


def dual_objective(p: LinearProgram, report: SolveReport) -> float:
    """Lagrangian dual value of an LP at the report's multipliers."""
    mu, nu = report.duals[:p.m_ineq], report.duals[p.m_ineq:]
    r = report.reduced_costs
    value = -float(mu @ p.b_ineq) - float(nu @ p.b_eq)
    pos, neg = np.maximum(r, 0.0), np.maximum(-r, 0.0)
    tol = Config.OPTIMALITY_TOL
    if np.any((pos > tol) & ~np.isfinite(p.lower)) or np.any((neg > tol) & ~np.isfinite(p.upper)):
        return -np.inf
    value += float(np.sum(pos * np.where(np.isfinite(p.lower), p.lower, 0.0)))
    value -= float(np.sum(neg * np.where(np.isfinite(p.upper), p.upper, 0.0)))
    return value


# ----- Active-set QP -----

def independent_rows(M, candidates, base=None, tol=1e-10):
    """Greedy subset of ``candidates`` whose rows of ``M`` are independent of each other and of ``base``."""
    basis = []
    if base is not None:
        for row in base:
            _extend_basis(basis, row, tol)
    chosen = []
    for i in candidates:
        if _extend_basis(basis, M[i], tol):
            chosen.append(i)
    return chosen


def _extend_basis(basis, row, tol):
    norm = np.linalg.norm(row)
    if norm == 0.0:
        return False
    resid = row.astype(float)
    for _ in range(2):
        for q in basis:
            resid = resid - (q @ resid) * q
    rn = np.linalg.norm(resid)
    if rn <= tol * norm:
        return False
    basis.append(resid / rn)
    return True


def _null_space(A, n):
    if A.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > 1e-12 * max(1.0, s[0])))
    return vt[rank:].T


def solve_qp(p: QuadraticProgram, config=Config, *, start=None, working_set=None,
             max_iter=None) -> SolveReport:
    """Minimize ``1/2 z^T Q z + c^T z`` over ``p`` by a primal active-set method.

    ``start`` (a feasible point) and ``working_set`` (row indices of
    ``p.inequality_rows()``) warm-start the iteration; an infeasible or missing
    start is replaced by a vertex from a phase-1 LP.
    """
    started = time.perf_counter()
    n = p.n
    if not np.any(p.Q):
        report = solve_lp(p.as_lp(), config, max_iter=max_iter)
        return report.replace(wall_time=time.perf_counter() - started)

    budget = config.QP_MAX_ITER if max_iter is None else max_iter
    G, h = p.inequality_rows()
    keep_eq = independent_rows(p.A_eq, range(p.m_eq))
    E = p.A_eq[keep_eq]
    k_eq = E.shape[0]
    row_scale = 1.0 + np.abs(h)

    def empty_report(status, message, z=None, iterations=0):
        return SolveReport(
            status=status,
            z=z,
            objective=np.nan if z is None else p.objective(z),
            duals=np.zeros(p.m_ineq + p.m_eq),
            iterations=iterations,
            wall_time=time.perf_counter() - started,
            message=message,
        )

    z = None
    if start is not None:
        z0 = np.array(start, dtype=float).ravel()
        if z0.shape != (n,):
            raise DimensionMismatchError(f"start has length {z0.shape[0]}, expected {n}")
        if p.violation(z0) <= config.FEASIBILITY_TOL * max(1.0, np.abs(z0).max(initial=0.0)):
            z = z0
    if z is None:
        phase1 = solve_lp(p.as_lp(np.zeros(n)), config)
        if phase1.status is SolveStatus.INFEASIBLE:
            return empty_report(SolveStatus.INFEASIBLE, phase1.message)
        if not phase1.ok:
            return empty_report(SolveStatus.ITER_LIMIT, "phase 1 did not finish")
        z = phase1.z.copy()
        working_set = None
    if k_eq < p.m_eq and p.violation(z) > config.FEASIBILITY_TOL * 10:
        return empty_report(SolveStatus.INFEASIBLE, "inconsistent equalities")

    active = np.flatnonzero(h - G @ z <= config.FEASIBILITY_TOL * row_scale)
    if working_set is not None:
        wanted = set(int(i) for i in working_set)
        candidates = [int(i) for i in active if int(i) in wanted]
    else:
        candidates = [int(i) for i in active]
    W = independent_rows(G, candidates, base=E)

    Q, c = p.Q, p.c
    psd_scale = max(1.0, float(np.abs(Q).max()))
    zero_steps = 0
    at_minimizer = False
    for iteration in range(budget):
        g = Q @ z + c
        gscale = max(1.0, float(np.abs(g).max()), float(np.abs(c).max(initial=0.0)))
        A_W = np.vstack([E, G[W]]) if W else E
        Z = _null_space(A_W, n)
        gr = Z.T @ g

        if at_minimizer or np.abs(gr).max(initial=0.0) <= 1e-11 * gscale:
            at_minimizer = False
            if A_W.shape[0]:
                lam = np.linalg.lstsq(A_W.T, -g, rcond=None)[0]
            else:
                lam = np.zeros(0)
            mu_W = lam[k_eq:]
            negative = np.flatnonzero(mu_W < -1e-10 * gscale)
            if negative.size == 0:
                mu_rows = np.zeros(G.shape[0])
                mu_rows[W] = np.maximum(mu_W, 0.0)
                nu = np.zeros(p.m_eq)
                nu[keep_eq] = lam[:k_eq]
                mu = mu_rows[:p.m_ineq]
                reduced = c + Q @ z + p.A_ineq.T @ mu + p.A_eq.T @ nu
                return SolveReport(
                    status=SolveStatus.OPTIMAL,
                    z=z,
                    objective=p.objective(z),
                    duals=np.concatenate([mu, nu]),
                    iterations=iteration,
                    wall_time=time.perf_counter() - started,
                    reduced_costs=reduced,
                    active=tuple(int(i) for i in W),
                )
            if zero_steps > 2 * n:
                drop = int(min(negative, key=lambda k: W[k]))
            else:
                drop = int(negative[np.argmin(mu_W[negative])])
            W.pop(drop)
            continue

        Hr = Z.T @ Q @ Z
        evals, V = np.linalg.eigh(Hr)
        curved = evals > config.PSD_TOL * psd_scale
        coef = V.T @ gr
        flat = coef[~curved]
        if flat.size and np.abs(flat).max() > 1e-11 * gscale:
            d = -(Z @ (V[:, ~curved] @ flat))
            ray = True
        else:
            d = -(Z @ (V[:, curved] @ (coef[curved] / evals[curved])))
            ray = False

        Gd = G @ d
        slack = np.maximum(h - G @ z, 0.0)
        dn = np.linalg.norm(d)
        outside = np.ones(G.shape[0], dtype=bool)
        outside[W] = False
        blocking = np.flatnonzero(
            outside & (Gd > config.PIVOT_TOL * np.linalg.norm(G, axis=1) * dn)
        )
        alpha = np.inf if ray else 1.0
        block = None
        if blocking.size:
            steps = slack[blocking] / Gd[blocking]
            smallest = steps.min()
            if smallest < alpha:
                alpha = float(smallest)
                ties = blocking[steps <= smallest + 1e-14 * max(1.0, smallest)]
                block = int(ties.min())
        if not np.isfinite(alpha):
            return empty_report(SolveStatus.UNBOUNDED, "descent ray with no blocking constraint",
                                z=z, iterations=iteration)
        z = z + alpha * d
        if block is not None:
            W.append(block)
        else:
            at_minimizer = True
        zero_steps = zero_steps + 1 if alpha * dn <= 1e-14 * max(1.0, np.abs(z).max()) else 0
        if trace.isEnabledFor(logging.DEBUG):
            trace.debug("qp iter %d step %.3e block %s working %s", iteration, alpha, block, W)

    return empty_report(SolveStatus.ITER_LIMIT, "active-set iteration cap", z=z, iterations=budget)


def kkt_residuals(p, report: SolveReport) -> dict:
    """Primal, stationarity and complementarity residuals of a QP or LP report."""
    z = report.z
    mu, nu = report.duals[:p.m_ineq], report.duals[p.m_ineq:]
    grad = (p.Q @ z if isinstance(p, QuadraticProgram) else 0.0) + p.c
    r = grad + p.A_ineq.T @ mu + p.A_eq.T @ nu
    # what is left of r must be a bound multiplier of the right sign
    at_lo = np.isclose(z, p.lower, atol=1e-7)
    at_hi = np.isclose(z, p.upper, atol=1e-7)
    stray = np.where(at_lo, np.minimum(r, 0.0), np.where(at_hi, np.maximum(r, 0.0), r))
    stray = np.where(at_lo & at_hi, 0.0, stray)
    slack = p.b_ineq - p.A_ineq @ z
    return {
        "primal": p.violation(z),
        "stationarity": float(np.abs(stray).max(initial=0.0)),
        "dual": float(np.max(-mu, initial=0.0)),
        "complementarity": float(np.abs(mu * slack).max(initial=0.0)),
    }


# ----- Augmented-Lagrangian Newton minimizer -----

def _newton_direction(H, grad):
    H = 0.5 * (H + H.T)
    n = H.shape[0]
    scale = max(1.0, float(np.abs(np.diag(H)).max(initial=0.0)))
    shift = 0.0
    for _ in range(80):
        try:
            np.linalg.cholesky(H + shift * np.eye(n))
            break
        except np.linalg.LinAlgError:
            shift = max(2.0 * shift, 1e-10 * scale)
    step = np.linalg.solve(H + shift * np.eye(n), -grad)
    if not np.all(np.isfinite(step)) or step @ grad >= 0.0:
        step = -grad
    return step


def minimize_penalized(objective, constraints, start, penalty, multipliers=None,
                       config=Config, *, max_iter=None, tol=None) -> SolveReport:
    """Minimize the augmented Lagrangian of ``min f(z) s.t. g(z) <= 0``.

    ``objective(z)`` returns ``(f, grad, hess)``. ``constraints(z)`` (or None)
    returns ``(g, jac, curvature)`` where ``curvature(weights)`` gives
    ``sum_i weights_i * hess g_i`` or is None for affine rows. With
    ``multipliers=None`` the merit is the plain quadratic penalty.

    The merit decreases monotonically (Armijo backtracking on Newton steps).
    ``duals`` of the report are the first-order multiplier estimates
    ``max(0, mu + penalty * g)``.
    """
    if not penalty > 0:
        raise InvalidConfigError(f"penalty weight must be positive, got {penalty}")
    started = time.perf_counter()
    budget = config.NEWTON_MAX_ITER if max_iter is None else max_iter
    tol = config.OPTIMALITY_TOL if tol is None else tol
    rho = float(penalty)
    z = np.array(start, dtype=float).ravel()

    def evaluate(point):
        f, gf, Hf = objective(point)
        if constraints is None:
            g, J, curvature = np.zeros(0), np.zeros((0, point.size)), None
        else:
            g, J, curvature = constraints(point)
            g = np.asarray(g, dtype=float).ravel()
            J = np.asarray(J, dtype=float).reshape(g.size, point.size)
        if not (np.isfinite(f) and np.all(np.isfinite(gf)) and np.all(np.isfinite(g))):
            raise SolverFailedError("non-finite oracle value")
        mu = np.zeros(g.size) if multipliers is None else np.asarray(multipliers, dtype=float)
        plus = np.maximum(mu + rho * g, 0.0)
        merit = float(f + (plus @ plus - mu @ mu) / (2.0 * rho))
        return merit, gf + J.T @ plus, (f, gf, Hf, g, J, curvature, plus, mu)

    merit, grad, state = evaluate(z)
    status, message = SolveStatus.ITER_LIMIT, "Newton iteration cap"
    iteration = 0
    for iteration in range(budget + 1):
        f, gf, Hf, g, J, curvature, plus, mu = state
        if np.abs(grad).max(initial=0.0) <= tol * max(1.0, float(np.abs(gf).max(initial=0.0))):
            status, message = SolveStatus.OPTIMAL, ""
            break
        if iteration == budget:
            break
        H = np.array(Hf, dtype=float, copy=True)
        on = (mu + rho * g) > 0.0
        if np.any(on):
            H += rho * J[on].T @ J[on]
            if curvature is not None:
                H += curvature(plus)
        step = _newton_direction(H, grad)
        slope = float(grad @ step)
        t = 1.0
        while True:
            trial = z + t * step
            try:
                trial_merit, trial_grad, trial_state = evaluate(trial)
            except SolverFailedError:
                trial_merit = np.inf
            if trial_merit <= merit + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-16:
                break
        if t < 1e-16:
            message = "line search stalled"
            break
        z, merit, grad, state = trial, trial_merit, trial_grad, trial_state

    f, gf, Hf, g, J, curvature, plus, mu = state
    if trace.isEnabledFor(logging.DEBUG):
        trace.debug("penalized rho=%.3g iters=%d merit=%.10g max g=%.3e", rho, iteration, merit,
                    float(np.max(g, initial=0.0)))
    return SolveReport(
        status=status,
        z=z,
        objective=float(f),
        duals=plus,
        iterations=iteration,
        wall_time=time.perf_counter() - started,
        message=message,
    )
