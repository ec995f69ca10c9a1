"""Dense linear programming kernel.

A bounded-variable revised primal simplex (two phases) that returns optimal
primal and dual vectors, Farkas certificates for infeasible programs and
improving rays for unbounded ones.  Pivoting uses Dantzig's rule and falls
back to Bland's rule after a run of degenerate pivots, so the solver is fully
deterministic: identical input gives identical output.

Dual sign convention: ``dual[i]`` is the derivative of the optimal objective
with respect to ``b[i]``.  For a minimisation this means ``<=`` rows have
non-positive duals, ``>=`` rows non-negative duals and ``=`` rows free duals.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedProgram, NumericalFailure

LE, EQ, GE = "<=", "=", ">="
_RELATIONS = (LE, EQ, GE)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    TIME_LIMIT = "TimeLimit"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Row:
    """A single linear constraint ``coef @ x  rel  rhs``."""

    coef: np.ndarray
    rel: str
    rhs: float

    def residual(self, x: np.ndarray) -> float:
        """Amount by which ``x`` violates the row (0 when satisfied)."""
        lhs = float(np.dot(self.coef, x))
        if self.rel == LE:
            return max(0.0, lhs - self.rhs)
        if self.rel == GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class LinearProgram:
    """``sense  c @ x  s.t.  A x (relations) b,  lower <= x <= upper``.

    Bounds default to ``[0, inf)``.
    """

    c: np.ndarray
    A: np.ndarray
    relations: Sequence[str]
    b: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    sense: str = "min"

    def __post_init__(self) -> None:
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, n)
        if A.ndim != 2 or A.shape[1] != n:
            raise MalformedProgram(f"constraint matrix has shape {A.shape}, expected (m, {n})")
        self.A = A
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.relations = tuple(self.relations)
        m = A.shape[0]
        if self.b.size != m or len(self.relations) != m:
            raise MalformedProgram(f"{m} rows but {self.b.size} rhs values and {len(self.relations)} relations")
        bad = [r for r in self.relations if r not in _RELATIONS]
        if bad:
            raise MalformedProgram(f"unknown relation {bad[0]!r}")
        if not np.all(np.isfinite(self.b)):
            raise MalformedProgram("right-hand side must be finite")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.c)):
            raise MalformedProgram("coefficients must be finite")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        if self.lower.size != n or self.upper.size != n:
            raise MalformedProgram("bounds must have one entry per variable")
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise MalformedProgram(f"variable {j} has lower bound {self.lower[j]} > upper bound {self.upper[j]}")
        if np.any(self.lower == np.inf) or np.any(self.upper == -np.inf):
            raise MalformedProgram("a variable bound excludes every real value")
        if self.sense not in ("min", "max"):
            raise MalformedProgram(f"sense must be 'min' or 'max', got {self.sense!r}")

    @classmethod
    def from_rows(cls, c, rows: Iterable, lower=None, upper=None, sense: str = "min") -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        rows = [r if isinstance(r, Row) else Row(np.asarray(r[0], dtype=float), r[1], float(r[2])) for r in rows]
        A = np.array([r.coef for r in rows], dtype=float).reshape(len(rows), c.size)
        return cls(c, A, [r.rel for r in rows], [r.rhs for r in rows], lower, upper, sense)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def row_residuals(self, x: np.ndarray) -> np.ndarray:
        lhs = self.A @ x
        rel = np.array(self.relations)
        res = np.where(rel == LE, np.maximum(lhs - self.b, 0.0), 0.0)
        res = np.where(rel == GE, np.maximum(self.b - lhs, 0.0), res)
        return np.where(rel == EQ, np.abs(lhs - self.b), res)

    def max_violation(self, x: np.ndarray) -> float:
        bound_viol = np.maximum(self.lower - x, 0.0).max(initial=0.0)
        bound_viol = max(bound_viol, np.maximum(x - self.upper, 0.0).max(initial=0.0))
        return float(max(bound_viol, self.row_residuals(x).max(initial=0.0)))


@dataclass
class LpSolution:
    status: Status
    primal: np.ndarray
    dual: np.ndarray
    objective: float
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    farkas: np.ndarray | None = None
    ray: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL

    def bound_term(self, lower: np.ndarray, upper: np.ndarray, tol: float = 1e-12) -> float:
        """Contribution of the variable bounds to the dual objective.

        For a minimisation the dual objective is ``b @ dual + bound_term``;
        the term does not depend on ``b``, which is what cut generators need.
        """
        r = self.reduced_costs
        pos = r > tol
        neg = r < -tol
        if np.any(pos & ~np.isfinite(lower)) or np.any(neg & ~np.isfinite(upper)):
            raise NumericalFailure("reduced cost points at an infinite bound")
        return float(np.dot(r[pos], lower[pos]) + np.dot(r[neg], upper[neg]))


@dataclass
class SimplexOptions:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-9
    pivot_tol: float = 1e-9
    duality_gap_tol: float = 1e-7
    bland_after: int = 40
    refactor_every: int = 40
    max_iter: int | None = None


_BASIC, _LOWER, _UPPER, _FREE = 0, 1, 2, 3


class _BoundedSimplex:
    """Revised simplex on ``M z = b, lo <= z <= hi`` with an explicit basis inverse."""

    def __init__(self, M, b, lo, hi, basis, state, z, opts: SimplexOptions):
        self.M, self.b, self.lo, self.hi = M, b, lo, hi
        self.basis = basis
        self.state = state
        self.z = z
        self.opts = opts
        self.iterations = 0
        self.refactor()

    def refactor(self) -> None:
        B = self.M[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("singular basis") from exc
        nonbasic = np.ones(self.z.size, dtype=bool)
        nonbasic[self.basis] = False
        rhs = self.b - self.M[:, nonbasic] @ self.z[nonbasic]
        self.z[self.basis] = self.Binv @ rhs
        self._since_refactor = 0

    def duals(self, cost: np.ndarray) -> np.ndarray:
        return cost[self.basis] @ self.Binv

    def run(self, cost: np.ndarray, max_iter: int):
        """Optimise ``cost @ z``.  Returns ``("optimal", None)`` or ``("unbounded", ray)``."""
        o = self.opts
        lo, hi, M, state, z = self.lo, self.hi, self.M, self.state, self.z
        movable = hi > lo
        bland = False
        degenerate_run = 0
        while True:
            if self.iterations >= max_iter:
                raise NumericalFailure(f"simplex iteration limit {max_iter} reached")
            y = cost[self.basis] @ self.Binv
            d = cost - y @ M
            eligible = movable & (
                ((state == _LOWER) & (d < -o.opt_tol))
                | ((state == _UPPER) & (d > o.opt_tol))
                | ((state == _FREE) & (np.abs(d) > o.opt_tol))
            )
            candidates = np.flatnonzero(eligible)
            if candidates.size == 0:
                return "optimal", None
            if bland:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = self.Binv @ M[:, j]
            delta = -direction * alpha
            zb = z[self.basis]
            lob, hib = lo[self.basis], hi[self.basis]
            limits = np.full(delta.size, np.inf)
            dec = delta < -o.pivot_tol
            inc = delta > o.pivot_tol
            with np.errstate(invalid="ignore"):
                limits[dec] = (zb[dec] - lob[dec]) / -delta[dec]
                limits[inc] = (hib[inc] - zb[inc]) / delta[inc]
            limits = np.where(np.isnan(limits), np.inf, np.maximum(limits, 0.0))
            t_row = limits.min() if limits.size else np.inf
            t_own = hi[j] - lo[j]
            self.iterations += 1
            if not np.isfinite(t_row) and not np.isfinite(t_own):
                ray = np.zeros(z.size)
                ray[j] = direction
                ray[self.basis] = delta
                return "unbounded", ray
            if t_own <= t_row:
                # bound flip, the basis is unchanged
                z[j] = hi[j] if direction > 0 else lo[j]
                z[self.basis] = zb + delta * t_own
                state[j] = _UPPER if direction > 0 else _LOWER
                degenerate_run = 0
                continue
            t = t_row
            ties = np.flatnonzero(limits <= t + 1e-12)
            if bland:
                r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
            else:
                mags = np.abs(alpha[ties])
                best = ties[mags >= mags.max() * (1 - 1e-9)]
                r = int(best[np.argmin(np.asarray(self.basis)[best])])
            if abs(alpha[r]) < o.pivot_tol:
                raise NumericalFailure("pivot element below tolerance")
            z[self.basis] = zb + delta * t
            z[j] = z[j] + direction * t
            leaving = self.basis[r]
            if delta[r] < 0:
                z[leaving], state[leaving] = lo[leaving], _LOWER
            else:
                z[leaving], state[leaving] = hi[leaving], _UPPER
            self.basis[r] = j
            state[j] = _BASIC
            # rank-one update of the basis inverse
            pivot_row = self.Binv[r] / alpha[r]
            self.Binv -= np.outer(alpha, pivot_row)
            self.Binv[r] = pivot_row
            self._since_refactor += 1
            if self._since_refactor >= o.refactor_every:
                self.refactor()
            if t <= 1e-12:
                degenerate_run += 1
                if degenerate_run > o.bland_after:
                    bland = True
            else:
                degenerate_run = 0


def solve_lp(lp: LinearProgram, options: SimplexOptions | None = None) -> LpSolution:
    """Solve ``lp`` with the two-phase bounded simplex method."""
    o = options or SimplexOptions()
    m, n = lp.A.shape
    sign = -1.0 if lp.sense == "max" else 1.0
    c = sign * lp.c

    rel = np.array(lp.relations, dtype=object)
    ineq = np.flatnonzero(rel != EQ)
    ns = ineq.size
    S = np.zeros((m, ns))
    for k, i in enumerate(ineq):
        S[i, k] = 1.0 if rel[i] == LE else -1.0

    lo = np.concatenate([lp.lower, np.zeros(ns), np.zeros(m)])
    hi = np.concatenate([lp.upper, np.full(ns, np.inf), np.full(m, np.inf)])
    N = n + ns + m
    state = np.empty(N, dtype=np.int8)
    z = np.zeros(N)
    for j in range(n):
        if np.isfinite(lp.lower[j]):
            state[j], z[j] = _LOWER, lp.lower[j]
        elif np.isfinite(lp.upper[j]):
            state[j], z[j] = _UPPER, lp.upper[j]
        else:
            state[j], z[j] = _FREE, 0.0
    state[n:] = _LOWER

    residual = lp.b - lp.A @ z[:n]
    art = np.zeros((m, m))
    basis = []
    slack_of_row = {int(i): n + k for k, i in enumerate(ineq)}
    for i in range(m):
        s = slack_of_row.get(i)
        if s is not None and S[i, s - n] * residual[i] >= 0:
            basis.append(s)
            art[i, i] = 1.0
            hi[n + ns + i] = 0.0
        else:
            art[i, i] = 1.0 if residual[i] >= 0 else -1.0
            basis.append(n + ns + i)
    M = np.hstack([lp.A, S, art])
    for j in basis:
        state[j] = _BASIC

    max_iter = o.max_iter or 50 * (m + N) + 1000
    simplex = _BoundedSimplex(M, lp.b.copy(), lo, hi, basis, state, z, o)

    art_cost = np.zeros(N)
    art_cost[n + ns:] = 1.0
    if np.any(np.asarray(basis) >= n + ns):
        simplex.run(art_cost, max_iter)
        infeasibility = float(simplex.z[n + ns:].sum())
        if infeasibility > o.feas_tol * max(1.0, np.abs(lp.b).max(initial=0.0)):
            farkas = simplex.duals(art_cost)
            return LpSolution(Status.INFEASIBLE, simplex.z[:n].copy(), np.zeros(m), np.nan,
                              farkas=farkas, iterations=simplex.iterations)
    # artificials are pinned at zero for phase two
    hi[n + ns:] = 0.0
    simplex.z[n + ns:] = np.where(state[n + ns:] == _BASIC, simplex.z[n + ns:], 0.0)

    cost = np.concatenate([c, np.zeros(ns + m)])
    outcome, ray = simplex.run(cost, max_iter)
    simplex.refactor()
    x = simplex.z[:n].copy()
    if outcome == "unbounded":
        return LpSolution(Status.UNBOUNDED, x, np.zeros(m), -sign * np.inf,
                          ray=ray[:n], iterations=simplex.iterations)
    y = simplex.duals(cost)
    reduced = c - y @ lp.A
    return LpSolution(
        Status.OPTIMAL,
        x,
        sign * y,
        float(lp.c @ x),
        reduced_costs=sign * reduced,
        iterations=simplex.iterations,
    )


def solve_phase_one(W, rhs, relations=None, lower=None, upper=None,
                    options: SimplexOptions | None = None) -> LpSolution:
    """Minimum total artificial mass needed to satisfy ``W y (rel) rhs``.

    Solves ``min 1'w+ + 1'w-  s.t.  W y + w+ - w- (rel) rhs`` with ``y`` in its
    bounds (default ``y >= 0``).  The objective is zero exactly when the original
    system is feasible; the returned duals lie in ``[-1, 1]``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    m, n = W.shape
    relations = [EQ] * m if relations is None else list(relations)
    eye = np.eye(m)
    A = np.hstack([W, eye, -eye])
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    lo = np.concatenate([np.zeros(n) if lower is None else np.asarray(lower, float), np.zeros(2 * m)])
    hi = np.concatenate([np.full(n, np.inf) if upper is None else np.asarray(upper, float),
                         np.full(2 * m, np.inf)])
    sol = solve_lp(LinearProgram(c, A, relations, rhs, lo, hi), options)
    if not sol.optimal:
        raise NumericalFailure(f"phase-one problem reported {sol.status}")
    return sol
