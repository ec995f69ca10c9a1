"""Exact baselines: the monolithic linearised form and per-cell enumeration.

The linearised form keeps one binary ``delta_d`` per distribution and one
copy ``y_ds`` of the second stage per (distribution, scenario).  The
objective uses ``tau_ds = delta_d * y_ds``, replaced by its McCormick
envelope over ``[lower, yUpper]``.  Second-stage rows of a copy whose
``delta_d`` is zero are relaxed by slacks whose total is capped by
``U_feas[d][s] * (1 - delta_d)``, so instances without relatively complete
recourse are handled; instances flagged ``complete_recourse`` skip them.
Only the side of the envelope that the objective pushes against is written.

Both are solved with HiGHS on sparse matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import NumericalFailure, TooManyDistributions, UnboundedLinearizationBound
from .lp import EQ, GE, LE, LinearProgram, Status
from .milp import BINARY, CONTINUOUS, MilpOptions, MilpSolution, MixedIntegerProgram, solve_highs_arrays
from .model import SpInstance, build_indicator_encoding, first_stage_program, relaxed_box
from .recourse import feasibility_big_m

ORACLE_CAP = 256


class _SparseBuilder:
    """Column and row accumulator for a sparse MILP."""

    def __init__(self):
        self.c, self.lower, self.upper, self.integer = [], [], [], []
        self.rows, self.cols, self.vals = [], [], []
        self.relations, self.rhs = [], []

    @property
    def n(self) -> int:
        return len(self.c)

    def add_vars(self, c, lower, upper, integer) -> np.ndarray:
        start = self.n
        c, lower, upper, integer = np.broadcast_arrays(np.atleast_1d(c), lower, upper, integer)
        self.c.extend(c.astype(float))
        self.lower.extend(lower.astype(float))
        self.upper.extend(upper.astype(float))
        self.integer.extend(integer.astype(bool))
        return np.arange(start, self.n)

    def add_row(self, idx, coef, rel, rhs) -> None:
        k = len(self.rhs)
        idx = np.asarray(idx, int)
        coef = np.broadcast_to(np.asarray(coef, float), idx.shape)
        keep = coef != 0
        self.rows.extend([k] * int(keep.sum()))
        self.cols.extend(idx[keep])
        self.vals.extend(coef[keep])
        self.relations.append(rel)
        self.rhs.append(float(rhs))

    def add_dense_rows(self, A, idx, relations, b) -> None:
        for k in range(A.shape[0]):
            self.add_row(idx, A[k], relations[k], b[k])

    def matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.rhs), self.n))

    def solve(self, options: MilpOptions) -> MilpSolution:
        return solve_highs_arrays(np.array(self.c), self.matrix(), self.relations, np.array(self.rhs),
                                  np.array(self.lower), np.array(self.upper), np.array(self.integer), options)


@dataclass
class ExtensiveForm:
    """Linearised monolithic program with index maps into its columns."""

    instance: SpInstance
    builder: _SparseBuilder
    x_idx: np.ndarray
    v_idx: np.ndarray
    delta_idx: np.ndarray
    y_idx: dict = field(default_factory=dict)  # (d, s) -> columns
    tau_idx: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.builder.n

    @property
    def n_rows(self) -> int:
        return len(self.builder.rhs)

    def to_mip(self) -> MixedIntegerProgram:
        """Dense :class:`MixedIntegerProgram` (only sensible for small forms)."""
        b = self.builder
        lp = LinearProgram(np.array(b.c), self.builder.matrix().toarray(), list(b.relations), np.array(b.rhs),
                           np.array(b.lower), np.array(b.upper))
        return MixedIntegerProgram(lp, [BINARY if i and lo >= 0 and hi <= 1 else ("integer" if i else CONTINUOUS)
                                        for i, lo, hi in zip(b.integer, b.lower, b.upper)])


@dataclass
class ExactResult:
    """Outcome of an exact baseline; ``objective`` is internal (minimisation) form."""

    status: Status
    objective: float
    reported_objective: float
    x: np.ndarray | None
    d: int | None
    wall_time: float = 0.0
    per_cell: list = field(default_factory=list)
    node_count: int = 0

    def __iter__(self):
        return iter((self.objective, self.x, self.d))


def _y_bounds(instance: SpInstance, scen):
    Y = instance.y_upper
    if Y is None:
        raise UnboundedLinearizationBound("the linearised form needs yUpper")
    lo = scen.lower
    hi = np.minimum(scen.upper, Y)
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise UnboundedLinearizationBound("second-stage variables need finite bounds for the linearisation")
    if np.any(lo > hi):
        raise UnboundedLinearizationBound("yUpper lies below a second-stage lower bound")
    return lo, hi


def build_extensive(instance: SpInstance) -> ExtensiveForm:
    enc = build_indicator_encoding(instance)
    base = first_stage_program(instance, enc)
    lo_box, hi_box = relaxed_box(instance, enc)
    if np.any(~np.isfinite(lo_box)) or np.any(~np.isfinite(hi_box)):
        raise UnboundedLinearizationBound("first-stage region must be bounded")
    U_feas = feasibility_big_m(instance, lo_box, hi_box)
    B = _SparseBuilder()
    n1, nv, D = instance.n1, enc.n_vars, instance.n_distributions
    xv = B.add_vars(base.lp.c, base.lp.lower, base.lp.upper, base.integer_mask)
    B.add_dense_rows(base.lp.A, xv, base.lp.relations, base.lp.b)
    delta = B.add_vars(np.zeros(D), 0.0, 1.0, True)
    B.add_row(delta, 1.0, EQ, 1.0)
    for d in range(D):
        # delta_d can be one only where activation_d(v) vanishes
        top = enc.act_const[d] + np.clip(enc.act_coef[d], 0, None).sum()
        if nv:
            B.add_row(np.concatenate([xv[n1:], [delta[d]]]), np.concatenate([enc.act_coef[d], [top]]), LE,
                      top - enc.act_const[d])
    form = ExtensiveForm(instance, B, xv[:n1], xv[n1:], delta)
    for d, dist in enumerate(instance.distributions):
        for s, scen in enumerate(dist.scenarios):
            lo, hi = _y_bounds(instance, scen)
            n2 = scen.n2
            y = B.add_vars(np.zeros(n2), lo, hi, [dm != CONTINUOUS for dm in scen.domains])
            tau = B.add_vars(scen.probability * scen.q, np.minimum(lo, 0), np.maximum(hi, 0), False)
            form.y_idx[(d, s)] = y
            form.tau_idx[(d, s)] = tau
            slack_cols = []
            cap = 0.0 if instance.complete_recourse else U_feas[d][s]
            for i in range(scen.W.shape[0]):
                cols = [xv[:n1], y]
                coefs = [scen.T[i], scen.W[i]]
                rel = scen.relations[i]
                if cap > 0:
                    if rel in (LE, EQ):
                        e = B.add_vars(0.0, 0.0, cap, False)
                        cols.append(e)
                        coefs.append(np.array([-1.0]))
                        slack_cols.append(e)
                    if rel in (GE, EQ):
                        e = B.add_vars(0.0, 0.0, cap, False)
                        cols.append(e)
                        coefs.append(np.array([1.0]))
                        slack_cols.append(e)
                B.add_row(np.concatenate(cols), np.concatenate(coefs), rel, scen.h[i])
            if slack_cols:
                cols = np.concatenate(slack_cols + [[delta[d]]])
                B.add_row(cols, np.concatenate([np.ones(len(slack_cols)), [cap]]), LE, cap)
            dj = delta[d]
            for j in range(n2):
                t, yj = tau[j], y[j]
                if scen.q[j] == 0:
                    continue
                # only the side of the envelope the objective pushes against can bind
                if scen.q[j] > 0:
                    B.add_row([t, dj], [1.0, -lo[j]], GE, 0.0)               # tau >= lo delta
                    B.add_row([t, yj, dj], [1.0, -1.0, -hi[j]], GE, -hi[j])  # tau >= y - hi (1 - delta)
                else:
                    B.add_row([t, dj], [1.0, -hi[j]], LE, 0.0)               # tau <= hi delta
                    B.add_row([t, yj, dj], [1.0, -1.0, -lo[j]], LE, -lo[j])  # tau <= y - lo (1 - delta)
    return form


def solve_extensive(instance: SpInstance, options: MilpOptions | None = None) -> ExactResult:
    import time

    start = time.monotonic()
    form = build_extensive(instance)
    opts = options or MilpOptions(mip_gap=1e-9)
    sol = form.builder.solve(opts)
    sign = instance.objective_sign
    if sol.status is not Status.OPTIMAL:
        return ExactResult(sol.status, math.nan, math.nan, None, None, time.monotonic() - start,
                           node_count=sol.node_count)
    z = sol.incumbent
    d = int(np.argmax(z[form.delta_idx]))
    x = z[form.x_idx]
    return ExactResult(Status.OPTIMAL, sol.objective, sign * sol.objective, x, d, time.monotonic() - start,
                       node_count=sol.node_count)


def cell_program(instance: SpInstance, d: int, enc=None) -> _SparseBuilder:
    """Deterministic equivalent of the stochastic program with the first stage restricted to cell ``d``."""
    enc = enc if enc is not None else build_indicator_encoding(instance)
    base = first_stage_program(instance, enc, cell=d)
    B = _SparseBuilder()
    n1 = instance.n1
    xv = B.add_vars(base.lp.c, base.lp.lower, base.lp.upper, base.integer_mask)
    B.add_dense_rows(base.lp.A, xv, base.lp.relations, base.lp.b)
    for scen in instance.distributions[d].scenarios:
        y = B.add_vars(scen.probability * scen.q, scen.lower, scen.upper,
                       [dm != CONTINUOUS for dm in scen.domains])
        for i in range(scen.W.shape[0]):
            B.add_row(np.concatenate([xv[:n1], y]), np.concatenate([scen.T[i], scen.W[i]]), scen.relations[i],
                      scen.h[i])
    return B


def enumeration_oracle(instance: SpInstance, cap: int = ORACLE_CAP,
                       options: MilpOptions | None = None) -> ExactResult:
    """Best over cells of the standard stochastic program restricted to each cell.

    Iterating yields ``(objective, x, d)``.
    """
    import time

    D = instance.n_distributions
    if D > cap:
        raise TooManyDistributions(f"{D} distributions exceed the enumeration cap {cap}")
    start = time.monotonic()
    enc = build_indicator_encoding(instance)
    opts = options or MilpOptions(mip_gap=1e-9)
    best = (math.inf, None, None)
    per_cell = []
    nodes = 0
    for d in range(D):
        sol = cell_program(instance, d, enc).solve(opts)
        nodes += sol.node_count
        if sol.status is Status.INFEASIBLE:
            per_cell.append(math.inf)
            continue
        if sol.status is Status.UNBOUNDED:
            raise NumericalFailure(f"cell {d} program is unbounded")
        if sol.status is not Status.OPTIMAL:
            raise NumericalFailure(f"cell {d} program ended with status {sol.status}")
        per_cell.append(sol.objective)
        if sol.objective < best[0]:
            best = (sol.objective, sol.incumbent[:instance.n1], d)
    sign = instance.objective_sign
    if best[2] is None:
        return ExactResult(Status.INFEASIBLE, math.nan, math.nan, None, None, time.monotonic() - start, per_cell,
                           nodes)
    return ExactResult(Status.OPTIMAL, best[0], sign * best[0], best[1], best[2], time.monotonic() - start,
                       per_cell, nodes)
