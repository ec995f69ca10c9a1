"""Branch-and-bound over :mod:`ddlshaped.lp` relaxations with lazy cuts.

The search is best-bound first and branches on the most fractional integer
variable (lowest index on ties).  An optional callback is invoked whenever a
node relaxation is integer feasible; rows it returns are added globally and
the node is re-solved, which is how the master problem of the L-shaped method
is solved in a single tree.

``backend="highs"`` hands the program to :func:`scipy.optimize.milp` instead.
It is only available without a callback and is used for the baseline
formulations that are checked against the decomposition.
"""

from __future__ import annotations

import heapq
import inspect
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import MalformedProgram, NumericalFailure
from .lp import EQ, GE, LE, LinearProgram, Row, SimplexOptions, Status, solve_lp

CONTINUOUS, INTEGER, BINARY = "continuous", "integer", "binary"


@dataclass
class MixedIntegerProgram:
    lp: LinearProgram
    domains: Sequence[str]

    def __post_init__(self) -> None:
        self.domains = tuple(self.domains)
        if len(self.domains) != self.lp.n:
            raise MalformedProgram("one domain tag per variable is required")
        for j, dom in enumerate(self.domains):
            if dom not in (CONTINUOUS, INTEGER, BINARY):
                raise MalformedProgram(f"unknown domain {dom!r}")
            if dom == BINARY and (self.lp.lower[j] < 0 or self.lp.upper[j] > 1):
                raise MalformedProgram(f"binary variable {j} has bounds outside [0, 1]")

    @property
    def integer_mask(self) -> np.ndarray:
        return np.array([d != CONTINUOUS for d in self.domains], dtype=bool)


@dataclass
class MilpSolution:
    status: Status
    incumbent: np.ndarray | None
    objective: float
    bound: float
    node_count: int = 0
    cuts_added: int = 0
    bound_trace: list = field(default_factory=list)

    @property
    def x(self) -> np.ndarray | None:
        return self.incumbent


@dataclass
class MilpOptions:
    int_tol: float = 1e-6
    mip_gap: float = 1e-4
    feas_tol: float = 1e-8
    time_limit: float = math.inf
    node_limit: int | None = None
    lp_options: SimplexOptions = field(default_factory=SimplexOptions)


@dataclass(frozen=True)
class NodeInfo:
    depth: int
    node_count: int
    #: valid bound on the optimum when the callback runs (objective sense)
    bound: float = -math.inf


def _as_row(r) -> Row:
    if isinstance(r, Row):
        return r
    if hasattr(r, "row"):
        return r.row
    coef, rel, rhs = r
    return Row(np.asarray(coef, dtype=float), rel, float(rhs))


def solve_milp(
    mip: MixedIntegerProgram,
    on_integer_node: Callable | None = None,
    options: MilpOptions | None = None,
    backend: str = "bnb",
) -> MilpSolution:
    """Solve ``mip`` to optimality (within ``options.mip_gap``).

    ``on_integer_node(x)`` (or ``on_integer_node(x, info)`` if it accepts two
    arguments, ``info`` being a :class:`NodeInfo`) returns rows that must be
    valid for every integer feasible point not yet proven suboptimal.
    """
    opts = options or MilpOptions()
    if backend == "highs":
        if on_integer_node is not None:
            raise ValueError("the HiGHS backend does not support lazy-cut callbacks")
        return _solve_highs(mip, opts)
    if backend != "bnb":
        raise ValueError(f"unknown backend {backend!r}")
    return _BranchAndBound(mip, on_integer_node, opts).solve()


class _BranchAndBound:
    def __init__(self, mip: MixedIntegerProgram, callback, opts: MilpOptions):
        self.mip = mip
        self.opts = opts
        lp = mip.lp
        self.sign = -1.0 if lp.sense == "max" else 1.0
        self.c = self.sign * lp.c
        self.int_mask = mip.integer_mask
        self.int_idx = np.flatnonzero(self.int_mask)
        self.base_A = lp.A
        self.base_rel = list(lp.relations)
        self.base_b = lp.b
        self.cut_rows: list[Row] = []
        self.callback = callback
        self._pass_info = False
        if callback is not None:
            try:
                params = inspect.signature(callback).parameters.values()
                positional = [p for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
                self._pass_info = len(positional) >= 2 or any(p.kind is p.VAR_POSITIONAL for p in params)
            except (TypeError, ValueError):
                self._pass_info = False

    def _node_lp(self, lower, upper) -> LinearProgram:
        if self.cut_rows:
            A = np.vstack([self.base_A] + [r.coef[None, :] for r in self.cut_rows])
            rel = self.base_rel + [r.rel for r in self.cut_rows]
            b = np.concatenate([self.base_b, [r.rhs for r in self.cut_rows]])
        else:
            A, rel, b = self.base_A, self.base_rel, self.base_b
        return LinearProgram(self.c, A, rel, b, lower, upper)

    def _gap_abs(self, incumbent_obj: float) -> float:
        return self.opts.mip_gap * (1.0 + abs(incumbent_obj))

    def solve(self) -> MilpSolution:
        opts = self.opts
        lp = self.mip.lp
        lower = lp.lower.copy()
        upper = lp.upper.copy()
        lower[self.int_mask] = np.ceil(lower[self.int_mask] - opts.int_tol)
        upper[self.int_mask] = np.floor(upper[self.int_mask] + opts.int_tol)
        if np.any(lower > upper):
            return MilpSolution(Status.INFEASIBLE, None, math.nan, math.inf)

        start = time.monotonic()
        counter = itertools.count()
        heap = [(-math.inf, next(counter), 0, lower, upper)]
        incumbent = None
        inc_obj = math.inf
        nodes = 0
        trace = []
        global_bound = -math.inf
        status = Status.OPTIMAL

        while heap:
            key = heap[0][0]
            global_bound = max(global_bound, min(key, inc_obj))
            trace.append(global_bound)
            if key >= inc_obj - self._gap_abs(inc_obj):
                break
            if time.monotonic() - start > opts.time_limit or (
                opts.node_limit is not None and nodes >= opts.node_limit
            ):
                status = Status.TIME_LIMIT
                break
            key, _, depth, lo, up = heapq.heappop(heap)
            nodes += 1
            while True:
                sol = solve_lp(self._node_lp(lo, up), opts.lp_options)
                if sol.status is Status.UNBOUNDED:
                    if incumbent is None and depth == 0:
                        return MilpSolution(Status.UNBOUNDED, sol.primal, -self.sign * math.inf,
                                            -self.sign * math.inf, nodes, len(self.cut_rows), trace)
                    raise NumericalFailure("node relaxation unbounded below a bounded root")
                if sol.status is Status.INFEASIBLE:
                    break
                obj = float(self.c @ sol.primal)
                if obj >= inc_obj - self._gap_abs(inc_obj):
                    break
                x = sol.primal
                frac = np.abs(x[self.int_idx] - np.round(x[self.int_idx]))
                if self.int_idx.size and frac.max() > opts.int_tol:
                    # most fractional, lowest index on ties
                    score = np.abs(frac - 0.5)
                    k = int(np.flatnonzero(score <= score.min() + 1e-12)[0])
                    j = int(self.int_idx[k])
                    down_up = up.copy()
                    down_up[j] = math.floor(x[j])
                    up_lo = lo.copy()
                    up_lo[j] = math.ceil(x[j])
                    heapq.heappush(heap, (obj, next(counter), depth + 1, lo, down_up))
                    heapq.heappush(heap, (obj, next(counter), depth + 1, up_lo, up))
                    break
                x = x.copy()
                x[self.int_idx] = np.round(x[self.int_idx])
                if self.callback is not None:
                    open_min = min([key] + [heap[0][0]] if heap else [key])
                    info = NodeInfo(depth, nodes, self.sign * min(open_min, inc_obj))
                    rows = self.callback(x, info) if self._pass_info else self.callback(x)
                    rows = [_as_row(r) for r in rows or ()]
                    violated = any(r.residual(x) > opts.feas_tol * max(1.0, abs(r.rhs)) for r in rows)
                    self.cut_rows.extend(rows)
                    if violated:
                        continue
                incumbent, inc_obj = x, obj
                break

        if incumbent is None:
            if status is Status.TIME_LIMIT:
                return MilpSolution(Status.TIME_LIMIT, None, math.nan, self.sign * global_bound,
                                    nodes, len(self.cut_rows), trace)
            return MilpSolution(Status.INFEASIBLE, None, math.nan, math.inf, nodes, len(self.cut_rows), trace)
        if not heap and status is Status.OPTIMAL:
            global_bound = inc_obj
        return MilpSolution(
            status,
            incumbent,
            self.sign * inc_obj,
            self.sign * global_bound,
            nodes,
            len(self.cut_rows),
            trace,
        )


def _solve_highs(mip: MixedIntegerProgram, opts: MilpOptions) -> MilpSolution:
    lp = mip.lp
    return solve_highs_arrays(lp.c, lp.A, lp.relations, lp.b, lp.lower, lp.upper, mip.integer_mask,
                              opts, lp.sense)


def solve_highs_arrays(c, A, relations, b, lower, upper, integer_mask, opts: MilpOptions | None = None,
                       sense: str = "min") -> MilpSolution:
    """HiGHS on raw arrays; ``A`` may be a scipy sparse matrix."""
    from scipy.optimize import Bounds, LinearConstraint, milp

    opts = opts or MilpOptions()
    sign = -1.0 if sense == "max" else 1.0
    rel = np.array(relations, dtype=object)
    b = np.asarray(b, dtype=float)
    lo = np.where(rel == LE, -np.inf, b)
    hi = np.where(rel == GE, np.inf, b)
    constraints = [LinearConstraint(A, lo, hi)] if b.size else []
    options = {"mip_rel_gap": opts.mip_gap, "disp": False}
    if math.isfinite(opts.time_limit):
        options["time_limit"] = opts.time_limit
    res = milp(
        sign * np.asarray(c, dtype=float),
        constraints=constraints,
        integrality=np.asarray(integer_mask).astype(int),
        bounds=Bounds(lower, upper),
        options=options,
    )
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 0:
        bound = getattr(res, "mip_dual_bound", None)
        bound = float(res.fun) if bound is None or not np.isfinite(bound) else float(bound)
        return MilpSolution(Status.OPTIMAL, np.asarray(res.x), sign * float(res.fun), sign * bound, nodes)
    if res.status == 1:
        x = None if res.x is None else np.asarray(res.x)
        obj = math.nan if res.x is None else sign * float(res.fun)
        return MilpSolution(Status.TIME_LIMIT, x, obj, math.nan, nodes)
    if res.status == 2:
        return MilpSolution(Status.INFEASIBLE, None, math.nan, math.inf, nodes)
    if res.status == 3:
        return MilpSolution(Status.UNBOUNDED, None, -sign * math.inf, -sign * math.inf, nodes)
    raise NumericalFailure(f"HiGHS failed: {res.message}")
