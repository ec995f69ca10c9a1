"""The L-shaped method with distribution-specific cuts.

Two drivers share the cut logic:

``ls-loop``
    Re-solves the relaxed master problem to optimality every iteration,
    evaluates the recourse of the cell the solution falls in and adds one
    feasibility or optimality cut.
``ls-callback``
    Solves the master once with :func:`~ddlshaped.milp.solve_milp`; the same
    check runs as a lazy-cut callback at every integer-feasible node.

The master problem is over ``[x, mu, v]`` where ``v`` are the indicator
variables of :func:`~ddlshaped.model.build_indicator_encoding`, with
objective ``c @ x + mu``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cuts import (
    Cut,
    CutKind,
    gen_feas_cut_continuous,
    gen_feas_cut_integer,
    gen_opt_cut_continuous,
    gen_opt_cut_integer,
    safe_big_m,
)
from .errors import InfeasibleMaster, ModelError, NoCell, NotViolated, NumericalFailure
from .lp import LinearProgram, Status
from .milp import BINARY, CONTINUOUS, MilpOptions, MixedIntegerProgram, NodeInfo, solve_milp
from .model import MIXED_INTEGER, SpInstance, build_indicator_encoding, identify_distribution
from .recourse import BoundConstants, RecourseEvaluation, compute_bounds, evaluate_recourse
from .valid_inequalities import generate_distind_cut

CSV_VERSION = "ddlshaped-iterations/1"
CSV_COLUMNS = ["iteration", "phase", "d", "LB", "UB", "gap", "cuts_total", "wall_ms"]
METHODS = ("ls-loop", "ls-callback")
DIST_IND_FAMILIES = ("none", "mccormick", "jensen", "envelope")


@dataclass
class RunConfig:
    method: str = "ls-loop"
    gap_tol: float = 1e-4
    time_limit: float = 1800.0
    dist_ind_cuts: str = "none"
    bound_overrides: dict = field(default_factory=dict)
    seed: int = 0
    #: weight of mu added to the master objective so ties go to the smallest mu
    mu_tiebreak: float = 1e-9
    recourse_backend: str = "highs"
    #: loop-mode master solver; callback mode always uses the in-house branch and bound
    master_backend: str = "bnb"
    master_gap: float | None = None

    def __post_init__(self) -> None:
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.dist_ind_cuts not in DIST_IND_FAMILIES:
            raise ValueError(f"unknown distribution-independent cut family {self.dist_ind_cuts!r}")
        if self.master_backend not in ("bnb", "highs"):
            raise ValueError(f"unknown master backend {self.master_backend!r}")


@dataclass
class IterationRecord:
    iteration: int
    phase: str  # feas | opt | done
    x: np.ndarray
    d: int | None
    mu: float | None
    recourse: float | None
    cuts: list
    lower_bound: float
    upper_bound: float
    cuts_total: int
    wall_ms: float

    @property
    def gap(self) -> float:
        return relative_gap(self.lower_bound, self.upper_bound)


@dataclass
class LShapedResult:
    status: Status
    x: np.ndarray | None
    mu: float | None
    d: int | None
    objective: float  # internal (minimised) value
    reported_objective: float  # in the instance's own sense
    lower_bound: float
    upper_bound: float
    iterations: list
    cuts: list
    bounds: BoundConstants
    wall_time: float
    node_count: int = 0

    @property
    def gap(self) -> float:
        return relative_gap(self.lower_bound, self.upper_bound)

    def count(self, *kinds: CutKind) -> int:
        return sum(c.kind in kinds for c in self.cuts)

    @property
    def n_optimality_cuts(self) -> int:
        return self.count(CutKind.CONT_OPT, CutKind.INT_OPT)

    @property
    def n_feasibility_cuts(self) -> int:
        return self.count(CutKind.CONT_FEAS, CutKind.INT_FEAS)


def relative_gap(lb: float, ub: float) -> float:
    if not (math.isfinite(lb) and math.isfinite(ub)):
        return math.inf
    return max(0.0, ub - lb) / (1.0 + abs(ub))


class _Engine:
    def __init__(self, instance: SpInstance, config: RunConfig):
        self.inst = instance
        self.cfg = config
        self.enc = build_indicator_encoding(instance)
        self.bounds = compute_bounds(instance, config.bound_overrides)
        self.n1 = instance.n1
        self.nv = self.enc.n_vars
        self.integer_stage = instance.stage2_kind == MIXED_INTEGER
        finite_L = [v for v in self.bounds.L if math.isfinite(v)]
        self.min_L = min(finite_L) if finite_L else self.bounds.mu_lower
        self.cuts: list[Cut] = []
        self.keys: set = set()
        self.records: list[IterationRecord] = []
        self.cache: dict = {}
        self.lb = -math.inf
        self.ub = math.inf
        self.best = None  # (x, mu, d, value)
        self.start = time.monotonic()
        self.has_opt_cut = False

    # -- master problem -------------------------------------------------
    def master(self, mu_in_objective: bool) -> MixedIntegerProgram:
        fs = self.inst.first_stage
        n1, nv = self.n1, self.nv
        A_fs = np.hstack([fs.A, np.zeros((fs.A.shape[0], 1 + nv))])
        A_enc = np.hstack([self.enc.A[:, :n1], np.zeros((self.enc.A.shape[0], 1)), self.enc.A[:, n1:]])
        rows = [r for r in (c.row(self.enc) for c in self.cuts)]
        A = np.vstack([A_fs, A_enc] + [r.coef[None, :] for r in rows])
        rel = list(fs.relations) + list(self.enc.relations) + [r.rel for r in rows]
        b = np.concatenate([fs.b, self.enc.b, [r.rhs for r in rows]])
        mu_cost = (1.0 + self.cfg.mu_tiebreak) if mu_in_objective else 0.0
        c = np.concatenate([fs.c, [mu_cost], np.zeros(nv)])
        mu_lo = self.bounds.mu_lower if math.isfinite(self.bounds.mu_lower) else -math.inf
        lo = np.concatenate([fs.lower, [mu_lo], np.zeros(nv)])
        hi = np.concatenate([fs.upper, [math.inf], np.ones(nv)])
        lp = LinearProgram(c, A, rel, b, lo, hi)
        return MixedIntegerProgram(lp, list(fs.domains) + [CONTINUOUS] + [BINARY] * nv)

    def split(self, z):
        return z[:self.n1], float(z[self.n1]), z[self.n1 + 1:]

    # -- shared check ---------------------------------------------------
    def cell_of(self, x, v) -> int:
        try:
            return identify_distribution(self.inst, x)
        except NoCell:
            if self.nv == 0:
                raise
            act = self.enc.activations(v)
            d = int(np.argmin(act))
            if act[d] > 1e-6:
                raise
            return d

    def evaluate(self, x, d) -> RecourseEvaluation:
        key = (d, tuple(np.round(x, 10)))
        ev = self.cache.get(key)
        if ev is None:
            ev = evaluate_recourse(self.inst, x, d, self.cfg.recourse_backend)
            self.cache[key] = ev
        return ev

    def tol(self, value: float) -> float:
        return self.cfg.gap_tol * (1.0 + abs(value))

    def check(self, x, mu, v, iteration: int, allow_distind: bool):
        """Run the feasibility/optimality test at a master point.

        Returns ``(phase, d, evaluation, new_cuts)``; ``mu`` is ``None``
        while it is excluded from the master objective.
        """
        d = self.cell_of(x, v)
        ev = self.evaluate(x, d)
        new = []
        if not ev.feasible:
            if self.integer_stage:
                cut = gen_feas_cut_integer(x)
            else:
                scen = self.inst.distributions[d].scenarios[ev.infeasible_scenario]
                cut = gen_feas_cut_continuous(scen, x, d, ev.infeasible_scenario, ev.sigma, ev.sigma_kappa,
                                              self.bounds.U_feas[d][ev.infeasible_scenario])
            cut.iteration = iteration
            new.append(cut)
            return "feas", d, ev, self._register(new)

        total = float(self.inst.first_stage.c @ x) + ev.value
        if total < self.ub:
            self.ub = total
            self.best = (x.copy(), ev.value, d, total)
        if mu is not None and mu >= ev.value - self.tol(total):
            return "done", d, ev, []

        if self.integer_stage:
            cut = gen_opt_cut_integer(x, d, ev.value, self.bounds.L[d], self.bounds.U_opt)
            cut.iteration = iteration
            new.append(cut)
        lp_cut = gen_opt_cut_continuous(self.inst, x, d, ev, self.bounds.U_opt)
        lp_cut.iteration = iteration
        if self.bounds.computed_U_opt:
            lp_cut.big_m = max(lp_cut.big_m, safe_big_m(lp_cut, self.bounds.box_lower, self.bounds.box_upper,
                                                         self.min_L))
        if not self.integer_stage or mu is None or lp_cut.violation(x, mu) > self.tol(total):
            new.append(lp_cut)
        if allow_distind and self.cfg.dist_ind_cuts != "none":
            di = generate_distind_cut(self.inst, self.cfg.dist_ind_cuts, x)
            if di is not None:
                di.iteration = iteration
                new.append(di)
        return "opt", d, ev, self._register(new)

    def _register(self, cuts):
        fresh = []
        for cut in cuts:
            key = cut.key()
            if key in self.keys:
                continue
            self.keys.add(key)
            self.cuts.append(cut)
            fresh.append(cut)
            if cut.is_optimality and cut.d is not None:
                self.has_opt_cut = True
        return fresh

    def record(self, iteration, phase, x, d, mu, ev, cuts):
        self.records.append(IterationRecord(
            iteration, phase, np.array(x, float), d, mu,
            None if ev is None else ev.value, list(cuts), self.lb, self.ub, len(self.cuts),
            1000.0 * (time.monotonic() - self.start)))

    def elapsed(self) -> float:
        return time.monotonic() - self.start

    # -- drivers --------------------------------------------------------
    def run_loop(self) -> LShapedResult:
        cfg = self.cfg
        iteration = 0
        status = Status.OPTIMAL
        final = None
        node_count = 0
        master_gap = cfg.master_gap if cfg.master_gap is not None else min(cfg.gap_tol, 1e-6)
        while True:
            remaining = cfg.time_limit - self.elapsed()
            if remaining <= 0:
                status = Status.TIME_LIMIT
                break
            iteration += 1
            mu_active = self.has_opt_cut or math.isfinite(self.bounds.mu_lower)
            sol = solve_milp(self.master(mu_active),
                             options=MilpOptions(mip_gap=master_gap, time_limit=remaining),
                             backend=cfg.master_backend)
            node_count += sol.node_count
            if sol.status is Status.INFEASIBLE:
                raise InfeasibleMaster("relaxed master problem is infeasible")
            if sol.status is Status.UNBOUNDED:
                raise ModelError("relaxed master problem is unbounded; supply a finite mu_lower")
            if sol.incumbent is None:
                status = Status.TIME_LIMIT
                break
            x, mu, v = self.split(sol.incumbent)
            if mu_active:
                cx = float(self.inst.first_stage.c @ x)
                bound = sol.bound - cfg.mu_tiebreak * abs(mu) if sol.status is Status.OPTIMAL else -math.inf
                self.lb = max(self.lb, min(bound, cx + mu))
            phase, d, ev, cuts = self.check(x, mu if mu_active else None, v, iteration, allow_distind=True)
            if phase == "done":
                self.lb = max(self.lb, min(self.ub, float(self.inst.first_stage.c @ x) + mu))
                self.record(iteration, phase, x, d, mu, ev, cuts)
                final = (x, mu, d, ev)
                break
            if not cuts:
                # every cut found is already in the master: the point is optimal up to round-off
                if phase == "feas" or ev.value - (mu if mu_active else -math.inf) > 1e-6 * (1 + abs(ev.value)):
                    raise NumericalFailure("a cut already in the master was regenerated")
                self.record(iteration, "done", x, d, mu, ev, cuts)
                final = (x, mu, d, ev)
                break
            self.record(iteration, phase, x, d, mu if mu_active else None, ev, cuts)
            if self.elapsed() > cfg.time_limit:
                status = Status.TIME_LIMIT
                break
        if final is None and self.best is not None:
            x, value, d, _ = self.best
            return self.result(status, x, value, d, node_count)
        if final is None:
            return self.result(status, None, None, None, node_count)
        x, mu, d, ev = final
        return self.result(status, x, mu, d, node_count, ev)

    def run_callback(self) -> LShapedResult:
        cfg = self.cfg
        if not math.isfinite(self.bounds.mu_lower):
            raise ModelError("callback mode needs a finite lower bound on mu")
        counter = [0]

        def on_integer_node(z, info: NodeInfo):
            counter[0] += 1
            if math.isfinite(info.bound):
                self.lb = max(self.lb, info.bound)
            x, mu, v = self.split(z)
            phase, d, ev, cuts = self.check(x, mu, v, counter[0], allow_distind=info.depth == 0)
            self.record(counter[0], phase, x, d, mu, ev, cuts)
            return [c.row(self.enc) for c in cuts]

        master = self.master(True)
        sol = solve_milp(master, on_integer_node,
                         MilpOptions(mip_gap=cfg.gap_tol, time_limit=cfg.time_limit))
        if sol.status is Status.INFEASIBLE:
            raise InfeasibleMaster("relaxed master problem is infeasible")
        if sol.status is Status.UNBOUNDED:
            raise ModelError("relaxed master problem is unbounded")
        if sol.incumbent is None:
            return self.result(Status.TIME_LIMIT, None, None, None, sol.node_count)
        self.lb = max(self.lb, sol.bound - cfg.mu_tiebreak * abs(sol.incumbent[self.n1]))
        x, mu, v = self.split(sol.incumbent)
        d = self.cell_of(x, v)
        ev = self.evaluate(x, d)
        status = Status.OPTIMAL if sol.status is Status.OPTIMAL else Status.TIME_LIMIT
        self.records.append(IterationRecord(counter[0] + 1, "done", x.copy(), d, mu, ev.value, [],
                                            min(self.lb, self.ub), self.ub, len(self.cuts),
                                            1000.0 * self.elapsed()))
        return self.result(status, x, mu, d, sol.node_count, ev)

    def result(self, status, x, mu, d, node_count, ev=None) -> LShapedResult:
        sign = self.inst.objective_sign
        if x is None:
            return LShapedResult(status, None, None, None, math.nan, math.nan, self.lb, self.ub, self.records,
                                 self.cuts, self.bounds, self.elapsed(), node_count)
        if ev is None:
            ev = self.evaluate(x, d)
        objective = float(self.inst.first_stage.c @ x) + ev.value
        if self.best is not None and self.best[3] < objective - 1e-9 * (1.0 + abs(objective)):
            # a loose tolerance can stop at a point worse than the incumbent
            x, mu, d, objective = self.best
            ev = self.evaluate(x, d)
        self.ub = min(self.ub, objective)
        lb = min(self.lb, self.ub)
        return LShapedResult(status, x, mu, d, objective, sign * objective, lb, self.ub, self.records,
                             self.cuts, self.bounds, self.elapsed(), node_count)


def run(instance: SpInstance, config: RunConfig | None = None) -> LShapedResult:
    """Solve ``instance`` with the L-shaped method in the configured mode."""
    cfg = config or RunConfig()
    engine = _Engine(instance, cfg)
    if cfg.method == "ls-loop":
        return engine.run_loop()
    if cfg.method == "ls-callback":
        return engine.run_callback()
    raise ValueError(f"unknown method {cfg.method!r}")


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(round(v, 10))
    return str(v)


def iteration_csv(records, timing: bool = False) -> str:
    """Iteration log as CSV text; ``wall_ms`` is ``-`` unless ``timing``."""
    buf = io.StringIO()
    buf.write(f"# {CSV_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([r.iteration, r.phase, _fmt(r.d), _fmt(r.lower_bound), _fmt(r.upper_bound),
                         _fmt(r.gap), r.cuts_total, _fmt(round(r.wall_ms, 3)) if timing else "-"])
    return buf.getvalue()
