"""Second-stage evaluation and the bound constants used by the big-M terms."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure, UnboundedBound, UnboundedRecourse
from .lp import LinearProgram, Status, solve_lp, solve_phase_one
from .milp import CONTINUOUS, MilpOptions, MixedIntegerProgram, solve_milp
from .model import MIXED_INTEGER, SpInstance, build_indicator_encoding, first_stage_program, relaxed_box

#: gap used when solving second-stage MILPs; the values feed tight cuts
RECOURSE_MIP_GAP = 1e-9


@dataclass
class ScenarioOutcome:
    value: float
    lp_value: float
    dual: np.ndarray | None
    kappa: float
    y: np.ndarray | None


@dataclass
class RecourseEvaluation:
    """Expected recourse of one distribution at one first-stage point.

    ``value`` is ``inf`` when some scenario is infeasible; evaluation stops
    at the first such scenario, whose phase-one data is kept in
    ``infeasible_scenario``, ``sigma``, ``sigma_kappa`` and ``psi``.
    """

    d: int
    x: np.ndarray
    feasible: bool
    value: float
    lp_value: float
    scenarios: list = field(default_factory=list)
    infeasible_scenario: int | None = None
    sigma: np.ndarray | None = None
    sigma_kappa: float = 0.0
    psi: float = 0.0


def scenario_lp(scen, x) -> LinearProgram:
    return LinearProgram(scen.q, scen.W, scen.relations, scen.rhs(x), scen.lower, scen.upper)


def evaluate_recourse(instance: SpInstance, x, d: int, milp_backend: str = "bnb") -> RecourseEvaluation:
    x = np.asarray(x, dtype=float)
    dist = instance.distributions[d]
    integer_stage = instance.stage2_kind == MIXED_INTEGER
    out = RecourseEvaluation(d, x.copy(), True, 0.0, 0.0)
    for s, scen in enumerate(dist.scenarios):
        lp = scenario_lp(scen, x)
        sol = solve_lp(lp)
        if sol.status is Status.UNBOUNDED:
            raise UnboundedRecourse(f"scenario {s} of distribution {dist.id} is unbounded at x = {x}")
        feasible = sol.optimal
        value = sol.objective if feasible else math.inf
        y = sol.primal if feasible else None
        if feasible and integer_stage and any(dm != CONTINUOUS for dm in scen.domains):
            mip = solve_milp(MixedIntegerProgram(lp, scen.domains),
                             options=MilpOptions(mip_gap=RECOURSE_MIP_GAP), backend=milp_backend)
            if mip.status is Status.OPTIMAL:
                value, y = mip.objective, mip.incumbent
            elif mip.status is Status.INFEASIBLE:
                feasible = False
            else:
                raise NumericalFailure(f"second-stage MILP ended with status {mip.status}")
        if not feasible:
            ph = solve_phase_one(scen.W, lp.b, scen.relations, scen.lower, scen.upper)
            nw = 2 * lp.m
            kappa = ph.bound_term(np.concatenate([scen.lower, np.zeros(nw)]),
                                  np.concatenate([scen.upper, np.full(nw, np.inf)]))
            out.feasible = False
            out.value = out.lp_value = math.inf
            out.infeasible_scenario = s
            out.sigma = ph.dual
            out.sigma_kappa = kappa
            out.psi = ph.objective
            return out
        kappa = sol.bound_term(scen.lower, scen.upper)
        out.scenarios.append(ScenarioOutcome(value, sol.objective, sol.dual, kappa, y))
        out.value += scen.probability * value
        out.lp_value += scen.probability * sol.objective
    return out


@dataclass
class BoundConstants:
    U_feas: list  # [d][s]
    U_opt: float
    L: list  # [d]
    mu_lower: float
    provenance: dict
    box_lower: np.ndarray
    box_upper: np.ndarray

    @property
    def computed_U_opt(self) -> bool:
        return self.provenance.get("U_opt") == "computed"


def _joint_lp(instance: SpInstance, scen, sense: str, base) -> LinearProgram:
    """``sense q @ y`` over ``(x, v) in relaxed X`` and ``W y (rel) h - T x``."""
    nxv = base.n
    n1 = instance.n1
    m2, n2 = scen.W.shape
    T_full = np.zeros((m2, nxv))
    T_full[:, :n1] = scen.T
    A = np.vstack([np.hstack([base.A, np.zeros((base.m, n2))]), np.hstack([T_full, scen.W])])
    c = np.concatenate([np.zeros(nxv), scen.q])
    return LinearProgram(c, A, list(base.relations) + list(scen.relations), np.concatenate([base.b, scen.h]),
                         np.concatenate([base.lower, scen.lower]), np.concatenate([base.upper, scen.upper]), sense)


def _box_max_abs(a: float, t: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """``max |a - t @ x|`` over the box ``[lo, hi]``."""
    lo_val = a - np.sum(np.where(t > 0, t * hi, t * lo))
    hi_val = a - np.sum(np.where(t > 0, t * lo, t * hi))
    return max(abs(lo_val), abs(hi_val))


def feasibility_big_m(instance: SpInstance, lo_box, hi_box) -> list:
    """Per-scenario bound on the total row violation of ``y = clip(0)`` over the box, ``[d][s]``."""
    out = []
    for dist in instance.distributions:
        row = []
        for scen in dist.scenarios:
            y0 = np.clip(0.0, scen.lower, scen.upper)
            a = scen.h - scen.W @ y0
            row.append(float(sum(_box_max_abs(a[i], scen.T[i], lo_box, hi_box) for i in range(a.size))))
        out.append(row)
    return out


def compute_bounds(instance: SpInstance, overrides: dict | None = None, vertex_limit: int = 12) -> BoundConstants:
    """Big-M constants for the distribution-specific cuts.

    Values in ``instance.bound_overrides`` and ``overrides`` (the latter
    winning) replace computed ones; a ``None`` value asks for the computed
    constant.  Provenance is recorded per constant.
    """
    ov = dict(instance.bound_overrides)
    ov.update(overrides or {})
    ov = {k: v for k, v in ov.items() if v is not None}
    enc = build_indicator_encoding(instance)
    lo_box, hi_box = relaxed_box(instance, enc)
    if np.any(~np.isfinite(lo_box)) or np.any(~np.isfinite(hi_box)):
        if not all(k in ov for k in ("U_feas", "U_opt", "L")):
            raise UnboundedBound("first-stage region is unbounded; supply bound overrides")
    provenance = {}
    D = instance.n_distributions

    if "U_feas" in ov:
        val = ov["U_feas"]
        if np.isscalar(val):
            U_feas = [[float(val)] * len(dist.scenarios) for dist in instance.distributions]
        else:
            U_feas = [[float(v) for v in row] for row in val]
        provenance["U_feas"] = "user_supplied"
    else:
        U_feas = feasibility_big_m(instance, lo_box, hi_box)
        provenance["U_feas"] = "computed"

    base = first_stage_program(instance, enc).lp
    need_L = "L" not in ov
    need_U = "U_opt" not in ov
    L = [0.0] * D
    U_prime = [0.0] * D
    if need_L or need_U:
        for d, dist in enumerate(instance.distributions):
            for s, scen in enumerate(dist.scenarios):
                if need_L:
                    sol = solve_lp(_joint_lp(instance, scen, "min", base))
                    if sol.status is Status.UNBOUNDED:
                        raise UnboundedBound(f"recourse of distribution {dist.id} scenario {s} unbounded below")
                    # an everywhere-infeasible scenario never yields cuts
                    L[d] += scen.probability * (sol.objective if sol.optimal else math.inf)
                if need_U:
                    U_prime[d] += scen.probability * _scenario_max(instance, scen, base, lo_box, hi_box, vertex_limit)
    if need_L:
        provenance["L"] = "computed"
    else:
        L = [float(v) for v in ov["L"]]
        provenance["L"] = "user_supplied"
    finite_L = [v for v in L if math.isfinite(v)]
    min_L = min(finite_L) if finite_L else 0.0
    if need_U:
        finite_U = [u for u, l in zip(U_prime, L) if math.isfinite(l)]
        U_opt = max(0.0, (max(finite_U) if finite_U else 0.0) - min_L)
        if not math.isfinite(U_opt):
            raise UnboundedBound("second-stage maximum is unbounded; supply U_opt")
        provenance["U_opt"] = "computed"
    else:
        U_opt = float(ov["U_opt"])
        provenance["U_opt"] = "user_supplied"
    if "mu_lower" in ov:
        mu_lower = float(ov["mu_lower"])
        provenance["mu_lower"] = "user_supplied"
    else:
        mu_lower = min_L
        provenance["mu_lower"] = "computed"
    return BoundConstants(U_feas, U_opt, L, mu_lower, provenance, lo_box, hi_box)


def _scenario_max(instance, scen, base, lo_box, hi_box, vertex_limit) -> float:
    """Upper bound on the (LP-relaxed) recourse over relaxed X."""
    sol = solve_lp(_joint_lp(instance, scen, "max", base))
    if sol.optimal:
        return sol.objective
    if sol.status is Status.INFEASIBLE:
        return -math.inf
    n1 = instance.n1
    if n1 > vertex_limit:
        raise UnboundedBound("second-stage maximum is unbounded; supply U_opt")
    # the LP value function is convex in x, so its box maximum sits at a vertex
    best = -math.inf
    for corner in itertools.product(*zip(lo_box, hi_box)):
        val = solve_lp(scenario_lp(scen, np.array(corner)))
        if val.status is Status.INFEASIBLE:
            raise UnboundedBound("recourse infeasible at a box vertex; supply U_opt")
        if val.status is Status.UNBOUNDED:
            raise UnboundedRecourse("recourse unbounded below")
        best = max(best, val.objective)
    return best
