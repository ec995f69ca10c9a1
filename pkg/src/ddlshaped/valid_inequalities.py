"""Optimality cuts that hold whatever cell the first-stage point falls in.

Three families, all of the form ``mu >= a + g @ x`` with no activation
term:

``mccormick``
    Sum over every distribution and scenario of the LP relaxation of the
    recourse weighted by a cell indicator, the indicator-times-``y``
    products replaced by their McCormick envelope (needs ``yUpper``).
``jensen``
    The same relaxation, one problem per distribution at its expected data
    (needs ``q`` and ``W`` deterministic so the recourse is convex in the
    data).
``envelope``
    One recourse LP at a componentwise extreme of the expected data chosen
    with the declared monotonicity directions.
"""

from __future__ import annotations

import numpy as np

from .cuts import Cut, CutKind
from .errors import ConvexityFlagMissing, MissingY, MonotonicityFlagMissing
from .lp import GE, LE, LinearProgram, solve_lp
from .model import SpInstance


def _mccormick_value(q, W, T, h, relations, lower, upper, Y, x, fix_delta: bool):
    """Value and x-subgradient of the McCormick relaxation over ``[y, tau, delta]``.

    Only the side of the envelope that the cost pushes against is written;
    the other side never binds at an optimum.
    """
    m2, n2 = W.shape
    pos = np.flatnonzero(q > 0)
    neg = np.flatnonzero(q < 0)
    k = pos.size + neg.size
    # tau columns exist only for nonzero costs
    A1 = np.hstack([W, np.zeros((m2, k + 1))])
    rows, rel, b = [A1], list(relations), [h - T @ x]
    for t, j in enumerate(np.concatenate([pos, neg])):
        ty = np.zeros(n2 + k + 1)
        ty[j], ty[n2 + t], ty[-1] = -1.0, 1.0, -Y[j]
        if q[j] > 0:
            rows.append(ty[None])                       # tau - y - Y delta >= -Y
            rel.append(GE)
            b.append([-Y[j]])
        else:
            r1 = np.zeros(n2 + k + 1)
            r1[j], r1[n2 + t] = -1.0, 1.0              # tau - y <= 0
            r2 = np.zeros(n2 + k + 1)
            r2[n2 + t], r2[-1] = 1.0, -Y[j]            # tau - Y delta <= 0
            rows += [r1[None], r2[None]]
            rel += [LE, LE]
            b.append([0.0, 0.0])
    A = np.vstack(rows)
    b = np.concatenate(b)
    c = np.concatenate([np.zeros(n2), q[pos], q[neg], [0.0]])
    lo = np.concatenate([lower, np.zeros(k), [1.0 if fix_delta else 0.0]])
    hi = np.concatenate([upper, np.full(k, np.inf), [1.0]])
    sol = solve_lp(LinearProgram(c, A, rel, b, lo, hi))
    if not sol.optimal:
        return None
    return sol.objective, -T.T @ sol.dual[:m2]


def _as_cut(value: float, grad: np.ndarray, x_v: np.ndarray, family: str) -> Cut:
    intercept = value - float(grad @ x_v)
    return Cut(CutKind.DIST_IND, None, -grad, 1.0, intercept, x_v=x_v.copy(), family=family,
               target_value=value)


def _require_y(instance: SpInstance) -> np.ndarray:
    if instance.y_upper is None:
        raise MissingY("the McCormick relaxation needs an upper bound on every second-stage variable")
    return instance.y_upper


def gen_distind_mccormick_cut(instance: SpInstance, x_v) -> Cut | None:
    """One relaxation per (distribution, scenario); ``None`` if one is infeasible at ``x_v``."""
    Y = _require_y(instance)
    x_v = np.asarray(x_v, float)
    fix = instance.n_distributions == 1
    value, grad = 0.0, np.zeros(instance.n1)
    for _, _, scen in instance.scenarios():
        out = _mccormick_value(scen.q, scen.W, scen.T, scen.h, scen.relations, scen.lower, scen.upper,
                               Y, x_v, fix)
        if out is None:
            return None
        value += scen.probability * out[0]
        grad += scen.probability * out[1]
    return _as_cut(value, grad, x_v, "mccormick")


def expected_data(dist):
    p = dist.probabilities
    h = sum(pi * s.h for pi, s in zip(p, dist.scenarios))
    T = sum(pi * s.T for pi, s in zip(p, dist.scenarios))
    return h, T


def gen_distind_jensen_cut(instance: SpInstance, x_v) -> Cut | None:
    if not instance.rhs_only_uncertainty:
        raise ConvexityFlagMissing("the instance is not flagged as having deterministic q and W")
    Y = _require_y(instance)
    x_v = np.asarray(x_v, float)
    fix = instance.n_distributions == 1
    value, grad = 0.0, np.zeros(instance.n1)
    for dist in instance.distributions:
        s0 = dist.scenarios[0]
        h, T = expected_data(dist)
        out = _mccormick_value(s0.q, s0.W, T, h, s0.relations, s0.lower, s0.upper, Y, x_v, fix)
        if out is None:
            return None
        value += out[0]
        grad += out[1]
    return _as_cut(value, grad, x_v, "jensen")


def envelope_data(instance: SpInstance):
    """Componentwise extreme of the expected data that bounds every cell from below."""
    if not instance.rhs_only_uncertainty:
        raise ConvexityFlagMissing("the instance is not flagged as having deterministic q and W")
    if instance.monotonicity is None:
        raise MonotonicityFlagMissing("monotonicity directions of the recourse are not declared")
    means = [expected_data(dist) for dist in instance.distributions]
    H = np.array([m[0] for m in means])
    Ts = np.array([m[1] for m in means])
    mono = instance.monotonicity
    # non-decreasing entries take the smallest mean, non-increasing the largest
    h_hat = np.where(mono.h < 0, H.max(axis=0), H.min(axis=0))
    T_hat = np.where(mono.T < 0, Ts.max(axis=0), Ts.min(axis=0))
    return h_hat, T_hat


def gen_distind_envelope_cut(instance: SpInstance, x_v) -> Cut | None:
    h_hat, T_hat = envelope_data(instance)
    x_v = np.asarray(x_v, float)
    s0 = instance.distributions[0].scenarios[0]
    sol = solve_lp(LinearProgram(s0.q, s0.W, s0.relations, h_hat - T_hat @ x_v, s0.lower, s0.upper))
    if not sol.optimal:
        return None
    kappa = sol.bound_term(s0.lower, s0.upper)
    grad = -T_hat.T @ sol.dual
    intercept = float(sol.dual @ h_hat) + kappa
    return Cut(CutKind.DIST_IND, None, -grad, 1.0, intercept, x_v=x_v.copy(), family="envelope",
               target_value=sol.objective)


_FAMILIES = {
    "mccormick": gen_distind_mccormick_cut,
    "jensen": gen_distind_jensen_cut,
    "envelope": gen_distind_envelope_cut,
}


def generate_distind_cut(instance: SpInstance, family: str, x_v) -> Cut | None:
    return _FAMILIES[family](instance, x_v)
