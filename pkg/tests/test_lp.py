import numpy as np
import pytest

from ddlshaped.errors import MalformedProgram
from ddlshaped.lp import EQ, GE, LE, LinearProgram, Row, Status, solve_lp, solve_phase_one
from oracles import lp_vertex_enumeration


def random_bounded_lp(rng, m=3, n=5):
    A = rng.integers(-5, 6, size=(m, n)).astype(float)
    x0 = rng.uniform(0, 4, size=n)
    rel = list(rng.choice([LE, GE, EQ], size=m, p=[0.45, 0.45, 0.1]))
    b = A @ x0
    # slack on inequalities keeps most programs feasible without making them trivial
    for i, r in enumerate(rel):
        if r == LE:
            b[i] += rng.uniform(0, 3)
        elif r == GE:
            b[i] -= rng.uniform(0, 3)
    if rng.random() < 0.1:
        b[0] += 100.0 if rel[0] != LE else -100.0
    b = np.round(b, 6)
    c = rng.integers(-6, 7, size=n).astype(float)
    lo = np.zeros(n)
    hi = rng.integers(3, 7, size=n).astype(float)
    return c, A, rel, b, lo, hi


def test_textbook_lp():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
    lp = LinearProgram([3, 5], [[1, 0], [0, 2], [3, 2]], [LE] * 3, [4, 12, 18], sense="max")
    sol = solve_lp(lp)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(36)
    np.testing.assert_allclose(sol.primal, [2, 6], atol=1e-9)


def test_duals_are_objective_derivatives():
    lp = LinearProgram([3, 5], [[1, 0], [0, 2], [3, 2]], [LE] * 3, [4, 12, 18], sense="max")
    sol = solve_lp(lp)
    for i in range(3):
        b = lp.b.copy()
        b[i] += 1e-4
        bumped = solve_lp(LinearProgram(lp.c, lp.A, lp.relations, b, sense="max"))
        assert (bumped.objective - sol.objective) / 1e-4 == pytest.approx(sol.dual[i], abs=1e-6)


def test_strong_duality_with_bound_term():
    rng = np.random.default_rng(3)
    for _ in range(50):
        c, A, rel, b, lo, hi = random_bounded_lp(rng)
        sol = solve_lp(LinearProgram(c, A, rel, b, lo, hi))
        if sol.optimal:
            assert float(sol.dual @ b) + sol.bound_term(lo, hi) == pytest.approx(sol.objective, abs=1e-7)


def test_infeasible_and_unbounded():
    infeas = solve_lp(LinearProgram([1], [[1], [1]], [LE, GE], [1, 2]))
    assert infeas.status is Status.INFEASIBLE
    unb = solve_lp(LinearProgram([-1, 0], [[1, -1]], [LE], [1]))
    assert unb.status is Status.UNBOUNDED


def test_phase_one_certificate():
    sol = solve_phase_one([[1.0]], [-1.0], [EQ])
    assert sol.objective == pytest.approx(1.0)
    assert abs(sol.dual[0]) <= 1 + 1e-12


def test_malformed_inputs():
    with pytest.raises(MalformedProgram):
        LinearProgram([1, 2], [[1]], [LE], [1])
    with pytest.raises(MalformedProgram):
        LinearProgram([1], [[1]], ["<"], [1])
    with pytest.raises(MalformedProgram):
        LinearProgram([1], [[1]], [LE], [1], lower=[2], upper=[1])


def test_row_residual():
    r = Row(np.array([1.0, 1.0]), GE, 3.0)
    assert r.residual(np.array([1.0, 1.0])) == pytest.approx(1.0)


def test_deterministic_output():
    rng = np.random.default_rng(11)
    c, A, rel, b, lo, hi = random_bounded_lp(rng)
    a = solve_lp(LinearProgram(c, A, rel, b, lo, hi))
    z = solve_lp(LinearProgram(c, A, rel, b, lo, hi))
    assert a.status == z.status and np.array_equal(a.primal, z.primal)


def random_lp_agreement(n_programs: int, seed: int = 2024):
    """Count of random bounded LPs whose objective matches vertex enumeration within 1e-7."""
    rng = np.random.default_rng(seed)
    agree, worst = 0, 0.0
    for _ in range(n_programs):
        c, A, rel, b, lo, hi = random_bounded_lp(rng)
        ref = lp_vertex_enumeration(c, A, rel, b, lo, hi)
        sol = solve_lp(LinearProgram(c, A, rel, b, lo, hi))
        if ref is None:
            ok = sol.status is Status.INFEASIBLE
        else:
            err = abs(sol.objective - ref) if sol.optimal else np.inf
            worst = max(worst, err)
            ok = err <= 1e-7
        agree += ok
    return agree, worst


def test_random_lps_match_vertex_enumeration_sample():
    agree, worst = random_lp_agreement(100, seed=5)
    assert agree == 100, worst
