import numpy as np
import pytest

from ddlshaped.errors import MalformedProgram
from ddlshaped.lp import EQ, GE, LE, LinearProgram, Row, Status
from ddlshaped.milp import BINARY, CONTINUOUS, INTEGER, MilpOptions, MixedIntegerProgram, NodeInfo, solve_milp
from oracles import binary_enumeration


def random_binary_program(rng, n=None):
    n = n or int(rng.integers(3, 13))
    m = int(rng.integers(1, 5))
    A = rng.integers(-3, 8, size=(m, n)).astype(float)
    rel = list(rng.choice([LE, GE], size=m, p=[0.7, 0.3]))
    b = np.array([rng.integers(2, 3 * n) if r == LE else rng.integers(0, n) for r in rel], float)
    c = rng.integers(-10, 11, size=n).astype(float)
    return c, A, rel, b


def test_knapsack_example():
    # max 5a + 4b + 3c, 2a + 3b + c <= 4
    lp = LinearProgram([5, 4, 3], [[2, 3, 1]], [LE], [4], upper=[1, 1, 1], sense="max")
    sol = solve_milp(MixedIntegerProgram(lp, [BINARY] * 3))
    assert sol.objective == pytest.approx(binary_enumeration([5, 4, 3], [[2, 3, 1]], [LE], [4], "max"))
    assert sol.objective == pytest.approx(8)


def test_general_integer_and_continuous():
    # min -x - y, x integer, 2x + 2y <= 7, y <= 1.2 continuous
    lp = LinearProgram([-1, -1], [[2, 2]], [LE], [7], upper=[10, 1.2])
    sol = solve_milp(MixedIntegerProgram(lp, [INTEGER, CONTINUOUS]))
    assert sol.objective == pytest.approx(-3.5)
    assert sol.incumbent[0] == pytest.approx(round(sol.incumbent[0]))


def test_infeasible_program():
    lp = LinearProgram([1, 1], [[1, 1]], [EQ], [1.5], upper=[1, 1])
    assert solve_milp(MixedIntegerProgram(lp, [BINARY, BINARY])).status is Status.INFEASIBLE


def test_binary_bounds_validated():
    with pytest.raises(MalformedProgram):
        MixedIntegerProgram(LinearProgram([1], [[1]], [LE], [3], upper=[2]), [BINARY])


def test_lazy_callback_cuts_off_points():
    # without the lazy row the optimum is (1, 1); the callback forbids x0 + x1 = 2
    lp = LinearProgram([-1, -1], np.zeros((0, 2)), [], [], upper=[1, 1])
    seen = []

    def cb(x, info: NodeInfo):
        seen.append(info)
        return [Row(np.array([1.0, 1.0]), LE, 1.0)] if x.sum() > 1.5 else []

    sol = solve_milp(MixedIntegerProgram(lp, [BINARY] * 2), cb)
    assert sol.objective == pytest.approx(-1)
    assert sol.cuts_added >= 1
    assert all(isinstance(i, NodeInfo) for i in seen)


def test_highs_backend_agrees():
    rng = np.random.default_rng(9)
    for _ in range(20):
        c, A, rel, b = random_binary_program(rng)
        mip = MixedIntegerProgram(LinearProgram(c, A, rel, b, upper=np.ones(c.size)), [BINARY] * c.size)
        a = solve_milp(mip, options=MilpOptions(mip_gap=1e-9))
        z = solve_milp(mip, options=MilpOptions(mip_gap=1e-9), backend="highs")
        assert a.status == z.status
        if a.status is Status.OPTIMAL:
            assert a.objective == pytest.approx(z.objective, abs=1e-7)


def random_milp_agreement(n_programs: int, seed: int = 77):
    rng = np.random.default_rng(seed)
    agree = 0
    for _ in range(n_programs):
        c, A, rel, b = random_binary_program(rng)
        ref = binary_enumeration(c, A, rel, b)
        mip = MixedIntegerProgram(LinearProgram(c, A, rel, b, upper=np.ones(c.size)), [BINARY] * c.size)
        sol = solve_milp(mip, options=MilpOptions(mip_gap=1e-9))
        if ref is None:
            agree += sol.status is Status.INFEASIBLE
        else:
            agree += sol.status is Status.OPTIMAL and abs(sol.objective - ref) <= 1e-7
    return agree


def test_random_binary_programs_sample():
    assert random_milp_agreement(40, seed=1) == 40
