from dataclasses import replace

import numpy as np
import pytest

from ddlshaped.errors import TooManyDistributions, UnboundedLinearizationBound
from ddlshaped.extensive import build_extensive, enumeration_oracle, solve_extensive
from ddlshaped.lp import Status
from ddlshaped.lshaped import run
from ddlshaped.milp import MilpOptions, solve_milp
from ddlshaped.ppp import PppParams, build_variant1, generate_instance
from instances import box_example, segment_example, single_cell_example

OPTIMA = [(segment_example, 2.95), (lambda: segment_example(True), 3.2), (box_example, 25.0),
          (single_cell_example, 5.0)]


def test_small_example(small_example):
    ext = solve_extensive(small_example)
    assert ext.status is Status.OPTIMAL
    assert ext.objective == pytest.approx(6.4, abs=1e-7)
    assert ext.x[0] == pytest.approx(1.0, abs=1e-7) and ext.d == 0
    objective, x, d = enumeration_oracle(small_example)
    assert objective == pytest.approx(6.4, abs=1e-7) and d == 0


def test_dense_form_matches(small_example):
    form = build_extensive(small_example)
    sol = solve_milp(form.to_mip(), options=MilpOptions(mip_gap=1e-9))
    assert sol.objective == pytest.approx(6.4, abs=1e-7)


@pytest.mark.parametrize("make, optimum", OPTIMA)
def test_hand_built(make, optimum):
    inst = make()
    assert solve_extensive(inst).objective == pytest.approx(optimum, abs=1e-6)
    assert enumeration_oracle(inst).objective == pytest.approx(optimum, abs=1e-6)


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_generated_agree(variant):
    inst = generate_instance(variant, PppParams(n_facilities=2, n_levels=2, n_scenarios=5, seed=42))
    ext = solve_extensive(inst)
    oracle = enumeration_oracle(inst)
    ls = run(inst)
    scale = max(1.0, abs(oracle.objective))
    assert abs(ext.objective - oracle.objective) <= 1e-4 * scale
    assert abs(ls.objective - oracle.objective) <= 1e-4 * scale
    assert ext.reported_objective == pytest.approx(-ext.objective)


def test_fixed_cell_is_standard_program():
    inst = generate_instance(1, PppParams(n_facilities=2, n_levels=2, n_scenarios=5, seed=8))
    oracle = enumeration_oracle(inst)
    for d in range(inst.n_distributions):
        form = build_extensive(inst)
        B = form.builder
        for k, j in enumerate(form.delta_idx):
            B.lower[j] = B.upper[j] = 1.0 if k == d else 0.0
        sol = B.solve(MilpOptions(mip_gap=1e-9))
        assert sol.objective == pytest.approx(oracle.per_cell[d], rel=1e-7)


def test_without_complete_recourse():
    inst = build_variant1(PppParams(seed=1, capacity_factor=2.5), demand_equality=True)
    assert not inst.complete_recourse
    oracle = enumeration_oracle(inst)
    assert any(np.isinf(v) for v in oracle.per_cell)
    assert solve_extensive(inst).objective == pytest.approx(oracle.objective, rel=1e-7)


def test_needs_second_stage_bounds(small_example):
    with pytest.raises(UnboundedLinearizationBound):
        build_extensive(replace(small_example, y_upper=None))


def test_oracle_cap():
    inst = generate_instance(1, PppParams(n_facilities=3, n_levels=2, n_scenarios=1, seed=0))
    with pytest.raises(TooManyDistributions):
        enumeration_oracle(inst, cap=4)
