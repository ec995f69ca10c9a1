from dataclasses import replace

import numpy as np
import pytest

from ddlshaped.errors import InfeasibleBatchLevels
from ddlshaped.extensive import enumeration_oracle
from ddlshaped.instance_io import dumps
from ddlshaped.lshaped import run
from ddlshaped.model import identify_distribution
from ddlshaped.ppp import (
    PppParams,
    build_variant1,
    build_variant2,
    build_variant3,
    corpus_specs,
    generate_data,
    generate_instance,
    level_bands,
    read_manifest,
    sample_first_stage,
    write_manifest,
    yield_sd,
)
from ddlshaped.recourse import evaluate_recourse

SMALL = PppParams(n_facilities=2, n_levels=2, n_scenarios=5, seed=42)


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_deterministic(variant):
    assert dumps(generate_instance(variant, SMALL)) == dumps(generate_instance(variant, SMALL))
    assert dumps(generate_instance(variant, SMALL)) != dumps(generate_instance(variant, replace(SMALL, seed=43)))


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_yields_in_range(variant):
    data = generate_data(variant, PppParams(n_facilities=3, n_levels=3, n_scenarios=10, seed=1))
    assert data.yields.min() >= 0.25 and data.yields.max() <= 1.0
    assert data.demand.min() >= 0
    assert data.O < data.P


def test_distribution_counts():
    inst = generate_instance(1, PppParams(n_facilities=3, n_levels=5, n_scenarios=2, seed=0))
    assert inst.n_distributions == 125 and inst.n_scenarios == 250
    assert generate_instance(1, SMALL).n_distributions == 4


def test_yield_spread_shrinks_with_level():
    params = PppParams(n_facilities=1, n_levels=3, n_scenarios=400, seed=5)
    sds = [yield_sd(params, l) for l in range(3)]
    assert sds[0] > sds[1] > sds[2]
    data = generate_data(1, params)
    spread = [data.yields[data.cell_levels[:, 0] == l].std() for l in range(3)]
    assert spread[0] > spread[1] > spread[2]


def test_level_bands():
    lo, hi = level_bands(150.0, 3)
    assert lo[0] == 0
    assert np.all(lo[1:] > hi[:-1])
    assert hi[-1] == 150.0


def test_params_validation():
    with pytest.raises(ValueError):
        PppParams(n_levels=1).validate()
    with pytest.raises(ValueError):
        PppParams(salvage_range=(15.0, 130.0)).validate()


def test_zero_production_has_zero_recourse():
    inst = generate_instance(1, SMALL)
    F, L = 2, 2
    x = np.zeros(inst.n1)
    x[F + np.arange(F) * L] = 1.0  # lowest level everywhere
    d = identify_distribution(inst, x)
    ev = evaluate_recourse(inst, x, d)
    assert all(o.value == 0 for o in ev.scenarios)


def test_profit_sign():
    inst = generate_instance(1, SMALL)
    r = run(inst)
    assert inst.recourse_sense == "max"
    assert r.reported_objective > 0 and r.reported_objective == pytest.approx(-r.objective)


def test_variant2_without_transport_is_variant1():
    d1 = generate_data(1, SMALL)
    d2 = replace(d1, variant=2, demand=d1.demand[..., None], distance=d1.distance[:, :1])
    v1 = enumeration_oracle(build_variant1(data=d1))
    v2 = enumeration_oracle(build_variant2(data=d2, H=np.zeros((2, 1))))
    assert v2.objective == pytest.approx(v1.objective, rel=1e-7)


def test_variant2_zero_demand_sells_at_salvage():
    data = generate_data(2, SMALL)
    data = replace(data, demand=np.zeros_like(data.demand))
    inst = build_variant2(data=data)
    rng = np.random.default_rng(0)
    for x in sample_first_stage(inst, rng, 5):
        d = identify_distribution(inst, x)
        ev = evaluate_recourse(inst, x, d)
        for scen, out in zip(inst.distributions[d].scenarios, ev.scenarios):
            produced = -scen.T[:2] @ x
            assert out.value == pytest.approx(-data.O * produced.sum(), rel=1e-9, abs=1e-9)


def test_variant3_relaxation_is_variant2_with_per_unit_vehicle_cost():
    data3 = generate_data(3, replace(SMALL, vehicle_capacity=1000.0))
    inst3 = build_variant3(data=data3)
    data2 = replace(data3, variant=2)
    inst2 = build_variant2(data=data2, H=data3.G / data3.params.vehicle_capacity)
    F, B, L = 2, data3.params.n_batches, 2
    rng = np.random.default_rng(1)
    for x3 in sample_first_stage(inst3, rng, 8):
        amounts = (x3[:F * B].reshape(F, B) * data3.batches).sum(axis=1)
        x2 = np.concatenate([amounts, x3[F * B:]])
        d = identify_distribution(inst3, x3)
        assert identify_distribution(inst2, x2) == d
        ev3 = evaluate_recourse(inst3, x3, d, "highs")
        ev2 = evaluate_recourse(inst2, x2, d)
        assert ev3.lp_value == pytest.approx(ev2.value, rel=1e-7, abs=1e-7)
        assert ev3.value >= ev3.lp_value - 1e-7


def test_variant3_zero_batches():
    data = generate_data(3, SMALL)
    inst = build_variant3(data=replace(data, batches=np.zeros_like(data.batches)))
    assert run(inst).reported_objective == pytest.approx(0.0, abs=1e-9)


def test_variant3_batches_outside_levels():
    data = generate_data(3, SMALL)
    gap = (data.level_upper[:, :1] + data.level_lower[:, 1:2]) / 2
    with pytest.raises(InfeasibleBatchLevels):
        build_variant3(data=replace(data, batches=np.repeat(gap, data.batches.shape[1], axis=1)))


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_sampled_points_are_feasible(variant):
    inst = generate_instance(variant, SMALL)
    for x in sample_first_stage(inst, np.random.default_rng(2), 20):
        assert inst.first_stage.is_feasible(x)
        identify_distribution(inst, x)


def test_corpus_specs():
    specs = corpus_specs()
    assert len(specs) == 60
    assert len({s[0] for s in specs}) == 60 and len({s[2].seed for s in specs}) == 60
    for variant in (1, 2, 3):
        fs = [p.n_facilities for _, v, p in specs if v == variant]
        assert fs.count(2) == 10 and fs.count(3) == 10
    assert all(p.n_levels == 2 and p.n_scenarios == 5 for _, _, p in specs)


def test_manifest_round_trip(tmp_path):
    rows = [{"instance_id": "v1-00", "variant": 1, "F": 2, "L": 2, "S": 5, "D": 4, "seed": 1100,
             "path": "v1-00.json"}]
    write_manifest(rows, tmp_path / "m.csv")
    assert read_manifest(tmp_path / "m.csv") == rows
