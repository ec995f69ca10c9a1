import json

import numpy as np
import pytest

from ddlshaped.errors import InconsistentDimensions, ParseError, SchemaViolation
from ddlshaped.instance_io import dumps, instance_to_dict, load_instance, loads, save_instance
from ddlshaped.lshaped import RunConfig, run
from ddlshaped.ppp import PppParams, generate_instance
from instances import box_example, segment_example


def assert_same_instance(a, b):
    fa, fb = a.first_stage, b.first_stage
    for name in ("c", "A", "b", "lower", "upper"):
        np.testing.assert_array_equal(getattr(fa, name), getattr(fb, name))
    assert fa.relations == fb.relations and fa.domains == fb.domains and fa.names == fb.names
    assert type(a.partition) is type(b.partition)
    assert a.stage2_kind == b.stage2_kind and a.recourse_sense == b.recourse_sense
    assert a.rhs_only_uncertainty == b.rhs_only_uncertainty and a.complete_recourse == b.complete_recourse
    np.testing.assert_array_equal(a.y_upper, b.y_upper)
    assert len(a.distributions) == len(b.distributions)
    for da, db in zip(a.distributions, b.distributions):
        assert da.id == db.id and len(da.scenarios) == len(db.scenarios)
        for sa, sb in zip(da.scenarios, db.scenarios):
            assert sa.probability == sb.probability
            for name in ("q", "W", "T", "h", "lower", "upper"):
                np.testing.assert_array_equal(getattr(sa, name), getattr(sb, name))
            assert sa.relations == sb.relations and sa.domains == sb.domains


def test_small_example_round_trip_trajectory(small_example, tmp_path):
    path = tmp_path / "example.json"
    save_instance(small_example, path)
    again = load_instance(path)
    assert_same_instance(small_example, again)
    assert again.bound_overrides == small_example.bound_overrides
    r1, r2 = run(small_example), run(again)
    assert [r.x.tolist() for r in r1.iterations] == [r.x.tolist() for r in r2.iterations]
    assert [c.key() for c in r1.cuts] == [c.key() for c in r2.cuts]


@pytest.mark.parametrize("make", [segment_example, box_example])
def test_partitions_round_trip(make):
    inst = make()
    again = loads(dumps(inst))
    assert_same_instance(inst, again)
    assert dumps(again) == dumps(inst)


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_generated_round_trip(variant):
    inst = generate_instance(variant, PppParams(n_facilities=2, n_levels=2, n_scenarios=5, seed=4))
    again = loads(dumps(inst))
    assert_same_instance(inst, again)
    assert again.monotonicity is not None
    np.testing.assert_array_equal(again.monotonicity.T, inst.monotonicity.T)
    assert dumps(again) == dumps(inst)


def test_probabilities_not_summing_to_one(small_example):
    doc = instance_to_dict(small_example)
    doc["distributions"][0]["scenarios"][0]["probability"] = 0.6
    with pytest.raises(SchemaViolation):
        loads(json.dumps(doc))


def test_bad_json_reports_line():
    with pytest.raises(ParseError, match="line 3"):
        loads('{\n "name": "x",\n "firstStage": ,\n}')


def test_schema_error_reports_path(small_example):
    doc = instance_to_dict(small_example)
    doc["firstStage"]["domains"] = ["real"]
    with pytest.raises(SchemaViolation, match=r"\$\.firstStage\.domains\[0\]"):
        loads(json.dumps(doc))


def test_dimension_mismatch(small_example):
    doc = instance_to_dict(small_example)
    doc["secondStageTemplate"]["q"] = [1.0]
    with pytest.raises(InconsistentDimensions):
        loads(json.dumps(doc))


def test_infinities_written_as_strings(small_example):
    text = dumps(small_example)
    assert "Infinity" not in text and "NaN" not in text
    doc = json.loads(text)
    assert "inf" in json.dumps(doc["secondStageTemplate"]["upper"])
