"""JSON reading and writing of :class:`~ddlshaped.model.SpInstance`.

Layout of a document (``format`` = ``ddlshaped-instance/1``)::

    name, stage2Kind, recourseSense
    firstStage            c, rows[{coef, rel, rhs}], domains, lower, upper, names
    partition             null | {kind: ExplicitDelta, cells[{lower, upper}]}
                               | {kind: BoxConditions, forms, intervals, cellMap}
                               | {kind: BinarySegments, segments, conditions, cellMap}
    secondStageTemplate   q, W, T, h, relations, domains, lower, upper, yUpper
    distributions         [{id, scenarios[{probability, h, q?, W?, T?, TEntries?, lower?, upper?}]}]
    flags                 {rhsOnlyUncertainty, completeRecourse, monotonicity{h, T}}
    boundOverrides        {U_opt, U_feas, L, mu_lower}
    meta                  free-form

Scenario fields left out are taken from the template; ``TEntries`` is a
sparse patch ``[[row, col, value], ...]`` applied on top of the template
``T``.  Infinite numbers are written as the strings ``"inf"`` and ``"-inf"``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .errors import InconsistentDimensions, ParseError, SchemaViolation
from .model import (
    BinarySegments,
    BoxConditions,
    Condition,
    Distribution,
    ExplicitDelta,
    FirstStage,
    Monotonicity,
    ScenarioData,
    SpInstance,
)

FORMAT = "ddlshaped-instance/1"

_num = {"oneOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}]}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}
_rel = {"enum": ["<=", "=", ">="]}
_dom = {"enum": ["continuous", "integer", "binary"]}

SCHEMA = {
    "type": "object",
    "required": ["firstStage", "secondStageTemplate", "distributions"],
    "properties": {
        "format": {"const": FORMAT},
        "name": {"type": "string"},
        "stage2Kind": {"enum": ["LinearProgram", "MixedInteger"]},
        "recourseSense": {"enum": ["min", "max"]},
        "firstStage": {
            "type": "object",
            "required": ["c"],
            "properties": {
                "c": _vec,
                "rows": {"type": "array", "items": {
                    "type": "object", "required": ["coef", "rel", "rhs"],
                    "properties": {"coef": _vec, "rel": _rel, "rhs": {"type": "number"}}}},
                "domains": {"type": "array", "items": _dom},
                "lower": _vec,
                "upper": _vec,
                "names": {"type": "array", "items": {"type": "string"}},
            },
        },
        "partition": {"oneOf": [
            {"type": "null"},
            {"type": "object", "required": ["kind", "cells"],
             "properties": {"kind": {"const": "ExplicitDelta"},
                            "cells": {"type": "array", "items": {
                                "type": "object", "required": ["lower", "upper"],
                                "properties": {"lower": _vec, "upper": _vec}}}}},
            {"type": "object", "required": ["kind", "forms", "intervals", "cellMap"],
             "properties": {"kind": {"const": "BoxConditions"}, "forms": _mat,
                            "intervals": {"type": "array", "items": _mat},
                            "cellMap": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}}}},
            {"type": "object", "required": ["kind", "segments", "conditions", "cellMap"],
             "properties": {"kind": {"const": "BinarySegments"},
                            "segments": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                            "conditions": {"type": "array", "items": {"type": "array", "items": {
                                "type": "object", "required": ["coef", "lower", "upper"],
                                "properties": {"coef": _vec, "lower": _num, "upper": _num}}}},
                            "cellMap": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}}}},
        ]},
        "secondStageTemplate": {
            "type": "object",
            "required": ["q", "W", "T", "h"],
            "properties": {"q": _vec, "W": _mat, "T": _mat, "h": _vec,
                           "relations": {"type": "array", "items": _rel},
                           "domains": {"type": "array", "items": _dom},
                           "lower": _vec, "upper": _vec, "yUpper": _vec},
        },
        "distributions": {"type": "array", "minItems": 1, "items": {
            "type": "object", "required": ["id", "scenarios"],
            "properties": {"id": {"type": "string"}, "scenarios": {"type": "array", "minItems": 1, "items": {
                "type": "object", "required": ["probability"],
                "properties": {"probability": {"type": "number"}, "h": _vec, "q": _vec, "W": _mat, "T": _mat,
                               "TEntries": {"type": "array", "items": {
                                   "type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}}},
                               "lower": _vec, "upper": _vec}}}}}},
        "flags": {"type": "object", "properties": {
            "rhsOnlyUncertainty": {"type": "boolean"},
            "completeRecourse": {"type": "boolean"},
            "monotonicity": {"type": "object", "required": ["h", "T"], "properties": {"h": _vec, "T": _mat}}}},
        "boundOverrides": {"type": "object", "properties": {
            "U_opt": _num, "U_feas": {"oneOf": [_num, _mat]}, "L": _vec, "mu_lower": _num}},
        "meta": {"type": "object"},
    },
}


def _f(v) -> float:
    if isinstance(v, str):
        return math.inf if v == "inf" else -math.inf
    return float(v)


def _arr(v, ndim=1) -> np.ndarray:
    if ndim == 1:
        return np.array([_f(a) for a in v], dtype=float)
    rows = [[_f(a) for a in r] for r in v]
    if rows and len({len(r) for r in rows}) != 1:
        raise InconsistentDimensions("ragged matrix")
    return np.array(rows, dtype=float).reshape(len(rows), len(rows[0]) if rows else 0)


def _num_out(v: float):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == int(v) and abs(v) < 2**53:
        return int(v) if not (v == 0 and math.copysign(1, v) < 0) else 0
    return v


def _vec_out(a) -> list:
    return [_num_out(v) for v in np.asarray(a, float).ravel()]


def _mat_out(a) -> list:
    return [_vec_out(r) for r in np.asarray(a, float)]


def _json_path(err: jsonschema.ValidationError) -> str:
    path = "$"
    for p in err.absolute_path:
        path += f"[{p}]" if isinstance(p, int) else f".{p}"
    return path


def instance_from_dict(doc: dict) -> SpInstance:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        best = jsonschema.exceptions.best_match([exc]) or exc
        raise SchemaViolation(f"{_json_path(best)}: {best.message}") from None

    fs_doc = doc["firstStage"]
    c = _arr(fs_doc["c"])
    n1 = c.size
    rows = fs_doc.get("rows", [])
    A = np.array([_arr(r["coef"]) for r in rows], dtype=float).reshape(len(rows), -1) if rows else np.zeros((0, n1))
    if A.shape[1] != n1:
        raise InconsistentDimensions(f"$.firstStage.rows: coefficient length {A.shape[1]} differs from {n1}")
    fs = FirstStage(
        c=c,
        A=A,
        relations=tuple(r["rel"] for r in rows),
        b=np.array([float(r["rhs"]) for r in rows]),
        domains=tuple(fs_doc.get("domains", ["continuous"] * n1)),
        lower=_arr(fs_doc["lower"]) if "lower" in fs_doc else np.zeros(n1),
        upper=_arr(fs_doc["upper"]) if "upper" in fs_doc else np.full(n1, np.inf),
        names=tuple(fs_doc.get("names", ())),
    )

    tpl = doc["secondStageTemplate"]
    q0, W0, T0, h0 = _arr(tpl["q"]), _arr(tpl["W"], 2), _arr(tpl["T"], 2), _arr(tpl["h"])
    n2, m2 = q0.size, h0.size
    if W0.shape != (m2, n2) or T0.shape != (m2, n1):
        raise InconsistentDimensions(
            f"$.secondStageTemplate: W is {W0.shape}, T is {T0.shape}, expected ({m2}, {n2}) and ({m2}, {n1})")
    rel2 = tuple(tpl.get("relations", ["="] * m2))
    dom2 = tuple(tpl.get("domains", ["continuous"] * n2))
    lo2 = _arr(tpl["lower"]) if "lower" in tpl else np.zeros(n2)
    hi2 = _arr(tpl["upper"]) if "upper" in tpl else np.full(n2, np.inf)

    dists = []
    for k, dd in enumerate(doc["distributions"]):
        scens = []
        for s, sd in enumerate(dd["scenarios"]):
            T = _arr(sd["T"], 2) if "T" in sd else T0.copy()
            for i, j, v in sd.get("TEntries", []):
                if not (0 <= int(i) < m2 and 0 <= int(j) < n1):
                    raise InconsistentDimensions(f"$.distributions[{k}].scenarios[{s}].TEntries: index out of range")
                T[int(i), int(j)] = float(v)
            scens.append(ScenarioData(
                probability=float(sd["probability"]),
                q=_arr(sd["q"]) if "q" in sd else q0,
                W=_arr(sd["W"], 2) if "W" in sd else W0,
                T=T,
                h=_arr(sd["h"]) if "h" in sd else h0,
                relations=rel2,
                domains=dom2,
                lower=_arr(sd["lower"]) if "lower" in sd else lo2,
                upper=_arr(sd["upper"]) if "upper" in sd else hi2,
            ))
        dists.append(Distribution(dd["id"], tuple(scens)))

    part = _partition_from_dict(doc.get("partition"))
    flags = doc.get("flags", {})
    mono = None
    if "monotonicity" in flags:
        mono = Monotonicity(_arr(flags["monotonicity"]["h"]), _arr(flags["monotonicity"]["T"], 2))
    overrides = {}
    for key, val in doc.get("boundOverrides", {}).items():
        if key == "U_feas" and isinstance(val, list):
            overrides[key] = [[_f(v) for v in row] for row in val]
        elif key == "L":
            overrides[key] = [_f(v) for v in val]
        else:
            overrides[key] = _f(val)
    return SpInstance(
        first_stage=fs,
        partition=part,
        distributions=tuple(dists),
        stage2_kind=doc.get("stage2Kind", "LinearProgram"),
        recourse_sense=doc.get("recourseSense", "min"),
        name=doc.get("name", ""),
        y_upper=_arr(tpl["yUpper"]) if "yUpper" in tpl else None,
        rhs_only_uncertainty=bool(flags.get("rhsOnlyUncertainty", False)),
        complete_recourse=bool(flags.get("completeRecourse", False)),
        monotonicity=mono,
        bound_overrides=overrides,
        meta=dict(doc.get("meta", {})),
    )


def _partition_from_dict(p):
    if p is None:
        return None
    if p["kind"] == "ExplicitDelta":
        lo = np.array([_arr(c["lower"]) for c in p["cells"]])
        hi = np.array([_arr(c["upper"]) for c in p["cells"]])
        return ExplicitDelta(lo, hi)
    if p["kind"] == "BoxConditions":
        forms = _arr(p["forms"], 2)
        intervals = np.array([_arr(iv, 2) for iv in p["intervals"]], dtype=float)
        if intervals.ndim != 3 or intervals.shape[2] != 2:
            raise InconsistentDimensions("$.partition.intervals: expected m lists of J [lower, upper] pairs")
        return BoxConditions(forms, intervals, np.array(p["cellMap"], dtype=int))
    segments = tuple(tuple(int(i) for i in seg) for seg in p["segments"])
    conditions = tuple(
        tuple(Condition(tuple(_f(v) for v in c["coef"]), _f(c["lower"]), _f(c["upper"])) for c in conds)
        for conds in p["conditions"])
    cell_map = np.array(p["cellMap"], dtype=int).reshape(-1, len(segments))
    return BinarySegments(segments, conditions, cell_map)


def instance_to_dict(inst: SpInstance) -> dict:
    fs = inst.first_stage
    first = inst.distributions[0].scenarios[0]
    doc = {
        "format": FORMAT,
        "name": inst.name,
        "stage2Kind": inst.stage2_kind,
        "recourseSense": inst.recourse_sense,
        "firstStage": {
            "c": _vec_out(fs.c),
            "rows": [{"coef": _vec_out(fs.A[i]), "rel": fs.relations[i], "rhs": _num_out(fs.b[i])}
                     for i in range(fs.b.size)],
            "domains": list(fs.domains),
            "lower": _vec_out(fs.lower),
            "upper": _vec_out(fs.upper),
        },
    }
    if fs.names:
        doc["firstStage"]["names"] = list(fs.names)
    doc["partition"] = _partition_to_dict(inst.partition)
    tpl = {
        "q": _vec_out(first.q), "W": _mat_out(first.W), "T": _mat_out(first.T), "h": _vec_out(first.h),
        "relations": list(first.relations), "domains": list(first.domains),
        "lower": _vec_out(first.lower), "upper": _vec_out(first.upper),
    }
    if inst.y_upper is not None:
        tpl["yUpper"] = _vec_out(inst.y_upper)
    doc["secondStageTemplate"] = tpl
    dists = []
    for dist in inst.distributions:
        scens = []
        for s in dist.scenarios:
            sd = {"probability": _num_out(s.probability), "h": _vec_out(s.h)}
            if not np.array_equal(s.q, first.q):
                sd["q"] = _vec_out(s.q)
            if not np.array_equal(s.W, first.W):
                sd["W"] = _mat_out(s.W)
            diff = np.argwhere(s.T != first.T)
            if 0 < len(diff) <= s.T.size // 2:
                sd["TEntries"] = [[int(i), int(j), _num_out(s.T[i, j])] for i, j in diff]
            elif len(diff):
                sd["T"] = _mat_out(s.T)
            if not np.array_equal(s.lower, first.lower):
                sd["lower"] = _vec_out(s.lower)
            if not np.array_equal(s.upper, first.upper):
                sd["upper"] = _vec_out(s.upper)
            scens.append(sd)
        dists.append({"id": dist.id, "scenarios": scens})
    doc["distributions"] = dists
    flags = {"rhsOnlyUncertainty": inst.rhs_only_uncertainty}
    if inst.complete_recourse:
        flags["completeRecourse"] = True
    if inst.monotonicity is not None:
        flags["monotonicity"] = {"h": _vec_out(inst.monotonicity.h), "T": _mat_out(inst.monotonicity.T)}
    doc["flags"] = flags
    overrides = {}
    for key in sorted(inst.bound_overrides):
        val = inst.bound_overrides[key]
        if isinstance(val, (list, tuple, np.ndarray)):
            arr = np.asarray(val, float)
            overrides[key] = _mat_out(arr) if arr.ndim == 2 else _vec_out(arr)
        else:
            overrides[key] = _num_out(val)
    doc["boundOverrides"] = overrides
    doc["meta"] = inst.meta
    return doc


def _partition_to_dict(part):
    if part is None:
        return None
    if isinstance(part, ExplicitDelta):
        return {"kind": "ExplicitDelta",
                "cells": [{"lower": _vec_out(lo), "upper": _vec_out(hi)}
                          for lo, hi in zip(part.cell_lower, part.cell_upper)]}
    if isinstance(part, BoxConditions):
        return {"kind": "BoxConditions", "forms": _mat_out(part.forms),
                "intervals": [_mat_out(iv) for iv in part.intervals],
                "cellMap": part.cell_map.tolist()}
    return {"kind": "BinarySegments",
            "segments": [list(seg) for seg in part.segments],
            "conditions": [[{"coef": [_num_out(v) for v in c.coef], "lower": _num_out(c.lower),
                             "upper": _num_out(c.upper)} for c in conds] for conds in part.conditions],
            "cellMap": part.cell_map.tolist()}


def dumps(inst: SpInstance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, allow_nan=False) + "\n"


def loads(text: str) -> SpInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("$: top level must be an object")
    return instance_from_dict(doc)


def load_instance(path) -> SpInstance:
    return loads(Path(path).read_text())


def save_instance(inst: SpInstance, path) -> None:
    Path(path).write_text(dumps(inst))
