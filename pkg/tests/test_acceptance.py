"""Acceptance criteria 1-10.

Each test stores one line in ``conftest.CRITERIA``; the lines are printed
in the terminal summary.  The corpus runs behind criteria 2-5 are shared
through a module-scoped fixture.
"""

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from conftest import CRITERIA
from ddlshaped.cli import bundled_golden, check_golden
from ddlshaped.cuts import CutKind
from ddlshaped.extensive import enumeration_oracle, solve_extensive
from ddlshaped.lp import Status
from ddlshaped.lshaped import RunConfig, run
from ddlshaped.model import MIXED_INTEGER, build_indicator_encoding, canonical_indicators, identify_distribution
from ddlshaped.ppp import PppParams, build_variant1, corpus_specs, generate_instance, sample_first_stage
from ddlshaped.valid_inequalities import generate_distind_cut
from instances import segment_example
from oracles import scipy_expected_recourse, small_example_Q
from test_lp import random_lp_agreement
from test_milp import random_milp_agreement

AGREE = 1e-4
LS_MODES = ("ls-loop", "ls-callback")
FAMILIES = ("mccormick", "jensen", "envelope")


def record(k: int, ok: bool, detail: str) -> None:
    CRITERIA[k] = (bool(ok), detail)
    assert ok, detail


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


@dataclass
class CorpusEntry:
    instance_id: str
    instance: object
    objectives: dict = field(default_factory=dict)
    times: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)


def _solve_all(entry: CorpusEntry) -> None:
    inst = entry.instance
    for method in LS_MODES:
        try:
            r = run(inst, RunConfig(method=method))
            entry.results[method] = r
            entry.objectives[method] = r.objective if r.status is Status.OPTIMAL else math.nan
            entry.times[method] = r.wall_time
        except Exception as exc:  # recorded and reported by the criteria
            entry.errors[method] = repr(exc)
    for method, solver in (("extensive", solve_extensive), ("oracle", enumeration_oracle)):
        try:
            r = solver(inst)
            entry.objectives[method] = r.objective if r.status is Status.OPTIMAL else math.nan
            entry.times[method] = r.wall_time
        except Exception as exc:
            entry.errors[method] = repr(exc)


@pytest.fixture(scope="module")
def corpus():
    entries = []
    for instance_id, variant, params in corpus_specs():
        entry = CorpusEntry(instance_id, generate_instance(variant, params))
        _solve_all(entry)
        entries.append(entry)
    return entries


@pytest.fixture(scope="module")
def infeasible_cells_instance():
    return build_variant1(PppParams(seed=1, capacity_factor=2.5), demand_equality=True)


# ---------------------------------------------------------------- 1


def test_criterion_1_golden_example(small_example):
    start = time.perf_counter()
    r = run(small_example, RunConfig(method="ls-loop"))
    elapsed = time.perf_counter() - start
    errs = check_golden(r, bundled_golden())
    cuts = [rec.cuts[0] for rec in r.iterations[:3]]
    want = [(0, 6.4, -1.0), (1, 15.6, -1.0), (0, 5.0, 0.4)]
    coef_ok = all(c.d == d and abs(c.intercept - a) <= 1e-6 and abs(c.slope[0] - b) <= 1e-6
                  and abs(c.big_m - 12.5) <= 1e-6 for c, (d, a, b) in zip(cuts, want))
    final_ok = abs(r.x[0] - 1) <= 1e-6 and abs(r.mu - 5.4) <= 1e-6 and abs(r.objective - 6.4) <= 1e-6
    ok = not errs and len(r.iterations) == 4 and coef_ok and final_ok and elapsed < 1.0
    record(1, ok, f"{len(r.iterations)} iterations, cuts {'match' if coef_ok else 'differ'}, "
                  f"final (x, mu) = ({r.x[0]:.6g}, {r.mu:.6g}), objective {r.objective:.6g}, "
                  f"{elapsed:.3f}s" + (f"; {errs}" if errs else ""))


# ---------------------------------------------------------------- 2, 3


@pytest.mark.slow
def test_criterion_2_oracle_equivalence(corpus):
    n_ok = 0
    worst = 0.0
    bad = []
    for e in corpus:
        ref = e.objectives.get("oracle", math.nan)
        errs = [rel_err(e.objectives.get(m, math.nan), ref) for m in LS_MODES]
        good = all(err <= AGREE for err in errs)
        if good:
            n_ok += 1
            worst = max(worst, *errs)
        else:
            bad.append(e.instance_id)
    ls_time = sum(e.times.get(m, 0.0) for e in corpus for m in LS_MODES)
    oracle_time = sum(e.times.get("oracle", 0.0) for e in corpus)
    ok = n_ok == len(corpus) == 60 and ls_time < 600
    record(2, ok, f"{n_ok}/{len(corpus)} agree (worst rel err {worst:.1e}); L-shaped time both modes "
                  f"{ls_time:.0f}s, oracle time {oracle_time:.0f}s" + (f"; failing {bad}" if bad else ""))


@pytest.mark.slow
def test_criterion_3_extensive_equivalence(corpus):
    n_ok = 0
    worst = 0.0
    bad = []
    for e in corpus:
        ext = e.objectives.get("extensive", math.nan)
        errs = [rel_err(ext, e.objectives.get(m, math.nan)) for m in LS_MODES]
        if all(err <= AGREE for err in errs):
            n_ok += 1
            worst = max(worst, *errs)
        else:
            bad.append(e.instance_id)
    ext_time = sum(e.times.get("extensive", 0.0) for e in corpus)
    record(3, n_ok == len(corpus) == 60, f"{n_ok}/{len(corpus)} agree (worst rel err {worst:.1e}); "
                                          f"extensive time {ext_time:.0f}s" + (f"; failing {bad}" if bad else ""))


# ---------------------------------------------------------------- 4


def _cut_arrays(cuts, n1):
    xc = np.array([c.x_coef for c in cuts]).reshape(len(cuts), n1)
    mc = np.array([c.mu_coef for c in cuts])
    rhs = np.array([c.rhs for c in cuts])
    bm = np.array([c.big_m if c.d is not None else 0.0 for c in cuts])
    ds = np.array([c.d if c.d is not None else -1 for c in cuts])
    return xc, mc, rhs, bm, ds


def _worst_violation(inst, cuts, n_points=500, seed=0):
    """Largest absolute and relative violation over correctly-estimating points with feasible recourse."""
    enc = build_indicator_encoding(inst)
    rng = np.random.default_rng(seed)
    cache = {}
    X, Q, acts = [], [], []
    for x in sample_first_stage(inst, rng, n_points):
        key = x.tobytes()
        if key not in cache:
            d = identify_distribution(inst, x)
            cache[key] = (scipy_expected_recourse(inst, x, d), enc.activations(canonical_indicators(inst, enc, x)))
        q, act = cache[key]
        if math.isfinite(q):
            X.append(x), Q.append(q), acts.append(act)
    X, Q, acts = np.array(X), np.array(Q), np.array(acts)
    xc, mc, rhs, bm, ds = _cut_arrays(cuts, inst.n1)
    act_of_cut = np.where(ds >= 0, acts[:, np.maximum(ds, 0)], 0.0) if acts.size else np.zeros((len(X), len(cuts)))
    lhs = X @ xc.T + Q[:, None] * mc[None, :] + act_of_cut * bm[None, :]
    viol = np.maximum(0.0, rhs[None, :] - lhs)
    scale = np.maximum(1.0, np.abs(Q))[:, None]
    return float(viol.max()), float((viol / scale).max()), len(X)


@pytest.mark.slow
def test_criterion_4_cut_safety(corpus, infeasible_cells_instance):
    worst_abs, worst_rel, n_cuts, n_points = 0.0, 0.0, 0, 0
    runs = [(e.instance, [e.results[m] for m in LS_MODES if m in e.results]) for e in corpus]
    runs.append((infeasible_cells_instance, [run(infeasible_cells_instance, RunConfig(method=m)) for m in LS_MODES]))
    kinds = set()
    for k, (inst, results) in enumerate(runs):
        cuts = [c for r in results for c in r.cuts]
        kinds |= {c.kind for c in cuts}
        a, r, n = _worst_violation(inst, cuts, seed=k)
        worst_abs, worst_rel = max(worst_abs, a), max(worst_rel, r)
        n_cuts += len(cuts)
        n_points += n
    ok = worst_rel <= 1e-6 and all(e.results.keys() == set(LS_MODES) for e in corpus)
    record(4, ok, f"{n_cuts} cuts ({', '.join(sorted(str(k) for k in kinds))}) against {n_points} sampled points: "
                  f"worst violation {worst_abs:.1e} absolute, {worst_rel:.1e} relative to max(1, |Q|)")


# ---------------------------------------------------------------- 5


@pytest.mark.slow
def test_criterion_5_cut_tightness(corpus):
    worst = 0.0
    n = 0
    for e in corpus:
        inst = e.instance
        integer_stage = inst.stage2_kind == MIXED_INTEGER
        cache = {}
        for m in LS_MODES:
            for c in e.results[m].cuts if m in e.results else []:
                if c.kind not in (CutKind.CONT_OPT, CutKind.INT_OPT):
                    continue
                # continuous cuts of an integer second stage reproduce the LP relaxation
                relaxed = integer_stage and c.kind is CutKind.CONT_OPT
                key = (c.x_v.tobytes(), c.d, relaxed)
                if key not in cache:
                    cache[key] = scipy_expected_recourse(inst, c.x_v, c.d, relaxed)
                target = cache[key]
                worst = max(worst, rel_err(c.mu_bound(c.x_v), target))
                n += 1
    record(5, worst <= 1e-7 and n > 0, f"{n} optimality cuts, worst |RHS(x^v) - Q(x^v)| / max(1, |Q|) = {worst:.1e}")


# ---------------------------------------------------------------- 6


def test_criterion_6_feasibility_cuts(infeasible_cells_instance):
    inst = infeasible_cells_instance
    oracle = enumeration_oracle(inst)
    n_infeasible = sum(not math.isfinite(v) for v in oracle.per_cell)
    details, ok = [], n_infeasible > 0
    for m in LS_MODES:
        r = run(inst, RunConfig(method=m))
        n_feas = r.count(CutKind.CONT_FEAS)
        d = identify_distribution(inst, r.x)
        feasible = math.isfinite(scipy_expected_recourse(inst, r.x, d))
        good = (r.status is Status.OPTIMAL and n_feas >= 1 and feasible
                and rel_err(r.objective, oracle.objective) <= AGREE)
        ok &= good
        details.append(f"{m}: {n_feas} feasibility cuts, objective {r.reported_objective:.4f}")
    record(6, ok, f"{n_infeasible} of {inst.n_distributions} cells infeasible; " + "; ".join(details)
                  + f"; oracle {oracle.reported_objective:.4f}")


# ---------------------------------------------------------------- 7


def test_criterion_7_encoding_compression():
    inst = segment_example()
    enc = build_indicator_encoding(inst)
    hits = 0
    for x in itertools.product((0, 1), repeat=5):
        x = np.array(x, float)
        d = identify_distribution(inst, x)
        act = enc.activations(canonical_indicators(inst, enc, x))
        hits += bool(np.flatnonzero(np.abs(act) < 1e-9).tolist() == [d])
    ok = enc.n_vars == 6 and inst.n_distributions == 8 and hits == 32
    record(7, ok, f"{enc.n_vars} v-variables vs {inst.n_distributions} cell indicators; "
                  f"{hits}/32 points map to their zero-activation cell")


# ---------------------------------------------------------------- 8


@pytest.mark.slow
def test_criterion_8_distribution_independent_cuts(small_example):
    grid = np.concatenate([np.linspace(0.5, 3, 50), np.linspace(3.5, 10, 50)])
    true_q = np.array([small_example_Q(x, identify_distribution(small_example, np.array([x]))) for x in grid])
    worst, objectives = -math.inf, {}
    for fam in FAMILIES:
        for x_v in grid:
            cut = generate_distind_cut(small_example, fam, np.array([x_v]))
            bound = np.array([cut.mu_bound([x]) for x in grid])
            worst = max(worst, float((bound - true_q).max()))
        objectives[fam] = run(small_example, RunConfig(dist_ind_cuts=fam)).objective
    valid = worst <= 1e-9 and all(abs(v - 6.4) <= 1e-6 for v in objectives.values())

    params = PppParams(n_facilities=5, n_levels=2, n_scenarios=2, n_locations=3, n_batches=3, seed=3)
    inst = generate_instance(3, params)
    counts = {}
    for fam in ("none",) + FAMILIES:
        r = run(inst, RunConfig(dist_ind_cuts=fam, master_backend="highs"))
        counts[fam] = (r.n_optimality_cuts, r.objective)
    base_cuts, base_obj = counts["none"]
    not_more = all(n <= base_cuts for n, _ in counts.values())
    same_opt = all(rel_err(obj, base_obj) <= AGREE for _, obj in counts.values())
    ok = valid and not_more and same_opt and inst.n_distributions == 32
    record(8, ok, f"grid: max(cut - Q) = {worst:.1e}, objectives "
                  f"{', '.join(f'{k} {v:.6g}' for k, v in objectives.items())}; |D| = {inst.n_distributions} "
                  f"optimality cuts " + ", ".join(f"{k} {n}" for k, (n, _) in counts.items()))


# ---------------------------------------------------------------- 9


@pytest.mark.slow
def test_criterion_9_scaling():
    inst = generate_instance(2, PppParams(n_facilities=5, n_levels=2, n_scenarios=10, seed=9))
    D = inst.n_distributions
    parts, ok, soft = [], D == 32, True
    for m in LS_MODES:
        r = run(inst, RunConfig(method=m))
        n_opt = r.n_optimality_cuts
        ok &= r.status is Status.OPTIMAL and r.gap <= 1e-4 and r.wall_time < 300 and n_opt <= 4 * D
        soft &= n_opt < 2 * D
        parts.append(f"{m}: {r.wall_time:.1f}s, {n_opt} optimality cuts")
    note = "below" if soft else "above"
    record(9, ok, f"|D| = {D}, S = 10; " + "; ".join(parts) + f" ({note} the soft target {2 * D}, "
                                                            f"hard limit {4 * D})")


# ---------------------------------------------------------------- 10


def test_criterion_10_kernels():
    lp_agree, lp_worst = random_lp_agreement(1000)
    milp_agree = random_milp_agreement(200)
    ok = lp_agree == 1000 and milp_agree == 200
    record(10, ok, f"LP {lp_agree}/1000 (worst abs err {lp_worst:.1e}), MILP {milp_agree}/200")
