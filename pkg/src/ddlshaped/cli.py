"""Command-line driver: ``generate``, ``corpus``, ``solve``, ``compare`` and ``example``.

Output is deterministic for fixed arguments; wall-clock columns are
written only with ``--timing``.

Exit codes: 0 success, 2 invalid input, 3 time limit, 4 numerical
failure, 5 cross-method disagreement, 6 golden-trajectory mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ModelError, NumericalFailure, SolverError, TooManyDistributions
from .extensive import ORACLE_CAP, enumeration_oracle, solve_extensive
from .instance_io import dumps, load_instance, loads, save_instance
from .lp import Status
from .lshaped import DIST_IND_FAMILIES, RunConfig, iteration_csv, run
from .milp import MilpOptions
from .ppp import (
    PppParams,
    build_variant1,
    corpus_specs,
    generate_data,
    generate_instance,
    read_manifest,
    write_manifest,
)

ALL_METHODS = ("ls-loop", "ls-callback", "extensive", "oracle")
EXIT_OK, EXIT_INPUT, EXIT_TIME, EXIT_NUMERIC, EXIT_FAIL, EXIT_GOLDEN = 0, 2, 3, 4, 5, 6
AGREE_TOL = 1e-4
COMPARE_VERSION = "ddlshaped-compare/1"
COMPARE_COLUMNS = ["instance_id", "method", "status", "objective", "best_dual", "gap_pct", "opt_cuts",
                   "feas_cuts", "agreement", "wall_ms"]


@dataclass
class MethodOutcome:
    """Solver-agnostic summary; objectives are in the instance's own sense."""

    method: str
    status: Status
    objective: float
    best_dual: float
    x: np.ndarray | None
    d: int | None
    opt_cuts: int = 0
    feas_cuts: int = 0
    wall_time: float = 0.0
    iterations: list = field(default_factory=list)
    detail: object = None

    @property
    def gap_pct(self) -> float:
        """``100 |primal - dual| / |dual|``."""
        if not (math.isfinite(self.objective) and math.isfinite(self.best_dual)):
            return math.inf
        if self.best_dual == 0:
            return 0.0 if self.objective == 0 else math.inf
        return 100.0 * abs(self.objective - self.best_dual) / abs(self.best_dual)


def solve(instance, config: RunConfig, oracle_cap: int = ORACLE_CAP) -> MethodOutcome:
    """Run one of :data:`ALL_METHODS` on ``instance``."""
    sign = instance.objective_sign
    start = time.monotonic()
    if config.method in ("ls-loop", "ls-callback"):
        r = run(instance, config)
        return MethodOutcome(config.method, r.status, r.reported_objective, sign * r.lower_bound, r.x, r.d,
                             r.n_optimality_cuts, r.n_feasibility_cuts, r.wall_time, r.iterations, r)
    opts = MilpOptions(mip_gap=1e-9, time_limit=config.time_limit)
    if config.method == "extensive":
        r = solve_extensive(instance, opts)
    elif config.method == "oracle":
        r = enumeration_oracle(instance, oracle_cap, opts)
    else:
        raise ValueError(f"unknown method {config.method!r}")
    return MethodOutcome(config.method, r.status, r.reported_objective, r.reported_objective, r.x, r.d,
                         wall_time=time.monotonic() - start, detail=r)


def _num(v, digits: int = 10) -> str:
    if v is None:
        return "-"
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(round(v, digits))


def _vec(x) -> str:
    return "-" if x is None else "[" + ", ".join(f"{float(v):.6g}" for v in x) + "]"


# ---------------------------------------------------------------- generate


def _params_from_args(args) -> PppParams:
    p = PppParams(n_facilities=args.facilities, n_levels=args.levels, n_scenarios=args.scenarios,
                  n_locations=args.locations, n_batches=args.batches, vehicle_capacity=args.vehicle_capacity,
                  seed=args.seed, capacity_factor=args.capacity_factor)
    p.validate()
    return p


def _build(variant: int, params: PppParams, strict_demand: bool):
    if strict_demand:
        if variant != 1:
            raise ValueError("--strict-demand applies to variant 1 only")
        return build_variant1(data=generate_data(1, params), demand_equality=True)
    return generate_instance(variant, params)


def cmd_generate(args) -> int:
    inst = _build(args.variant, _params_from_args(args), args.strict_demand)
    save_instance(inst, args.out)
    print(f"instance: {inst.name}")
    print(f"distributions: {inst.n_distributions}")
    print(f"scenarios: {inst.n_scenarios}")
    print(f"stage2: {inst.stage2_kind}")
    return EXIT_OK


def cmd_corpus(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    facilities = tuple(int(f) for f in args.facilities.split(","))
    variants = {int(v) for v in args.variants.split(",")}
    rows = []
    for iid, variant, params in corpus_specs(args.per_variant, facilities, args.levels, args.scenarios,
                                             args.base_seed):
        if variant not in variants:
            continue
        inst = generate_instance(variant, params)
        name = f"{iid}.json"
        save_instance(inst, out / name)
        rows.append({"instance_id": iid, "variant": variant, "F": params.n_facilities, "L": params.n_levels,
                     "S": params.n_scenarios, "D": inst.n_distributions, "seed": params.seed, "path": name})
    write_manifest(rows, out / "manifest.csv")
    print(f"instances: {len(rows)}")
    print(f"manifest: {out / 'manifest.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------- solve


def _config(args, method: str | None = None) -> RunConfig:
    return RunConfig(method=method or args.method, gap_tol=args.gap_tol, time_limit=args.time_limit,
                     dist_ind_cuts=args.dist_ind_cuts, seed=args.seed, master_backend=args.master_backend)


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    out = solve(inst, _config(args), args.oracle_cap)
    print(f"instance: {inst.name or Path(args.instance).name}")
    print(f"method: {out.method}")
    print(f"status: {out.status}")
    print(f"objective: {out.objective:.4f}" if math.isfinite(out.objective) else f"objective: {out.objective}")
    print(f"best_bound: {_num(out.best_dual, 6)}")
    print(f"x: {_vec(out.x)}")
    d_id = "-" if out.d is None else inst.distributions[out.d].id
    print(f"d: {d_id}")
    print(f"gap_pct: {_num(out.gap_pct, 6)}")
    print(f"optimality_cuts: {out.opt_cuts}")
    print(f"feasibility_cuts: {out.feas_cuts}")
    if out.iterations:
        print(f"iterations: {len(out.iterations)}")
    print(f"wall_time: {out.wall_time:.3f}s" if args.timing else "wall_time: -")
    if args.out and out.iterations:
        Path(args.out).write_text(iteration_csv(out.iterations, args.timing))
    if out.status is Status.TIME_LIMIT:
        return EXIT_TIME
    if out.status is not Status.OPTIMAL:
        print(f"error: solve ended with status {out.status}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- compare


def _compare_one(task):
    path, methods, cfg_kwargs, oracle_cap = task
    inst = load_instance(path)
    outcomes = []
    for m in methods:
        try:
            out = solve(inst, RunConfig(method=m, **cfg_kwargs), oracle_cap)
            outcomes.append(("ok", out.status.value, out.objective, out.best_dual, out.gap_pct, out.opt_cuts,
                             out.feas_cuts, out.wall_time))
        except TooManyDistributions:
            outcomes.append(("skip", "Skipped", math.nan, math.nan, math.nan, 0, 0, 0.0))
        except NumericalFailure:
            outcomes.append(("fail", "NumericalFailure", math.nan, math.nan, math.nan, 0, 0, 0.0))
    return outcomes


def _agreement(outcomes) -> list:
    """Flag each method row against the consensus reference (oracle, else the first optimal row)."""
    ref = None
    for kind, status, obj, *_ in reversed(outcomes):
        if kind == "ok" and status == Status.OPTIMAL.value:
            ref = obj
            break
    flags = []
    for kind, status, obj, *_ in outcomes:
        if kind == "skip":
            flags.append("SKIPPED")
        elif kind == "fail" or ref is None:
            flags.append("FAIL")
        elif status != Status.OPTIMAL.value:
            flags.append("TIMELIMIT")
        else:
            flags.append("OK" if abs(obj - ref) <= AGREE_TOL * max(1.0, abs(ref)) else "FAIL")
    return flags


def cmd_compare(args) -> int:
    manifest = Path(args.manifest)
    rows = read_manifest(manifest)
    methods = [m.strip() for m in args.methods.split(",")]
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    # the oracle goes last so it becomes the reference when present
    ordered = sorted(methods, key=lambda m: m == "oracle")
    cfg = dict(gap_tol=args.gap_tol, time_limit=args.time_limit, dist_ind_cuts=args.dist_ind_cuts, seed=args.seed,
               master_backend=args.master_backend)
    tasks = [(manifest.parent / r["path"], ordered, cfg, args.oracle_cap) for r in rows]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_compare_one, tasks))
    else:
        results = [_compare_one(t) for t in tasks]

    buf = io.StringIO()
    buf.write(f"# {COMPARE_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARE_COLUMNS)
    agg = {m: {"n": 0, "solved": 0, "time": 0.0, "gap": 0.0} for m in ordered}
    n_fail = 0
    for row, outcomes in zip(rows, results):
        for m, out, flag in zip(ordered, outcomes, _agreement(outcomes)):
            kind, status, obj, dual, gap, n_opt, n_feas, wall = out
            n_fail += flag == "FAIL"
            writer.writerow([row["instance_id"], m, status, _num(obj, 6), _num(dual, 6), _num(gap, 6), n_opt,
                             n_feas, flag, _num(1000 * wall, 1) if args.timing else "-"])
            if kind == "skip":
                continue
            a = agg[m]
            a["n"] += 1
            a["solved"] += status == Status.OPTIMAL.value
            a["time"] += wall
            a["gap"] += gap if math.isfinite(gap) else 0.0
    for m in ordered:
        a = agg[m]
        n = max(a["n"], 1)
        writer.writerow(["ALL", m, f"solved={100.0 * a['solved'] / n:.1f}%", "-", "-", _num(a["gap"] / n, 6), "-",
                         "-", "-", _num(1000 * a["time"] / n, 1) if args.timing else "-"])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"instances: {len(rows)}  methods: {','.join(ordered)}  fail_rows: {n_fail}",
          file=sys.stderr if not args.out else sys.stdout)
    return EXIT_FAIL if n_fail else EXIT_OK


# ---------------------------------------------------------------- example


def bundled_example():
    """The small two-cell instance shipped with the package."""
    return loads(resources.files("ddlshaped").joinpath("data/small_example.json").read_text())


def bundled_golden() -> dict:
    return json.loads(resources.files("ddlshaped").joinpath("data/small_example_golden.json").read_text())


def check_golden(result, golden: dict) -> list:
    """Mismatches between a run and the golden trajectory (empty when they agree)."""
    tol = golden["tolerance"]
    errs = []

    def close(a, b) -> bool:
        return bool(np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=0, atol=tol))

    want = golden["iterations"]
    if len(result.iterations) != len(want):
        errs.append(f"expected {len(want)} iterations, got {len(result.iterations)}")
    for rec, g in zip(result.iterations, want):
        k = g["iteration"]
        if rec.phase != g["phase"]:
            errs.append(f"iteration {k}: phase {rec.phase} != {g['phase']}")
        if not close(rec.x, g["x"]):
            errs.append(f"iteration {k}: x {rec.x} != {g['x']}")
        if g["mu"] is not None and (rec.mu is None or not close(rec.mu, g["mu"])):
            errs.append(f"iteration {k}: mu {rec.mu} != {g['mu']}")
        gc = g["cut"]
        cuts = [c for c in rec.cuts if c.is_optimality or c.d is not None]
        if gc is None:
            if cuts:
                errs.append(f"iteration {k}: unexpected cut")
            continue
        if len(cuts) != 1:
            errs.append(f"iteration {k}: expected one cut, got {len(cuts)}")
            continue
        c = cuts[0]
        if c.d != gc["d"] or not close(c.intercept, gc["intercept"]) or not close(c.slope, gc["slope"]) \
                or not close(c.big_m, gc["big_m"]):
            errs.append(f"iteration {k}: cut {c.describe()} differs from the golden cut")
    fin = golden["final"]
    if result.x is None or not close(result.x, fin["x"]) or not close(result.mu, fin["mu"]) \
            or result.d != fin["d"] or not close(result.objective, fin["objective"]):
        errs.append(f"final point ({result.x}, {result.mu}) objective {result.objective} differs from golden")
    lbs = [r.lower_bound for r in result.iterations]
    if any(b < a - tol for a, b in zip(lbs, lbs[1:])):
        errs.append("lower bound sequence decreases")
    return errs


def cmd_example(args) -> int:
    inst = bundled_example()
    golden = bundled_golden()
    result = run(inst, RunConfig(method="ls-loop", gap_tol=args.gap_tol))
    names = inst.first_stage.names or None
    for rec in result.iterations:
        mu = "-" if rec.mu is None else f"{rec.mu:.6g}"
        print(f"iteration {rec.iteration}: x = {_vec(rec.x)}, mu = {mu}, d = {inst.distributions[rec.d].id}, "
              f"LB = {rec.lower_bound:.6g}, UB = {rec.upper_bound:.6g}")
        for c in rec.cuts:
            ind = None if c.d is None else f"(1 - delta[{inst.distributions[c.d].id}])"
            print(f"  cut: {c.describe(names, ind)}")
        if rec.phase == "done":
            print("  optimal")
    print(f"objective: {result.objective:.4f}")
    if args.out:
        Path(args.out).write_text(iteration_csv(result.iterations, args.timing))
    errs = check_golden(result, golden)
    for e in errs:
        print(f"mismatch: {e}")
    print("golden: " + ("MISMATCH" if errs else "match"))
    return EXIT_GOLDEN if errs else EXIT_OK


# ---------------------------------------------------------------- parser


def _add_solver_flags(p) -> None:
    p.add_argument("--gap-tol", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=1800.0)
    p.add_argument("--dist-ind-cuts", choices=DIST_IND_FAMILIES, default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-cap", type=int, default=ORACLE_CAP)
    p.add_argument("--master-backend", choices=("bnb", "highs"), default="bnb",
                   help="master solver in loop mode (callback mode always uses bnb)")
    p.add_argument("--timing", action="store_true", help="write wall-clock times (output no longer byte-stable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddlshaped", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample one production-planning instance")
    g.add_argument("--variant", type=int, choices=(1, 2, 3), required=True)
    g.add_argument("--facilities", type=int, default=2)
    g.add_argument("--levels", type=int, default=2)
    g.add_argument("--scenarios", type=int, default=5)
    g.add_argument("--locations", type=int, default=5)
    g.add_argument("--batches", type=int, default=5)
    g.add_argument("--vehicle-capacity", type=float, default=20.0)
    g.add_argument("--capacity-factor", type=float, default=1.5)
    g.add_argument("--strict-demand", action="store_true", help="variant 1 with demand met exactly")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("corpus", help="write a seeded corpus and its manifest")
    c.add_argument("--out-dir", required=True)
    c.add_argument("--per-variant", type=int, default=20)
    c.add_argument("--variants", default="1,2,3")
    c.add_argument("--facilities", default="2,3")
    c.add_argument("--levels", type=int, default=2)
    c.add_argument("--scenarios", type=int, default=5)
    c.add_argument("--base-seed", type=int, default=1000)
    c.set_defaults(func=cmd_corpus)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("instance")
    s.add_argument("--method", choices=ALL_METHODS, default="ls-loop")
    s.add_argument("--out", help="iteration CSV path")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("compare", help="run several methods over a corpus manifest")
    m.add_argument("manifest")
    m.add_argument("--methods", default="ls-loop,ls-callback,extensive,oracle")
    m.add_argument("--out", help="comparison CSV path (stdout if omitted)")
    m.add_argument("--jobs", type=int, default=1)
    _add_solver_flags(m)
    m.set_defaults(func=cmd_compare)

    e = sub.add_parser("example", help="replay the bundled two-cell example against its golden trajectory")
    e.add_argument("--out", help="iteration CSV path")
    e.add_argument("--gap-tol", type=float, default=1e-4)
    e.add_argument("--timing", action="store_true")
    e.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
