"""Production planning under random yield with level-dependent yield distributions.

Three variants share the first-stage structure: each facility picks one
production level, which fixes the band its production must lie in and,
jointly over facilities, the yield distribution.

1. Production amounts ``x_f``; sell up to the total demand at price ``P``
   and the rest at salvage price ``O``.
2. As 1, but demand sits at several locations with a per-unit transport
   cost ``H_fq``.
3. Production is one of a few batch sizes ``Q_bf``; transport is paid per
   vehicle of capacity ``K`` (integer second stage).

The suite builds instances in minimisation form (profit negated) with
``recourse_sense = "max"`` so reported objectives are profits.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InfeasibleBatchLevels, ModelError
from .lp import EQ, GE, LE
from .milp import BINARY, CONTINUOUS, INTEGER
from .model import (
    MIXED_INTEGER,
    BinarySegments,
    Condition,
    Distribution,
    FirstStage,
    Monotonicity,
    ScenarioData,
    SpInstance,
    mixed_radix_cell_map,
)


@dataclass
class PppParams:
    n_facilities: int = 2
    n_levels: int = 2
    n_scenarios: int = 5
    n_locations: int = 5
    n_batches: int = 5
    vehicle_capacity: float = 20.0
    seed: int = 0
    cost_range: tuple = (60.0, 80.0)
    price_range: tuple = (125.0, 185.0)
    salvage_range: tuple = (15.0, 40.0)
    distance_range: tuple = (75.0, 300.0)
    unit_rate: float = 0.10
    vehicle_rate: float = 1.55
    yield_mean: float = 0.8
    yield_sd: float = 0.18
    yield_bounds: tuple = (0.25, 1.0)
    demand_per_facility: float = 100.0
    demand_cv: float = 0.25
    capacity_factor: float = 1.5

    def validate(self) -> None:
        if self.n_facilities < 1:
            raise ValueError("at least one facility is required")
        if self.n_levels < 2:
            raise ValueError("at least two production levels are required")
        if self.n_scenarios < 1 or self.n_locations < 1 or self.n_batches < 1:
            raise ValueError("scenario, location and batch counts must be positive")
        if self.vehicle_capacity <= 0:
            raise ValueError("vehicle capacity must be positive")
        if self.salvage_range[1] >= self.price_range[0]:
            raise ValueError("salvage price must stay below the sale price")
        lo, hi = self.yield_bounds
        if not 0 <= lo < hi:
            raise ValueError("yield bounds must satisfy 0 <= lower < upper")

    @property
    def n_distributions(self) -> int:
        return self.n_levels ** self.n_facilities


@dataclass
class PppData:
    """Sampled economics and scenarios; ``yields[d][s]`` has one entry per facility."""

    variant: int
    params: PppParams
    C: np.ndarray
    P: float
    O: float
    distance: np.ndarray
    capacity: np.ndarray
    level_lower: np.ndarray  # (F, L)
    level_upper: np.ndarray
    batches: np.ndarray  # (F, B)
    cell_levels: np.ndarray  # (|D|, F)
    yields: np.ndarray  # (|D|, S, F)
    demand: np.ndarray  # (|D|, S) for variant 1, (|D|, S, Q) otherwise
    probabilities: np.ndarray = field(default=None)

    @property
    def H(self) -> np.ndarray:
        return self.params.unit_rate * self.distance

    @property
    def G(self) -> np.ndarray:
        return self.params.vehicle_rate * self.distance


def level_bands(capacity: float, n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous bands over ``[0, capacity]`` separated by unit gaps, the first starting at 0."""
    edges = np.linspace(0.0, capacity, n_levels + 1)
    lower = edges[:-1].copy()
    upper = edges[1:] - 1.0
    upper[-1] = capacity
    return lower, upper


def _truncated_normal(rng, mean, sd, lo, hi, size=None):
    """Rejection sampling from a normal restricted to ``[lo, hi]``."""
    out = np.empty(size if size is not None else ())
    flat = out.reshape(-1)
    for i in range(flat.size):
        while True:
            v = rng.normal(mean, sd)
            if lo <= v <= hi:
                flat[i] = v
                break
    return out if size is not None else float(out)


def yield_sd(params: PppParams, level: int) -> float:
    """Standard deviation of the yield at a level, strictly decreasing in the level."""
    return params.yield_sd / (level + 1)


def generate_data(variant: int, params: PppParams) -> PppData:
    if variant not in (1, 2, 3):
        raise ValueError(f"unknown variant {variant}")
    params.validate()
    rng = np.random.default_rng(params.seed)
    F, L, S = params.n_facilities, params.n_levels, params.n_scenarios
    Qn = params.n_locations if variant > 1 else 1
    C = rng.uniform(*params.cost_range, size=F)
    P = float(rng.uniform(*params.price_range))
    O = float(rng.uniform(*params.salvage_range))
    distance = rng.uniform(*params.distance_range, size=(F, Qn))
    total_mean = params.demand_per_facility * F
    if variant == 1:
        loc_means = np.array([total_mean])
    else:
        loc_means = rng.uniform(0.5, 1.5, size=Qn) * total_mean / Qn
    capacity = np.full(F, params.capacity_factor * params.demand_per_facility)
    bands = [level_bands(cap, L) for cap in capacity]
    level_lower = np.array([b[0] for b in bands])
    level_upper = np.array([b[1] for b in bands])
    B = params.n_batches
    batches = np.array([[round(cap * (b + 1) / B) for b in range(B)] for cap in capacity], dtype=float)

    cell_levels = mixed_radix_cell_map([L] * F)
    D = cell_levels.shape[0]
    yields = np.empty((D, S, F))
    demand = np.empty((D, S)) if variant == 1 else np.empty((D, S, Qn))
    lo, hi = params.yield_bounds
    for d in range(D):
        for s in range(S):
            for f in range(F):
                yields[d, s, f] = _truncated_normal(rng, params.yield_mean, yield_sd(params, cell_levels[d, f]), lo, hi)
            dem = [_truncated_normal(rng, m, params.demand_cv * m, 0.0, math.inf) for m in loc_means]
            if variant == 1:
                demand[d, s] = dem[0]
            else:
                demand[d, s] = dem
    return PppData(variant, params, C, P, O, distance, capacity, level_lower, level_upper, batches,
                   cell_levels, yields, demand, np.full(S, 1.0 / S))


def _level_structure(data: PppData, x_amount_cols, n1: int, y_offset: int):
    """Level-selection rows, the BinarySegments partition and bounds over the ``y`` block."""
    F, L = data.params.n_facilities, data.params.n_levels
    rows = []
    for f in range(F):
        ycols = [y_offset + f * L + l for l in range(L)]
        one = np.zeros(n1)
        one[ycols] = 1.0
        rows.append((one, EQ, 1.0))
        lo = np.zeros(n1)
        hi = np.zeros(n1)
        for col, coef in x_amount_cols[f]:
            lo[col] = coef
            hi[col] = coef
        lo[ycols] = -data.level_lower[f]
        hi[ycols] = -data.level_upper[f]
        rows.append((lo, GE, 0.0))
        rows.append((hi, LE, 0.0))
    segments = tuple(tuple(y_offset + f * L + l for l in range(L)) for f in range(F))
    conditions = tuple(
        tuple(Condition(tuple(1.0 if k == l else 0.0 for k in range(L)), 1.0, 1.0) for l in range(L))
        for _ in range(F))
    return rows, BinarySegments(segments, conditions, data.cell_levels.copy())


def _first_stage(c, rows, domains, lower, upper, names) -> FirstStage:
    n1 = len(c)
    A = np.array([r[0] for r in rows]).reshape(len(rows), n1)
    return FirstStage(np.asarray(c, float), A, tuple(r[1] for r in rows), np.array([r[2] for r in rows], float),
                      tuple(domains), np.asarray(lower, float), np.asarray(upper, float), tuple(names))


def _meta(data: PppData) -> dict:
    p = asdict(data.params)
    p = {k: list(v) if isinstance(v, tuple) else v for k, v in p.items()}
    return {
        "variant": data.variant,
        "params": p,
        "capacity": data.capacity.tolist(),
        "levelLower": data.level_lower.tolist(),
        "levelUpper": data.level_upper.tolist(),
        "batches": data.batches.tolist(),
        "C": data.C.tolist(),
        "P": data.P,
        "O": data.O,
    }


def _instance(data, fs, partition, scen_fn, q, W, relations, domains2, upper2, y_upper, mono_h, mono_T,
              stage2_kind="LinearProgram", name="", complete=True):
    D, S = data.cell_levels.shape[0], data.params.n_scenarios
    dists = []
    for d in range(D):
        scens = []
        for s in range(S):
            T, h = scen_fn(d, s)
            scens.append(ScenarioData(float(data.probabilities[s]), q, W, T, h, relations, domains2,
                                      np.zeros(q.size), upper2))
        label = "-".join(str(int(l) + 1) for l in data.cell_levels[d])
        dists.append(Distribution(f"d{d + 1}[{label}]", tuple(scens)))
    return SpInstance(fs, partition, tuple(dists), stage2_kind=stage2_kind, recourse_sense="max",
                      name=name, y_upper=y_upper, rhs_only_uncertainty=True, complete_recourse=complete,
                      monotonicity=Monotonicity(mono_h, mono_T), meta=_meta(data))


def build_variant1(params: PppParams | None = None, data: PppData | None = None,
                   demand_equality: bool = False) -> SpInstance:
    """Continuous production, one aggregate demand.

    ``demand_equality`` turns ``w <= D`` into ``w = D``, which removes
    relatively complete recourse: cells whose production cannot cover the
    demand have infeasible second stages.
    """
    data = data or generate_data(1, params or PppParams())
    F, L = data.params.n_facilities, data.params.n_levels
    n1 = F + F * L
    c = np.concatenate([data.C, np.zeros(F * L)])
    rows, part = _level_structure(data, [[(f, 1.0)] for f in range(F)], n1, F)
    names = [f"x[{f}]" for f in range(F)] + [f"y[{f},{l}]" for f in range(F) for l in range(L)]
    fs = _first_stage(c, rows, [CONTINUOUS] * F + [BINARY] * (F * L), np.zeros(n1),
                      np.concatenate([data.capacity, np.ones(F * L)]), names)
    q = np.array([-data.P, -data.O])
    W = np.array([[1.0, 1.0], [1.0, 0.0]])
    rel = (EQ, EQ if demand_equality else LE)

    def scen(d, s):
        T = np.zeros((2, n1))
        T[0, :F] = -data.yields[d, s]
        return T, np.array([0.0, data.demand[d, s]])

    y_upper = np.array([data.demand.max(), data.capacity.sum()])
    mono_T = np.zeros((2, n1))
    mono_T[0, :F] = 1.0
    mono_h = np.array([0.0, 0.0 if demand_equality else -1.0])
    return _instance(data, fs, part, scen, q, W, rel, (CONTINUOUS, CONTINUOUS), np.full(2, np.inf), y_upper,
                     mono_h, mono_T, name=f"ppp1-F{F}-L{L}-S{data.params.n_scenarios}-seed{data.params.seed}",
                     complete=not demand_equality)


def build_variant2(params: PppParams | None = None, data: PppData | None = None,
                   H: np.ndarray | None = None) -> SpInstance:
    """Continuous production with per-unit transport to several locations."""
    data = data or generate_data(2, params or PppParams())
    F, L = data.params.n_facilities, data.params.n_levels
    Qn = data.demand.shape[2]
    H = data.H if H is None else np.asarray(H, float)
    n1 = F + F * L
    c = np.concatenate([data.C, np.zeros(F * L)])
    rows, part = _level_structure(data, [[(f, 1.0)] for f in range(F)], n1, F)
    names = [f"x[{f}]" for f in range(F)] + [f"y[{f},{l}]" for f in range(F) for l in range(L)]
    fs = _first_stage(c, rows, [CONTINUOUS] * F + [BINARY] * (F * L), np.zeros(n1),
                      np.concatenate([data.capacity, np.ones(F * L)]), names)
    nw = F * Qn
    q = np.concatenate([-(data.P - H).ravel(), np.full(F, -data.O)])
    m2 = F + Qn
    W = np.zeros((m2, nw + F))
    for f in range(F):
        W[f, f * Qn:(f + 1) * Qn] = 1.0
        W[f, nw + f] = 1.0
    for k in range(Qn):
        W[F + k, [f * Qn + k for f in range(F)]] = 1.0
    rel = tuple([EQ] * F + [LE] * Qn)

    def scen(d, s):
        T = np.zeros((m2, n1))
        T[np.arange(F), np.arange(F)] = -data.yields[d, s]
        return T, np.concatenate([np.zeros(F), data.demand[d, s]])

    dmax = data.demand.max(axis=(0, 1))
    y_upper = np.concatenate([np.minimum(data.capacity[:, None], dmax[None, :]).ravel(), data.capacity])
    mono_T = np.zeros((m2, n1))
    mono_T[np.arange(F), np.arange(F)] = 1.0
    mono_h = np.concatenate([np.zeros(F), -np.ones(Qn)])
    return _instance(data, fs, part, scen, q, W, rel, (CONTINUOUS,) * (nw + F), np.full(nw + F, np.inf), y_upper,
                     mono_h, mono_T, name=f"ppp2-F{F}-L{L}-S{data.params.n_scenarios}-seed{data.params.seed}")


def build_variant3(params: PppParams | None = None, data: PppData | None = None) -> SpInstance:
    """Batch production with per-vehicle transport (integer second stage)."""
    data = data or generate_data(3, params or PppParams())
    p = data.params
    F, L, B, K = p.n_facilities, p.n_levels, p.n_batches, p.vehicle_capacity
    Qn = data.demand.shape[2]
    for f in range(F):
        inside = [(data.level_lower[f] <= qb).any() and
                  np.any((data.level_lower[f] <= qb) & (qb <= data.level_upper[f])) for qb in data.batches[f]]
        if not any(inside):
            raise InfeasibleBatchLevels(f"no batch size of facility {f} lies in a production level")
    nb = F * B
    n1 = nb + F * L
    c = np.concatenate([(data.C[:, None] * data.batches).ravel(), np.zeros(F * L)])
    amount = [[(f * B + b, data.batches[f, b]) for b in range(B)] for f in range(F)]
    rows, part = _level_structure(data, amount, n1, nb)
    for f in range(F):
        r = np.zeros(n1)
        r[f * B:(f + 1) * B] = 1.0
        rows.insert(f, (r, LE, 1.0))
    names = [f"x[{f},{b}]" for f in range(F) for b in range(B)] + \
            [f"y[{f},{l}]" for f in range(F) for l in range(L)]
    fs = _first_stage(c, rows, [BINARY] * n1, np.zeros(n1), np.ones(n1), names)

    nw = F * Qn
    n2 = 2 * nw + F
    G = data.G
    q = np.concatenate([np.full(nw, -data.P), G.ravel(), np.full(F, -data.O)])
    m2 = F + Qn + nw
    W = np.zeros((m2, n2))
    for f in range(F):
        W[f, f * Qn:(f + 1) * Qn] = 1.0
        W[f, 2 * nw + f] = 1.0
    for k in range(Qn):
        W[F + k, [f * Qn + k for f in range(F)]] = 1.0
    for j in range(nw):
        W[F + Qn + j, j] = 1.0
        W[F + Qn + j, nw + j] = -K
    rel = tuple([EQ] * F + [LE] * Qn + [LE] * nw)
    vmax = np.repeat(np.ceil(data.capacity / K), Qn)
    upper2 = np.concatenate([np.full(nw, np.inf), vmax, np.full(F, np.inf)])
    domains2 = (CONTINUOUS,) * nw + (INTEGER,) * nw + (CONTINUOUS,) * F

    def scen(d, s):
        T = np.zeros((m2, n1))
        for f in range(F):
            T[f, f * B:(f + 1) * B] = -data.yields[d, s, f] * data.batches[f]
        return T, np.concatenate([np.zeros(F), data.demand[d, s], np.zeros(nw)])

    dmax = data.demand.max(axis=(0, 1))
    w_up = np.minimum(data.capacity[:, None], dmax[None, :]).ravel()
    y_upper = np.concatenate([w_up, vmax, data.capacity])
    mono_T = np.zeros((m2, n1))
    for f in range(F):
        mono_T[f, f * B:(f + 1) * B] = 1.0
    mono_h = np.concatenate([np.zeros(F), -np.ones(Qn), np.zeros(nw)])
    return _instance(data, fs, part, scen, q, W, rel, domains2, upper2, y_upper, mono_h, mono_T,
                     stage2_kind=MIXED_INTEGER, name=f"ppp3-F{F}-L{L}-S{p.n_scenarios}-seed{p.seed}")


BUILDERS = {1: build_variant1, 2: build_variant2, 3: build_variant3}


def generate_instance(variant: int, params: PppParams) -> SpInstance:
    """Sample data for ``variant`` and build its instance; deterministic in ``params.seed``."""
    return BUILDERS[variant](data=generate_data(variant, params))


def sample_first_stage(instance: SpInstance, rng, size: int) -> list:
    """Random feasible first-stage points of a suite instance (uniform over levels and bands)."""
    meta = instance.meta
    if "variant" not in meta:
        raise ModelError("instance carries no production-planning metadata")
    variant = meta["variant"]
    lo = np.array(meta["levelLower"])
    hi = np.array(meta["levelUpper"])
    batches = np.array(meta["batches"])
    F, L = lo.shape
    n1 = instance.n1
    out = []
    while len(out) < size:
        x = np.zeros(n1)
        ok = True
        if variant in (1, 2):
            for f in range(F):
                l = int(rng.integers(L))
                x[f] = rng.uniform(lo[f, l], hi[f, l])
                x[F + f * L + l] = 1.0
        else:
            B = batches.shape[1]
            nb = F * B
            for f in range(F):
                choices = [-1] + list(range(B))
                b = int(rng.choice(choices))
                amount = 0.0 if b < 0 else batches[f, b]
                if b >= 0:
                    x[f * B + b] = 1.0
                levels = np.flatnonzero((lo[f] <= amount + 1e-9) & (amount <= hi[f] + 1e-9))
                if levels.size == 0:
                    ok = False
                    break
                x[nb + f * L + int(levels[0])] = 1.0
        if ok and instance.first_stage.is_feasible(x):
            out.append(x)
    return out


MANIFEST_COLUMNS = ["instance_id", "variant", "F", "L", "S", "D", "seed", "path"]


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            writer.writerow([r[c] for c in MANIFEST_COLUMNS])


def read_manifest(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("variant", "F", "L", "S", "D", "seed"):
            r[key] = int(r[key])
    return rows


def corpus_specs(per_variant: int = 20, facilities=(2, 3), n_levels: int = 2, n_scenarios: int = 5,
                 base_seed: int = 1000):
    """Deterministic (variant, params) pairs; facility counts alternate within a variant."""
    specs = []
    for variant in (1, 2, 3):
        for k in range(per_variant):
            F = facilities[k % len(facilities)]
            seed = base_seed + 100 * variant + k
            specs.append((f"v{variant}-{k:02d}", variant,
                          PppParams(n_facilities=F, n_levels=n_levels, n_scenarios=n_scenarios, seed=seed)))
    return specs
