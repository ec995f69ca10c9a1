"""Data model for two-stage stochastic programs with decision-dependent
distributions.

The first-stage feasible set is split into disjoint cells, one per
distribution.  Three partition descriptors are supported:

``ExplicitDelta``
    Each cell is a box over the first-stage variables; the master problem
    gets one binary per cell.
``BoxConditions``
    ``m`` linear forms ``a_i @ x`` each fall in one of ``J`` disjoint
    intervals; a cell is a choice of one interval per form.
``BinarySegments``
    Index segments of a binary first stage, each with an exhaustive set of
    conditions ``lo <= a @ x[segment] <= hi``; a cell is one condition per
    segment.

Every descriptor maps to an :class:`IndicatorEncoding`: binary master
variables, linking rows, and for each cell ``d`` an affine *activation*
expression that is zero exactly on the cell and at least one elsewhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InconsistentDimensions, NoCell, SchemaViolation, UnsupportedPartition
from .lp import EQ, GE, LE, LinearProgram, solve_lp
from .milp import BINARY, CONTINUOUS, INTEGER, MixedIntegerProgram, solve_milp

FEAS_TOL = 1e-8
LINEAR_PROGRAM, MIXED_INTEGER = "LinearProgram", "MixedInteger"


@dataclass(frozen=True, eq=False)
class FirstStage:
    c: np.ndarray
    A: np.ndarray
    relations: tuple
    b: np.ndarray
    domains: tuple
    lower: np.ndarray
    upper: np.ndarray
    names: tuple = ()

    @property
    def n(self) -> int:
        return self.c.size

    def is_feasible(self, x, tol: float = FEAS_TOL) -> bool:
        lp = LinearProgram(self.c, self.A, self.relations, self.b, self.lower, self.upper)
        if lp.max_violation(np.asarray(x, float)) > tol * (1 + np.abs(x).max(initial=0)):
            return False
        ints = np.array([d != CONTINUOUS for d in self.domains], dtype=bool)
        return bool(np.all(np.abs(x[ints] - np.round(x[ints])) <= 1e-6))


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """One realisation: ``Q = min q @ y  s.t.  W y (rel) h - T x``."""

    probability: float
    q: np.ndarray
    W: np.ndarray
    T: np.ndarray
    h: np.ndarray
    relations: tuple
    domains: tuple
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n2(self) -> int:
        return self.q.size

    def rhs(self, x) -> np.ndarray:
        return self.h - self.T @ np.asarray(x, float)


@dataclass(frozen=True, eq=False)
class Distribution:
    id: str
    scenarios: tuple

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])


@dataclass(frozen=True)
class Condition:
    """``lower <= coef @ x[segment] <= upper`` on a binary segment."""

    coef: tuple
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class ExplicitDelta:
    cell_lower: np.ndarray  # (|D|, n1)
    cell_upper: np.ndarray

    kind = "ExplicitDelta"

    @property
    def n_cells(self) -> int:
        return self.cell_lower.shape[0]


@dataclass(frozen=True, eq=False)
class BoxConditions:
    forms: np.ndarray  # (m, n1)
    intervals: np.ndarray  # (m, J, 2)
    cell_map: np.ndarray  # (|D|, m) interval index per form

    kind = "BoxConditions"

    @property
    def n_cells(self) -> int:
        return self.cell_map.shape[0]


@dataclass(frozen=True, eq=False)
class BinarySegments:
    segments: tuple  # tuple of index tuples
    conditions: tuple  # per segment, tuple of Condition
    cell_map: np.ndarray  # (|D|, T) condition index per segment

    kind = "BinarySegments"

    @property
    def n_cells(self) -> int:
        return self.cell_map.shape[0]


@dataclass(frozen=True, eq=False)
class Monotonicity:
    """Direction in which the recourse cost moves with each random entry.

    +1 non-decreasing, -1 non-increasing, 0 for deterministic entries.
    """

    h: np.ndarray
    T: np.ndarray


@dataclass(frozen=True, eq=False)
class SpInstance:
    first_stage: FirstStage
    partition: object
    distributions: tuple
    stage2_kind: str = LINEAR_PROGRAM
    recourse_sense: str = "min"
    name: str = ""
    y_upper: np.ndarray | None = None
    rhs_only_uncertainty: bool = False
    #: every second stage is feasible for every first-stage point (declared, not checked)
    complete_recourse: bool = False
    monotonicity: Monotonicity | None = None
    bound_overrides: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        validate_instance(self)

    @property
    def n1(self) -> int:
        return self.first_stage.n

    @property
    def n2(self) -> int:
        return self.distributions[0].scenarios[0].n2

    @property
    def n_distributions(self) -> int:
        return len(self.distributions)

    @property
    def n_scenarios(self) -> int:
        return sum(len(d.scenarios) for d in self.distributions)

    @property
    def objective_sign(self) -> float:
        """Multiplier turning the internal (minimised) objective into the reported one."""
        return -1.0 if self.recourse_sense == "max" else 1.0

    def scenarios(self):
        for d, dist in enumerate(self.distributions):
            for s, scen in enumerate(dist.scenarios):
                yield d, s, scen


def validate_instance(inst: SpInstance) -> None:
    fs = inst.first_stage
    n1 = fs.n
    if fs.A.shape != (len(fs.relations), n1) or fs.b.size != len(fs.relations):
        raise InconsistentDimensions("first-stage rows do not match the number of variables")
    if len(fs.domains) != n1 or fs.lower.size != n1 or fs.upper.size != n1:
        raise InconsistentDimensions("first-stage domains/bounds must have one entry per variable")
    if not inst.distributions:
        raise SchemaViolation("at least one distribution is required")
    n_cells = inst.partition.n_cells if inst.partition is not None else 1
    if n_cells != len(inst.distributions):
        raise InconsistentDimensions(
            f"partition has {n_cells} cells but {len(inst.distributions)} distributions are given")
    n2 = inst.distributions[0].scenarios[0].n2
    m2 = inst.distributions[0].scenarios[0].h.size
    for dist in inst.distributions:
        if not dist.scenarios:
            raise SchemaViolation(f"distribution {dist.id} has no scenarios")
        total = float(sum(s.probability for s in dist.scenarios))
        if abs(total - 1.0) > 1e-9:
            raise SchemaViolation(f"probabilities of distribution {dist.id} sum to {total}, not 1")
        for s in dist.scenarios:
            if not 0 < s.probability <= 1:
                raise SchemaViolation(f"probability {s.probability} outside (0, 1] in distribution {dist.id}")
            if s.q.size != n2 or s.W.shape != (m2, n2) or s.T.shape != (m2, n1) or s.h.size != m2:
                raise InconsistentDimensions(f"scenario of distribution {dist.id} has inconsistent dimensions")
            if len(s.relations) != m2 or len(s.domains) != n2 or s.lower.size != n2 or s.upper.size != n2:
                raise InconsistentDimensions(f"scenario of distribution {dist.id} has inconsistent dimensions")
    if inst.stage2_kind not in (LINEAR_PROGRAM, MIXED_INTEGER):
        raise SchemaViolation(f"unknown stage2 kind {inst.stage2_kind!r}")
    if inst.recourse_sense not in ("min", "max"):
        raise SchemaViolation(f"unknown recourse sense {inst.recourse_sense!r}")
    if inst.y_upper is not None and inst.y_upper.size != n2:
        raise InconsistentDimensions("yUpper must have one entry per second-stage variable")
    if inst.monotonicity is not None:
        if inst.monotonicity.h.size != m2 or inst.monotonicity.T.shape != (m2, n1):
            raise InconsistentDimensions("monotonicity flags do not match h/T dimensions")
    if inst.partition is not None:
        validate_partition(inst.partition, fs)


def validate_partition(part, fs: FirstStage) -> None:
    n1 = fs.n
    if isinstance(part, ExplicitDelta):
        if part.cell_lower.shape != part.cell_upper.shape or part.cell_lower.shape[1] != n1:
            raise InconsistentDimensions("ExplicitDelta cell boxes must be (|D|, n1)")
        if np.any(part.cell_lower > part.cell_upper):
            raise UnsupportedPartition("ExplicitDelta cell with empty box")
        D = part.n_cells
        for a, b in itertools.combinations(range(D), 2):
            overlap = np.all(np.maximum(part.cell_lower[a], part.cell_lower[b])
                             <= np.minimum(part.cell_upper[a], part.cell_upper[b]))
            if overlap:
                raise UnsupportedPartition(f"cells {a} and {b} overlap")
    elif isinstance(part, BoxConditions):
        m, J, _ = part.intervals.shape
        if part.forms.shape != (m, n1):
            raise InconsistentDimensions("BoxConditions forms must be (m, n1)")
        for i in range(m):
            iv = part.intervals[i]
            if np.any(iv[:, 0] > iv[:, 1]):
                raise UnsupportedPartition(f"empty interval on form {i}")
            order = np.argsort(iv[:, 0])
            if np.any(iv[order[1:], 0] <= iv[order[:-1], 1]):
                raise UnsupportedPartition(f"intervals of form {i} are not disjoint")
        _check_cell_map(part.cell_map, [J] * m)
    elif isinstance(part, BinarySegments):
        sizes = [len(c) for c in part.conditions]
        if len(part.segments) != len(part.conditions):
            raise InconsistentDimensions("one condition set per segment is required")
        seen = set()
        for t, seg in enumerate(part.segments):
            if any(i < 0 or i >= n1 for i in seg):
                raise InconsistentDimensions(f"segment {t} indexes outside the first stage")
            if seen & set(seg):
                raise UnsupportedPartition("segments overlap")
            seen |= set(seg)
            for cond in part.conditions[t]:
                if len(cond.coef) != len(seg):
                    raise InconsistentDimensions(f"condition length differs from segment {t}")
            if len(seg) <= 16:
                _check_segment_exhaustive(seg, part.conditions[t], t, fs)
        _check_cell_map(part.cell_map, sizes)
    else:
        raise UnsupportedPartition(f"unknown partition descriptor {type(part).__name__}")


def _check_cell_map(cell_map: np.ndarray, sizes: Sequence[int]) -> None:
    expected = int(np.prod(sizes))
    if cell_map.shape != (expected, len(sizes)):
        raise InconsistentDimensions(f"cell map must list {expected} cells of {len(sizes)} choices")
    combos = {tuple(int(v) for v in row) for row in cell_map}
    if len(combos) != expected or any(not 0 <= row[k] < sizes[k] for row in combos for k in range(len(sizes))):
        raise UnsupportedPartition("cell map is not a bijection onto the condition combinations")


def _check_segment_exhaustive(seg, conditions, t, fs: FirstStage) -> None:
    """Every binary point of the segment allowed by the rows local to it meets one condition."""
    seg = list(seg)
    outside = np.ones(fs.n, dtype=bool)
    outside[seg] = False
    local = [i for i in range(fs.b.size) if not np.any(fs.A[i, outside])]
    lp = LinearProgram(np.zeros(len(seg)), fs.A[local][:, seg], [fs.relations[i] for i in local], fs.b[local],
                       fs.lower[seg], fs.upper[seg])
    for bits in itertools.product((0.0, 1.0), repeat=len(seg)):
        if lp.max_violation(np.array(bits)) > FEAS_TOL:
            continue
        hits = sum(c.lower - FEAS_TOL <= float(np.dot(c.coef, bits)) <= c.upper + FEAS_TOL for c in conditions)
        if hits != 1:
            raise UnsupportedPartition(
                f"segment {t}: point {tuple(int(b) for b in bits)} satisfies {hits} conditions")


def mixed_radix_cell_map(sizes: Sequence[int]) -> np.ndarray:
    """All condition combinations, first position most significant."""
    return np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=int).reshape(-1, len(sizes))


def cell_choices(instance: SpInstance, x, tol: float = FEAS_TOL) -> list | None:
    """Condition index chosen at ``x`` per form/segment (``None`` for ExplicitDelta)."""
    part = instance.partition
    x = np.asarray(x, float)
    if isinstance(part, BoxConditions):
        values = part.forms @ x
        out = []
        for i, v in enumerate(values):
            iv = part.intervals[i]
            hit = np.flatnonzero((iv[:, 0] - tol * (1 + abs(v)) <= v) & (v <= iv[:, 1] + tol * (1 + abs(v))))
            if hit.size != 1:
                raise NoCell(f"form {i} value {v} lies in {hit.size} intervals")
            out.append(int(hit[0]))
        return out
    if isinstance(part, BinarySegments):
        out = []
        for t, seg in enumerate(part.segments):
            xs = x[list(seg)]
            hits = [k for k, c in enumerate(part.conditions[t])
                    if c.lower - tol <= float(np.dot(c.coef, xs)) <= c.upper + tol]
            if len(hits) != 1:
                raise NoCell(f"segment {t} satisfies {len(hits)} conditions at {xs}")
            out.append(hits[0])
        return out
    return None


def identify_distribution(instance: SpInstance, x, tol: float = FEAS_TOL) -> int:
    """Index of the unique cell containing ``x``.

    Raises :class:`NoCell` when ``x`` falls in a gap between cells.
    """
    part = instance.partition
    x = np.asarray(x, float)
    if part is None:
        return 0
    if isinstance(part, ExplicitDelta):
        slack = tol * (1 + np.abs(x))
        inside = np.all((part.cell_lower - slack <= x) & (x <= part.cell_upper + slack), axis=1)
        hits = np.flatnonzero(inside)
        if hits.size != 1:
            raise NoCell(f"x = {x} lies in {hits.size} cells")
        return int(hits[0])
    choice = tuple(cell_choices(instance, x, tol))
    lookup = _cell_lookup(part)
    try:
        return lookup[choice]
    except KeyError:
        raise NoCell(f"no cell for condition combination {choice}") from None


_LOOKUPS: dict = {}


def _cell_lookup(part) -> dict:
    key = id(part)
    cached = _LOOKUPS.get(key)
    if cached is None or cached[0] is not part:
        cached = (part, {tuple(int(v) for v in row): d for d, row in enumerate(part.cell_map)})
        _LOOKUPS[key] = cached
    return cached[1]


@dataclass
class IndicatorEncoding:
    """Binary variables and rows encoding cell membership in the master problem.

    Rows are over ``[x, v]``.  ``activation(d)`` is ``act_const[d] + act_coef[d] @ v``.
    """

    n_vars: int
    names: list
    A: np.ndarray  # (r, n1 + n_vars)
    relations: list
    b: np.ndarray
    act_const: np.ndarray  # (|D|,)
    act_coef: np.ndarray  # (|D|, n_vars)

    def activation(self, d: int, v) -> float:
        return float(self.act_const[d] + self.act_coef[d] @ np.asarray(v, float))

    def activations(self, v) -> np.ndarray:
        return self.act_const + self.act_coef @ np.asarray(v, float)

    def rows(self):
        return [(self.A[k], self.relations[k], self.b[k]) for k in range(self.b.size)]


def canonical_indicators(instance: SpInstance, enc: IndicatorEncoding, x) -> np.ndarray:
    """Values of the encoding variables implied by a first-stage point."""
    part = instance.partition
    if enc.n_vars == 0:
        return np.zeros(0)
    if isinstance(part, ExplicitDelta):
        v = np.zeros(enc.n_vars)
        v[identify_distribution(instance, x)] = 1.0
        return v
    choices = cell_choices(instance, x)
    sizes = ([part.intervals.shape[1]] * part.intervals.shape[0] if isinstance(part, BoxConditions)
             else [len(c) for c in part.conditions])
    v = np.zeros(enc.n_vars)
    offset = 0
    for k, size in zip(choices, sizes):
        v[offset + k] = 1.0
        offset += size
    return v


def build_indicator_encoding(instance: SpInstance) -> IndicatorEncoding:
    part = instance.partition
    fs = instance.first_stage
    n1 = fs.n
    D = instance.n_distributions
    if part is None or D == 1:
        return IndicatorEncoding(0, [], np.zeros((0, n1)), [], np.zeros(0), np.zeros(D), np.zeros((D, 0)))

    rows, rels, rhs = [], [], []

    def add(coef, rel, value):
        rows.append(coef)
        rels.append(rel)
        rhs.append(value)

    if isinstance(part, ExplicitDelta):
        nv = D
        names = [f"delta[{instance.distributions[d].id}]" for d in range(D)]
        for i in range(n1):
            for bound, rel, fallback in ((part.cell_lower, GE, fs.lower[i]), (part.cell_upper, LE, fs.upper[i])):
                col = bound[:, i].astype(float)
                if np.all(np.isinf(col)):
                    continue
                col = np.where(np.isinf(col), fallback, col)
                if np.any(np.isinf(col)):
                    raise UnsupportedPartition(f"cannot encode unbounded cell side on variable {i}")
                if rel == GE and np.all(col <= fs.lower[i]) or rel == LE and np.all(col >= fs.upper[i]):
                    continue
                coef = np.zeros(n1 + nv)
                coef[i] = 1.0
                coef[n1:] = -col
                add(coef, rel, 0.0)
        coef = np.zeros(n1 + nv)
        coef[n1:] = 1.0
        add(coef, EQ, 1.0)
        act_const = np.ones(D)
        act_coef = -np.eye(D)
    elif isinstance(part, BoxConditions):
        m, J, _ = part.intervals.shape
        nv = m * J
        names = [f"v[{i},{j}]" for i in range(m) for j in range(J)]
        for i in range(m):
            block = slice(n1 + i * J, n1 + (i + 1) * J)
            iv = part.intervals[i]
            if np.any(~np.isfinite(iv)):
                raise UnsupportedPartition("BoxConditions intervals must be finite")
            coef = np.zeros(n1 + nv)
            coef[block] = 1.0
            add(coef, EQ, 1.0)
            for col, rel in ((iv[:, 0], GE), (iv[:, 1], LE)):
                coef = np.zeros(n1 + nv)
                coef[:n1] = part.forms[i]
                coef[block] = -col
                add(coef, rel, 0.0)
        act_const = np.full(D, float(m))
        act_coef = np.zeros((D, nv))
        for d in range(D):
            for i in range(m):
                act_coef[d, i * J + part.cell_map[d, i]] = -1.0
    elif isinstance(part, BinarySegments):
        sizes = [len(c) for c in part.conditions]
        nv = sum(sizes)
        names = [f"v[{t},{k}]" for t, s in enumerate(sizes) for k in range(s)]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for t, seg in enumerate(part.segments):
            seg = list(seg)
            coef = np.zeros(n1 + nv)
            coef[n1 + offsets[t]:n1 + offsets[t + 1]] = 1.0
            add(coef, EQ, 1.0)
            lo_x, hi_x = fs.lower[seg], fs.upper[seg]
            if np.any(~np.isfinite(lo_x)) or np.any(~np.isfinite(hi_x)):
                raise UnsupportedPartition(f"segment {t} variables need finite bounds")
            for k, cond in enumerate(part.conditions[t]):
                a = np.asarray(cond.coef, float)
                amin = float(np.minimum(a * lo_x, a * hi_x).sum())
                amax = float(np.maximum(a * lo_x, a * hi_x).sum())
                col = n1 + offsets[t] + k
                if np.isfinite(cond.lower) and cond.lower > amin:
                    # a@x >= lower - (lower - amin)(1 - v)
                    coef = np.zeros(n1 + nv)
                    coef[seg] = a
                    coef[col] = -(cond.lower - amin)
                    add(coef, GE, amin)
                if np.isfinite(cond.upper) and cond.upper < amax:
                    coef = np.zeros(n1 + nv)
                    coef[seg] = a
                    coef[col] = amax - cond.upper
                    add(coef, LE, amax)
        T = len(part.segments)
        act_const = np.full(D, float(T))
        act_coef = np.zeros((D, nv))
        for d in range(D):
            for t in range(T):
                act_coef[d, offsets[t] + part.cell_map[d, t]] = -1.0
    else:
        raise UnsupportedPartition(f"unknown partition descriptor {type(part).__name__}")

    A = np.array(rows, dtype=float).reshape(len(rows), n1 + nv)
    return IndicatorEncoding(nv, names, A, rels, np.array(rhs, float), act_const, act_coef)


def first_stage_program(instance: SpInstance, enc: IndicatorEncoding | None = None,
                        cell: int | None = None) -> MixedIntegerProgram:
    """First stage plus membership encoding as a MIP over ``[x, v]``.

    With ``cell`` given, the encoding variables are fixed so that only
    points of that cell remain feasible.
    """
    fs = instance.first_stage
    enc = enc if enc is not None else build_indicator_encoding(instance)
    n1, nv = fs.n, enc.n_vars
    A = np.vstack([np.hstack([fs.A, np.zeros((fs.A.shape[0], nv))]), enc.A])
    rel = list(fs.relations) + list(enc.relations)
    b = np.concatenate([fs.b, enc.b])
    lo = np.concatenate([fs.lower, np.zeros(nv)])
    hi = np.concatenate([fs.upper, np.ones(nv)])
    if cell is not None and nv:
        # activation(cell) == 0 pins every indicator involved
        target = -enc.act_coef[cell]
        if isinstance(instance.partition, ExplicitDelta):
            target = np.eye(nv)[cell]
        lo[n1:] = target
        hi[n1:] = target
    lp = LinearProgram(np.concatenate([fs.c, np.zeros(nv)]), A, rel, b, lo, hi)
    return MixedIntegerProgram(lp, list(fs.domains) + [BINARY] * nv)


def check_first_stage_nonempty(instance: SpInstance) -> bool:
    sol = solve_milp(first_stage_program(instance), backend="highs")
    return sol.incumbent is not None


def relaxed_box(instance: SpInstance, enc: IndicatorEncoding | None = None):
    """Per-variable bounds of the LP relaxation of the first stage (with encoding)."""
    mip = first_stage_program(instance, enc)
    n1 = instance.n1
    lo = instance.first_stage.lower.copy()
    hi = instance.first_stage.upper.copy()
    base = mip.lp
    for i in range(n1):
        for sense in ("min", "max"):
            c = np.zeros(base.n)
            c[i] = 1.0
            sol = solve_lp(LinearProgram(c, base.A, base.relations, base.b, base.lower, base.upper, sense))
            if sol.optimal:
                if sense == "min":
                    lo[i] = max(lo[i], sol.objective)
                else:
                    hi[i] = min(hi[i], sol.objective)
    return lo, hi
