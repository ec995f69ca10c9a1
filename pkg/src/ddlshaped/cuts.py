"""Distribution-specific feasibility and optimality cuts.

Every cut is stored in one canonical form over the master variables::

    x_coef @ x + mu_coef * mu + big_m * activation_d(v) >= rhs

where ``activation_d`` is the affine expression of the indicator encoding
that vanishes exactly on cell ``d``.  Cuts without an owning cell have
``big_m = 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadBounds, NonBinaryX, NotViolated
from .lp import GE, Row
from .model import IndicatorEncoding

FEAS_TOL = 1e-8
BINARY_TOL = 1e-6


class CutKind(str, enum.Enum):
    CONT_FEAS = "ContFeas"
    CONT_OPT = "ContOpt"
    INT_FEAS = "IntFeas"
    INT_OPT = "IntOpt"
    DIST_IND = "DistInd"

    def __str__(self) -> str:
        return self.value


@dataclass
class Cut:
    kind: CutKind
    d: int | None
    x_coef: np.ndarray
    mu_coef: float
    rhs: float
    big_m: float = 0.0
    iteration: int | None = None
    x_v: np.ndarray | None = None
    scenario: int | None = None
    #: recourse value the cut reproduces at its generating point (optimality cuts)
    target_value: float | None = None
    family: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def is_optimality(self) -> bool:
        return self.mu_coef != 0

    @property
    def intercept(self) -> float:
        """Constant of the ``mu >= intercept + slope @ x`` reading (optimality cuts)."""
        return self.rhs / self.mu_coef

    @property
    def slope(self) -> np.ndarray:
        return -self.x_coef / self.mu_coef

    def mu_bound(self, x, activation: float = 0.0) -> float:
        """Smallest ``mu`` allowed by the cut at ``x`` (optimality cuts only)."""
        return (self.rhs - float(self.x_coef @ np.asarray(x, float)) - self.big_m * activation) / self.mu_coef

    def lhs(self, x, mu: float = 0.0, activation: float = 0.0) -> float:
        return float(self.x_coef @ np.asarray(x, float)) + self.mu_coef * mu + self.big_m * activation

    def violation(self, x, mu: float = 0.0, activation: float = 0.0) -> float:
        return max(0.0, self.rhs - self.lhs(x, mu, activation))

    def row(self, enc: IndicatorEncoding) -> Row:
        """Master row over ``[x, mu, v]``."""
        coef = np.concatenate([self.x_coef, [self.mu_coef], np.zeros(enc.n_vars)])
        rhs = self.rhs
        if self.d is not None and self.big_m:
            coef[self.x_coef.size + 1:] = self.big_m * enc.act_coef[self.d]
            rhs -= self.big_m * enc.act_const[self.d]
        return Row(coef, GE, rhs)

    def key(self, digits: int = 9) -> tuple:
        """Hash key for duplicate detection."""
        scale = max(1.0, abs(self.rhs), float(np.abs(self.x_coef).max(initial=0.0)))
        return (self.kind.value, self.d, round(self.mu_coef, digits),
                tuple(np.round(self.x_coef / scale, digits)), round(self.rhs / scale, digits),
                round(self.big_m / scale, digits))

    def describe(self, names=None, indicator: str | None = None) -> str:
        names = names or [f"x{i + 1}" for i in range(self.x_coef.size)]
        if self.is_optimality:
            terms = [f"{self.intercept:.6g}"]
            for name, coef in zip(names, self.slope):
                if abs(coef) > 1e-12:
                    terms.append(f"{'+' if coef > 0 else '-'} {_coef_str(abs(coef))}{name}")
            if self.big_m and self.d is not None:
                terms.append(f"- {self.big_m:.6g}*{indicator or f'act[{self.d}]'}")
            return "mu >= " + " ".join(terms)
        terms = [f"{'+' if c > 0 else '-'} {_coef_str(abs(c))}{n}" for n, c in zip(names, self.x_coef) if abs(c) > 1e-12]
        if self.big_m and self.d is not None:
            terms.append(f"+ {self.big_m:.6g}*{indicator or f'act[{self.d}]'}")
        return " ".join(terms).lstrip("+ ") + f" >= {self.rhs:.6g}"


def _coef_str(c: float) -> str:
    return "" if abs(c - 1) < 1e-12 else f"{c:.6g}*"


def gen_feas_cut_continuous(scen, x_v, d: int, s: int, sigma, sigma_kappa: float, U_feas: float,
                            tol: float = FEAS_TOL) -> Cut:
    """``sigma @ (h - T x) + kappa <= U_feas * activation_d``.

    ``sigma`` and ``sigma_kappa`` come from the phase-one problem at ``x_v``.
    """
    sigma = np.asarray(sigma, float)
    x_coef = scen.T.T @ sigma
    rhs = float(sigma @ scen.h) + sigma_kappa
    cut = Cut(CutKind.CONT_FEAS, d, x_coef, 0.0, rhs, big_m=float(U_feas), x_v=np.array(x_v, float), scenario=s)
    if cut.violation(x_v) <= tol:
        raise NotViolated(f"feasibility cut at scenario {s} is not violated by x^v")
    return cut


def gen_opt_cut_continuous(instance, x_v, d: int, evaluation, U_opt: float, mu_v: float | None = None,
                           tol: float = FEAS_TOL) -> Cut:
    """Expected duality cut ``mu >= sum_s pi_s (rho_s @ (h_s - T_s x) + kappa_s) - U * activation_d``."""
    x_v = np.asarray(x_v, float)
    slope = np.zeros(instance.n1)
    intercept = 0.0
    for scen, out in zip(instance.distributions[d].scenarios, evaluation.scenarios):
        slope -= scen.probability * (scen.T.T @ out.dual)
        intercept += scen.probability * (float(out.dual @ scen.h) + out.kappa)
    cut = Cut(CutKind.CONT_OPT, d, -slope, 1.0, intercept, big_m=float(U_opt), x_v=x_v,
              target_value=evaluation.lp_value)
    if mu_v is not None and cut.violation(x_v, mu_v) <= tol * (1 + abs(evaluation.lp_value)):
        raise NotViolated("optimality cut is not violated at (x^v, mu^v)")
    return cut


def _binary_support(x_v) -> np.ndarray:
    x_v = np.asarray(x_v, float)
    if np.any(np.abs(x_v - np.round(x_v)) > BINARY_TOL) or np.any((np.round(x_v) != 0) & (np.round(x_v) != 1)):
        raise NonBinaryX("integer cuts need a binary first-stage point")
    return np.round(x_v) == 1


def gen_feas_cut_integer(x_v) -> Cut:
    """No-good cut ``sum_I x - sum_notI x <= |I| - 1`` excluding exactly ``x_v``."""
    ones = _binary_support(x_v)
    x_coef = np.where(ones, -1.0, 1.0)
    return Cut(CutKind.INT_FEAS, None, x_coef, 0.0, 1.0 - ones.sum(), x_v=np.array(x_v, float))


def gen_opt_cut_integer(x_v, d: int, Q: float, L: float, U_opt: float, tol: float = 1e-9) -> Cut:
    """``mu >= (Q - L)(sum_I x - sum_notI x) - (Q - L)(|I| - 1) + L - U * activation_d``."""
    ones = _binary_support(x_v)
    if Q < L - tol * (1 + abs(L)):
        raise BadBounds(f"recourse value {Q} below its lower bound {L}")
    gap = Q - L
    x_coef = -gap * np.where(ones, 1.0, -1.0)
    rhs = -gap * (ones.sum() - 1) + L
    return Cut(CutKind.INT_OPT, d, x_coef, 1.0, rhs, big_m=float(U_opt), x_v=np.array(x_v, float), target_value=Q)


def affine_box_max(cut: Cut, lo: np.ndarray, hi: np.ndarray) -> float:
    """Largest value of the ``mu`` lower bound (activation 0) over a box of ``x``."""
    slope = cut.slope
    return cut.intercept + float(np.sum(np.where(slope > 0, slope * hi, slope * lo)))


def safe_big_m(cut: Cut, lo: np.ndarray, hi: np.ndarray, min_L: float) -> float:
    """Big-M that deactivates an optimality cut on the whole box, whatever the recourse there."""
    top = affine_box_max(cut, lo, hi)
    return max(0.0, top - min_L) if math.isfinite(top) else math.inf
