"""Bessel-potential kernels R_delta(x) = int_0^inf t^(delta/2 - 3/2) e^(-t) e^(-x^2/4t) dt.

R_delta is the (unnormalized) convolution kernel of (1 - d^2/dx^2)^(-delta/2).
It is evaluated by adaptive quadrature after the substitution t = e^s, with
the s-axis broken at the inner scale x^2/4, the saddle |x|/2 and t = 1.

Small-x behaviour: R ~ Gamma((1 - delta)/2) (|x|/2)^(delta - 1) for delta < 1,
R ~ -2 log|x| for delta = 1 and R(0) = Gamma((delta - 1)/2) for delta > 1.
Large-x behaviour: R ~ sqrt(pi) (|x|/2)^(delta/2 - 1) e^(-|x|).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import DomainError

EPSREL = 1e-11
EPS_LADDER = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
LP_OUTER = 40.0


def _breaks(x: float) -> list[float]:
    pts = {0.0}
    if x > 0:
        pts.update({np.log(x * x / 4.0), np.log(x / 2.0)})
    return sorted(pts)


def _integral(power: float, x: float) -> float:
    """int_0^inf t^power e^(-t - x^2/4t) dt via t = e^s."""
    c = x * x / 4.0

    def g(s):
        with np.errstate(over="ignore", divide="ignore"):
            t = np.exp(s)
            arg = (power + 1.0) * s - t
            if c > 0.0:
                arg -= c / t
            return float(np.exp(arg))

    b = _breaks(x)
    total, _ = quad(g, -np.inf, b[0], epsabs=0.0, epsrel=EPSREL, limit=200)
    for lo, hi in zip(b[:-1], b[1:]):
        total += quad(g, lo, hi, epsabs=0.0, epsrel=EPSREL, limit=200)[0]
    total += quad(g, b[-1], np.inf, epsabs=0.0, epsrel=EPSREL, limit=200)[0]
    return total


def _check_delta(delta: float) -> None:
    if not delta > 0:
        raise DomainError("delta must be positive")


def eval_R(delta: float, x: float) -> float:
    """R_delta(x); defined at x = 0 only for delta > 1."""
    _check_delta(delta)
    x = abs(float(x))
    if x == 0.0 and delta <= 1.0:
        raise DomainError("R_delta(0) is infinite for delta <= 1")
    return _integral(delta / 2.0 - 1.5, x)


def eval_R_prime(delta_plus_1: float, x: float) -> float:
    """d/dx R_{delta+1}(x) = -(x/2) int t^((delta+1)/2 - 5/2) e^(-t - x^2/4t) dt."""
    _check_delta(delta_plus_1)
    x = float(x)
    if x == 0.0:
        raise DomainError("derivative is not defined at x = 0")
    return -0.5 * x * _integral(delta_plus_1 / 2.0 - 2.5, abs(x))


def _R_vec(delta, xs):
    return np.array([eval_R(delta, x) for x in np.atleast_1d(xs)])


# ---------------------------------------------------------------------------
# asymptotics


@dataclass
class AsymptoteRecord:
    delta: float
    checks: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"delta": self.delta, "passed": self.passed, "checks": self.checks,
                "grids": {k: list(map(float, v)) for k, v in self.grids.items()},
                "ratios": {k: list(map(float, v)) for k, v in self.ratios.items()}}


def _check(measured, tolerance, passed) -> dict:
    return {"measured": float(measured), "tolerance": float(tolerance), "passed": bool(passed)}


def asymptote_check(delta: float) -> AsymptoteRecord:
    """Small-x and large-x envelope diagnostics for R_delta.

    * delta < 1: R(x) |x|^(1-delta) on [1e-6, 1e-2] is finite and varies by
      less than 10% over the two decades [1e-6, 1e-4].
    * delta = 1: R(x) / (-log x) varies by less than 25% on [1e-6, 1e-3].
    * delta > 1: R(1e-8) and R(1e-6) differ by less than 1%.
    * all delta: R(x) e^|x| is bounded and nonincreasing on [5, 20].
    """
    _check_delta(delta)
    rec = AsymptoteRecord(delta)
    if delta < 1:
        xs = np.logspace(-6, -2, 9)
        r = _R_vec(delta, xs) * xs ** (1.0 - delta)
        rec.grids["small"] = xs
        rec.ratios["small"] = r
        two = r[xs <= 1e-4 * (1 + 1e-9)]
        spread = two.max() / two.min() - 1.0
        rec.checks["small_x_power"] = _check(spread, 0.10, np.all(np.isfinite(r)) and spread < 0.10)
    elif delta == 1:
        xs = np.logspace(-6, -3, 7)
        r = _R_vec(delta, xs) / (-np.log(xs))
        rec.grids["small"] = xs
        rec.ratios["small"] = r
        spread = r.max() / r.min() - 1.0
        rec.checks["small_x_log"] = _check(spread, 0.25, spread < 0.25)
    else:
        xs = np.array([1e-8, 1e-6])
        v = _R_vec(delta, xs)
        rec.grids["small"] = xs
        rec.ratios["small"] = v
        rel = abs(v[0] - v[1]) / abs(v[0])
        rec.checks["small_x_bounded"] = _check(rel, 0.01, rel < 0.01)
    xs = np.linspace(5.0, 20.0, 16)
    r = _R_vec(delta, xs) * np.exp(xs)
    rec.grids["tail"] = xs
    rec.ratios["tail"] = r
    # allow relative rounding noise when the envelope is flat
    rise = float(np.max(np.diff(r) / r[:-1]))
    rec.checks["tail_exp_envelope"] = _check(rise, 1e-9, np.all(np.isfinite(r)) and rise <= 1e-9)
    return rec


# ---------------------------------------------------------------------------
# L^p membership


@dataclass
class LpClassification:
    delta: float
    p: float
    classification: str
    eps: list
    partial_integrals: list
    increments: list
    ratios: list

    def to_dict(self) -> dict:
        return {"delta": self.delta, "p": self.p, "classification": self.classification,
                "grids": {"eps": self.eps}, "ratios": self.ratios,
                "partial_integrals": self.partial_integrals, "increments": self.increments}


def _lp_piece(delta, p, lo, hi):
    """int_lo^hi R^p dx on a log scale."""
    f = lambda s: eval_R(delta, np.exp(s)) ** p * np.exp(s)  # noqa: E731
    return quad(f, np.log(lo), np.log(hi), epsabs=0.0, epsrel=1e-9, limit=200)[0]


def lp_classify(delta: float, p: float, eps_ladder=EPS_LADDER, A: float = LP_OUTER,
                shrink: float = 0.9, grow: float = 1.1) -> LpClassification:
    """Is R_delta in L^p? Watch int_{eps<|x|<A} R^p dx as eps shrinks.

    Increments between successive ladder rungs are compared: a ratio below
    ``shrink`` throughout means convergence, above ``grow`` divergence,
    anything else is inconclusive. For delta < 1 the critical exponent
    p = 1/(1 - delta) is always reported as inconclusive. ``p = inf`` checks
    that R stays bounded as x -> 0.
    """
    _check_delta(delta)
    if p < 1:
        raise DomainError("p must be >= 1")
    eps = sorted(eps_ladder, reverse=True)
    if np.isinf(p):
        vals = [eval_R(delta, e) for e in eps]
        incs = list(np.diff(vals))
        ratios = [abs(b) / abs(a) if a else 0.0 for a, b in zip(incs[:-1], incs[1:])]
        if all(r < shrink for r in ratios):
            label = "convergent"
        elif all(r > grow for r in ratios):
            label = "divergent"
        else:
            label = "inconclusive"
        return LpClassification(delta, p, label, eps, vals, incs, ratios)
    outer = 2.0 * _lp_piece(delta, p, eps[0], A)
    partial = [outer]
    for hi, lo in zip(eps[:-1], eps[1:]):
        partial.append(partial[-1] + 2.0 * _lp_piece(delta, p, lo, hi))
    incs = list(np.diff(partial))
    ratios = [b / a for a, b in zip(incs[:-1], incs[1:])]
    if delta < 1 and abs(p * (1.0 - delta) - 1.0) < 1e-12:
        label = "inconclusive"
    elif all(r < shrink for r in ratios):
        label = "convergent"
    elif all(r > grow for r in ratios):
        label = "divergent"
    else:
        label = "inconclusive"
    return LpClassification(delta, p, label, eps, partial, incs, ratios)
