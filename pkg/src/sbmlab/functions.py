"""Test functions, pair functions and finite measures.

These are the small, picklable value types passed between the particle
system, the moment formulas and the SPDE estimators. All evaluations are
vectorized over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

FD_STEP = 1e-4  # finite-difference step for Laplacians of generic callables

TEST_VARIANTS = ("constant", "gaussian_bump", "indicator_box")


@dataclass(frozen=True)
class TestFunction:
    """Bounded test function f on the line.

    ``gaussian_bump``: height * exp(-(x - center)^2 / (2 width^2)).
    ``indicator_box``: 1 on [lo, hi]; infinite endpoints are allowed.
    """

    __test__ = False  # keep pytest from collecting this class

    variant: str
    a: float = 1.0
    center: float = 0.0
    width: float = 1.0
    height: float = 1.0
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if self.variant not in TEST_VARIANTS:
            raise ValueError(f"unknown test function variant {self.variant!r}")
        if self.variant == "gaussian_bump" and self.width <= 0:
            raise ValueError("gaussian_bump width must be positive")
        if self.variant == "indicator_box" and not self.lo <= self.hi:
            raise ValueError("indicator_box needs lo <= hi")

    @classmethod
    def constant(cls, a: float = 1.0) -> "TestFunction":
        return cls("constant", a=float(a))

    @classmethod
    def gaussian_bump(cls, center: float = 0.0, width: float = 1.0, height: float = 1.0) -> "TestFunction":
        return cls("gaussian_bump", center=float(center), width=float(width), height=float(height))

    @classmethod
    def indicator_box(cls, lo: float, hi: float) -> "TestFunction":
        return cls("indicator_box", lo=float(lo), hi=float(hi))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.variant == "constant":
            return np.full(x.shape, self.a)[()]
        if self.variant == "gaussian_bump":
            d = x - self.center
            return (self.height * np.exp(-(d * d) / (2.0 * self.width ** 2)))[()]
        return ((x >= self.lo) & (x <= self.hi)).astype(float)[()]

    @property
    def sup_norm(self) -> float:
        if self.variant == "constant":
            return abs(self.a)
        if self.variant == "gaussian_bump":
            return abs(self.height)
        return 1.0 if self.hi > self.lo else 0.0

    @property
    def smooth(self) -> bool:
        return self.variant != "indicator_box"

    def laplacian(self, x):
        """f''(x), analytic for the smooth variants."""
        x = np.asarray(x, dtype=float)
        if self.variant == "constant":
            return np.zeros(x.shape)[()]
        if self.variant == "gaussian_bump":
            w2 = self.width ** 2
            d = x - self.center
            return (self(x) * (d * d / (w2 * w2) - 1.0 / w2))[()]
        raise ValueError("indicator_box has no Laplacian")

    def to_dict(self) -> dict:
        if self.variant == "constant":
            return {"variant": "constant", "a": self.a}
        if self.variant == "gaussian_bump":
            return {"variant": "gaussian_bump", "center": self.center,
                    "width": self.width, "height": self.height}
        return {"variant": "indicator_box", "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunction":
        v = d.get("variant")
        if v == "constant":
            return cls.constant(d.get("a", 1.0))
        if v == "gaussian_bump":
            return cls.gaussian_bump(d.get("center", 0.0), d.get("width", 1.0), d.get("height", 1.0))
        if v == "indicator_box":
            return cls.indicator_box(d.get("lo", -np.inf), d.get("hi", np.inf))
        raise ValueError(f"unknown test function variant {v!r}")


def laplacian_of(f, x, step: float = FD_STEP):
    """Analytic Laplacian when available, else a central second difference."""
    if isinstance(f, TestFunction):
        return f.laplacian(x)
    x = np.asarray(x, dtype=float)
    return (f(x + step) - 2.0 * f(x) + f(x - step)) / (step * step)


@dataclass(frozen=True)
class ProductFunction:
    """x -> phi(x) psi(x); the diagonal of a tensor pair function."""

    phi: Callable
    psi: Callable

    def __call__(self, x):
        return np.asarray(self.phi(x)) * np.asarray(self.psi(x))


@dataclass(frozen=True)
class NodalFunction:
    """Piecewise-linear function through (nodes, values); zero outside."""

    nodes: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)


class PairFunction:
    """F(x, y), either a tensor phi (x) psi or a table on a square grid."""

    def __init__(self, phi=None, psi=None, nodes=None, table=None):
        if phi is not None:
            self.kind = "tensor"
            self.phi = phi
            self.psi = phi if psi is None else psi
            self.nodes = None
            self.table = None
        elif nodes is not None and table is not None:
            self.kind = "grid"
            self.phi = self.psi = None
            self.nodes = np.asarray(nodes, dtype=float)
            self.table = np.asarray(table, dtype=float)
            n = self.nodes.size
            if self.table.shape != (n, n):
                raise ValueError("table must be len(nodes) x len(nodes)")
            self._interp = RegularGridInterpolator(
                (self.nodes, self.nodes), self.table, bounds_error=False, fill_value=0.0)
        else:
            raise ValueError("give phi (and optionally psi) or nodes and table")

    @classmethod
    def tensor(cls, phi, psi=None) -> "PairFunction":
        return cls(phi=phi, psi=psi)

    @classmethod
    def grid(cls, nodes, table) -> "PairFunction":
        return cls(nodes=nodes, table=table)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "tensor":
            return np.asarray(self.phi(x)) * np.asarray(self.psi(y))
        x, y = np.broadcast_arrays(x, y)
        pts = np.stack([x.ravel(), y.ravel()], axis=-1)
        return self._interp(pts).reshape(x.shape)[()]

    def on_grid(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=float)
        if self.kind == "tensor":
            return np.outer(self.phi(nodes), self.psi(nodes))
        return self(nodes[:, None], nodes[None, :])

    @property
    def sup_norm(self) -> float:
        if self.kind == "grid":
            return float(np.max(np.abs(self.table)))
        return _sup(self.phi) * _sup(self.psi)


def _sup(f) -> float:
    if isinstance(f, TestFunction):
        return f.sup_norm
    raise ValueError("sup norm of a generic callable is unknown")


@dataclass(frozen=True)
class FiniteMeasure:
    """Finite measure with finitely many atoms."""

    points: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.points) != len(self.weights) or not self.points:
            raise ValueError("need matching, non-empty points and weights")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if sum(self.weights) <= 0:
            raise ValueError("total mass must be positive")

    @classmethod
    def point_mass(cls, x0: float = 0.0, w: float = 1.0) -> "FiniteMeasure":
        return cls((float(x0),), (float(w),))

    @classmethod
    def weighted_points(cls, atoms: Sequence) -> "FiniteMeasure":
        pts, ws = zip(*atoms)
        return cls(tuple(float(p) for p in pts), tuple(float(w) for w in ws))

    @property
    def total_mass(self) -> float:
        return float(sum(self.weights))

    def integrate(self, f) -> float:
        vals = np.asarray(f(np.asarray(self.points)), dtype=float)
        return float(np.dot(self.weights, vals))

    def to_dict(self) -> dict:
        return {"points": list(self.points), "weights": list(self.weights)}
