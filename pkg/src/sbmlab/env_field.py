"""Covariance kernels and Gaussian environment fields.

The environment at branching epoch k is a centred Gaussian field xi_k with
covariance g(x, y). Fields are only ever needed at finitely many points (the
particle positions at that epoch, or the cells of an SPDE grid), so sampling
reduces to factorizing a finite covariance matrix.

Two factorizations are offered:

``pivoted``
    Greedy pivoted Cholesky that stops once every residual diagonal entry is
    below ``tol * g_max``. The residual is positive semidefinite, so every
    entry of ``K - L L^T`` is bounded by the same quantity. Rank-deficient
    kernels (constant, zero, smooth squared-exponential on clustered points)
    come out exactly low rank and cheap.
``dense``
    Full Cholesky with the jitter ladder ``eps * g_max * I``,
    ``eps in (0, 1e-14, 1e-12, 1e-10)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import backend
from .errors import FactorizationFailure

JITTER_LADDER = (0.0, 1e-14, 1e-12, 1e-10)
LOWRANK_TOL = 1e-10

VARIANTS = ("constant", "squared_exponential", "zero", "custom")


@dataclass(frozen=True)
class CovarianceKernel:
    """Environment covariance g(x, y).

    Use the ``constant``, ``squared_exponential`` and ``zero`` constructors.
    ``custom`` wraps an arbitrary vectorized callable and is meant for tests
    of the factorization error paths.
    """

    variant: str
    c: float = 0.0
    variance: float = 1.0
    length: float = 1.0
    func: Callable | None = field(default=None, compare=False, repr=False)
    bound: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == "constant" and self.c < 0:
            raise ValueError("constant kernel level must be >= 0")
        if self.variant == "squared_exponential":
            if self.variance < 0 or self.length <= 0:
                raise ValueError("squared_exponential needs variance >= 0 and length > 0")
        if self.variant == "custom" and (self.func is None or self.bound is None):
            raise ValueError("custom kernel needs func and bound")

    @classmethod
    def constant(cls, c: float) -> "CovarianceKernel":
        return cls("constant", c=float(c))

    @classmethod
    def squared_exponential(cls, variance: float = 1.0, length: float = 1.0) -> "CovarianceKernel":
        return cls("squared_exponential", variance=float(variance), length=float(length))

    @classmethod
    def zero(cls) -> "CovarianceKernel":
        return cls("zero")

    @classmethod
    def custom(cls, func: Callable, bound: float) -> "CovarianceKernel":
        return cls("custom", func=func, bound=float(bound))

    @property
    def g_max(self) -> float:
        """sup |g(x, y)|."""
        if self.variant == "constant":
            return self.c
        if self.variant == "squared_exponential":
            return self.variance
        if self.variant == "zero":
            return 0.0
        return float(self.bound)

    @property
    def is_zero(self) -> bool:
        return self.g_max == 0.0

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.variant == "constant":
            return np.full(np.broadcast(x, y).shape, self.c)[()]
        if self.variant == "zero":
            return np.zeros(np.broadcast(x, y).shape)[()]
        if self.variant == "squared_exponential":
            d = x - y
            return self.variance * np.exp(-(d * d) / (2.0 * self.length ** 2))
        return np.asarray(self.func(x, y), dtype=float)[()]

    def matrix(self, xs, ys=None) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        ys = xs if ys is None else np.asarray(ys, dtype=float)
        return np.asarray(self(xs[:, None], ys[None, :]), dtype=float)

    def diagonal(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return np.asarray(self(xs, xs), dtype=float).reshape(xs.shape)

    def to_dict(self) -> dict:
        if self.variant == "constant":
            return {"variant": "constant", "c": self.c}
        if self.variant == "squared_exponential":
            return {"variant": "squared_exponential", "variance": self.variance, "length": self.length}
        if self.variant == "zero":
            return {"variant": "zero"}
        raise ValueError("custom kernels are not serializable")

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceKernel":
        variant = d.get("variant")
        allowed = {"constant": {"c"}, "squared_exponential": {"variance", "length"}, "zero": set()}
        extra = set(d) - {"variant"} - allowed.get(variant, set())
        if variant in allowed and extra:
            raise ValueError(f"unknown {variant} kernel keys: {', '.join(sorted(extra))}")
        if variant == "constant":
            return cls.constant(d["c"])
        if variant == "squared_exponential":
            return cls.squared_exponential(d.get("variance", 1.0), d.get("length", 1.0))
        if variant == "zero":
            return cls.zero()
        raise ValueError(f"unknown kernel variant {variant!r}")


def eval_cov(kernel: CovarianceKernel, x, y):
    return kernel(x, y)


@dataclass
class EnvironmentField:
    points: np.ndarray
    values: np.ndarray
    epoch: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.points.shape != self.values.shape:
            raise ValueError("values must have the same length as points")


def dense_factor(cov: np.ndarray, g_max: float) -> np.ndarray:
    """Cholesky factor of ``cov`` using the jitter ladder."""
    m = cov.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    if g_max == 0.0:
        if np.any(cov != 0.0):
            raise FactorizationFailure("kernel reports g_max = 0 but matrix is nonzero")
        return np.zeros((m, 0))
    eye = np.eye(m)
    for eps in JITTER_LADDER:
        try:
            return np.linalg.cholesky(cov + eps * g_max * eye)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure(
        f"covariance of {m} points is not PSD even with jitter {JITTER_LADDER[-1]:g} * g_max"
    )


def lowrank_factor(kernel: CovarianceKernel, points, tol: float = LOWRANK_TOL) -> np.ndarray:
    """Pivoted Cholesky factor ``L`` (m x r) with ``max|K - L L^T| <= tol * g_max``."""
    x = np.asarray(points, dtype=float)
    m = x.size
    g_max = kernel.g_max
    if m == 0 or g_max == 0.0:
        return np.zeros((m, 0))
    if kernel.variant == "constant":
        return np.full((m, 1), np.sqrt(kernel.c))
    thresh = tol * g_max
    if kernel.variant == "squared_exponential":
        return _lowrank_se(kernel, x, thresh)
    d = kernel.diagonal(x).copy()
    if np.any(d < -thresh):
        raise FactorizationFailure("negative variance on the diagonal")
    L = np.zeros((m, min(m, 64)))
    k = 0
    while True:
        p = int(np.argmax(d))
        dp = d[p]
        if dp <= thresh:
            break
        if k == L.shape[1]:
            L = np.concatenate([L, np.zeros((m, L.shape[1]))], axis=1)
        col = kernel(x, x[p])
        if k:
            col = col - L[:, :k] @ L[p, :k]
        col = col / np.sqrt(dp)
        L[:, k] = col
        d -= col * col
        d[p] = 0.0
        k += 1
        if k == m:
            break
    L = L[:, :k]
    if np.any(d < -thresh):
        raise FactorizationFailure("covariance matrix is indefinite")
    if kernel.variant == "custom":
        # diagonal control bounds the residual only for PSD matrices
        resid = kernel.matrix(x) - L @ L.T
        if np.max(np.abs(resid)) > 10 * thresh:
            raise FactorizationFailure("covariance matrix is indefinite")
    return L


def _lowrank_se(kernel, x, thresh):
    pivoted = backend.get_pivoted_se()
    inv2l2 = 1.0 / (2.0 * kernel.length ** 2)
    m = x.size
    d = np.empty(m)
    cap = min(m, 32)
    while True:
        Lt = np.empty((cap, m))
        r = pivoted(x, kernel.variance, inv2l2, thresh, Lt, d)
        if r >= 0:
            return Lt[:r].T
        cap = min(m, 2 * cap)


def factorize(kernel: CovarianceKernel, points, method: str = "pivoted") -> np.ndarray:
    if method == "pivoted":
        return lowrank_factor(kernel, points)
    if method == "dense":
        return dense_factor(kernel.matrix(points), kernel.g_max)
    raise ValueError(f"unknown factorization method {method!r}")


def sample_field(kernel: CovarianceKernel, points, rng: np.random.Generator,
                 epoch: int = 0, method: str = "pivoted") -> EnvironmentField:
    """Draw xi at ``points``: jointly Gaussian, mean zero, covariance [g(x_i, x_j)]."""
    pts = np.asarray(points, dtype=float)
    L = factorize(kernel, pts, method)
    if L.shape[1] == 0:
        values = np.zeros(pts.shape)
    else:
        values = L @ rng.standard_normal(L.shape[1])
    return EnvironmentField(pts, values, epoch)


def clamp_env(value, n: int):
    """Clamp to [-sqrt(n), sqrt(n)]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    r = np.sqrt(n)
    out = np.minimum(np.maximum(value, -r), r)
    return out if isinstance(out, np.ndarray) else float(out)
