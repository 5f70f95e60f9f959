"""First and second moments of the limiting measure-valued process.

Everything here is built from three pieces:

* the heat semigroup P_t with generator d^2/dx^2, i.e. convolution with the
  kernel (4 pi t)^(-1/2) exp(-x^2 / 4t);
* the pair semigroup Q_t^g on the plane, generated by the two-variable
  Laplacian plus the potential g(x, y), evaluated either by Feynman-Kac
  weighting of two independent motions or by an explicit grid solver;
* the diagonal restriction (pi F)(x) = F(x, x).

The second moment is
    <Q_t^g(phi (x) phi), mu (x) mu> + int_0^t <P_s pi Q_{t-s}^g(phi (x) phi), mu> ds
and the Gronwall-type upper bound is
    (<P_t f, mu>^2 + int_0^t <mu, P_s[(P_{t-s} f)^2]> ds) * exp(||g|| t).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf, roots_hermite

from .env_field import CovarianceKernel
from .errors import DomainError, StabilityError
from .functions import (
    FiniteMeasure,
    NodalFunction,
    PairFunction,
    ProductFunction,
    TestFunction,
)
from .streams import derive_stream

GH_NODES = 96
SIMPSON_INTERVALS = 16
GH_TOL = 1e-11


def heat_kernel(t: float, x):
    if t <= 0:
        raise DomainError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    return ((4.0 * np.pi * t) ** -0.5 * np.exp(-(x * x) / (4.0 * t)))[()]


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _hermite(k: int):
    if k not in _GH_CACHE:
        z, w = roots_hermite(k)
        _GH_CACHE[k] = (z, w / np.sqrt(np.pi))
    return _GH_CACHE[k]


def apply_Pt(f: Callable, t: float, x, nodes: int = GH_NODES):
    """(P_t f)(x) = E f(x + sqrt(2t) Z).

    Gauss-Hermite quadrature; for a Gaussian bump narrower than the heat
    kernel the bump itself is used as the weight, which keeps the integrand
    smooth and wide. Indicator boxes use the exact erf expression.
    """
    if t < 0:
        raise DomainError("apply_Pt needs t >= 0")
    x = np.asarray(x, dtype=float)
    if t == 0:
        return np.asarray(f(x), dtype=float)[()]
    if isinstance(f, TestFunction):
        if f.variant == "constant":
            return np.full(x.shape, f.a)[()]
        if f.variant == "indicator_box":
            scale = np.sqrt(4.0 * t)
            return (0.5 * (erf((f.hi - x) / scale) - erf((f.lo - x) / scale)))[()]
        if f.width < np.sqrt(2.0 * t):
            # integrate the heat kernel against the bump's own Gaussian weight
            z, w = _hermite(nodes)
            y = f.center + np.sqrt(2.0) * f.width * z
            k = heat_kernel(t, x[..., None] - y)
            return (f.height * np.sqrt(2.0 * np.pi) * f.width * (k @ w))[()]
    return _gh_refined(f, t, x, nodes)


def _gh_refined(f, t, x, nodes):
    """Gauss-Hermite with node doubling until two levels agree.

    Generic callables may vary on scales much finer than sqrt(t).
    """
    prev = None
    for k in (nodes, 2 * nodes, 4 * nodes, 8 * nodes):
        z, w = _hermite(k)
        y = x[..., None] + np.sqrt(4.0 * t) * z
        val = np.asarray(f(y), dtype=float) @ w
        if prev is not None and np.max(np.abs(val - prev), initial=0.0) <= GH_TOL * (1.0 + np.max(np.abs(val), initial=0.0)):
            break
        prev = val
    return val[()]


def first_moment(mu: FiniteMeasure, f: Callable, t: float) -> float:
    """<P_t f, mu>."""
    return float(np.dot(mu.weights, np.atleast_1d(apply_Pt(f, t, np.asarray(mu.points)))))


# ---------------------------------------------------------------------------
# pair semigroup


def _fk_samples(kernel: CovarianceKernel, F: Callable, x0, y0, t: float, dt: float,
                rng: np.random.Generator) -> np.ndarray:
    """F(X_t, Y_t) exp(sum g(X, Y) dt) per path, left-point weight."""
    X = np.array(x0, dtype=float, copy=True)
    Y = np.array(y0, dtype=float, copy=True)
    steps = max(1, int(np.ceil(t / dt - 1e-9)))
    h = t / steps
    sd = np.sqrt(2.0 * h)
    acc = np.zeros(X.shape)
    for _ in range(steps):
        if not kernel.is_zero:
            acc += kernel(X, Y)
        X += sd * rng.standard_normal(X.shape)
        Y += sd * rng.standard_normal(Y.shape)
    return np.asarray(F(X, Y), dtype=float) * np.exp(h * acc)


def pair_semigroup_fk(kernel: CovarianceKernel, F: Callable, t: float, x: float, y: float,
                      paths: int = 100_000, dt: float | None = None,
                      rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Feynman-Kac estimate of (Q_t^g F)(x, y) and its standard error.

    The two coordinates follow independent motions with increments of
    variance 2 dt; the potential enters through a left-point sum. ``dt``
    defaults to t / 256.
    """
    if t <= 0:
        raise DomainError("pair_semigroup_fk needs t > 0")
    dt = t / 256 if dt is None else dt
    if not 0 < dt <= t:
        raise DomainError("need 0 < dt <= t")
    if paths < 100:
        raise DomainError("need at least 100 paths")
    rng = derive_stream(0, 0, "pair-fk") if rng is None else rng
    s = _fk_samples(kernel, F, np.full(paths, float(x)), np.full(paths, float(y)), t, dt, rng)
    return float(np.mean(s)), float(np.std(s, ddof=1) / np.sqrt(paths))


@dataclass(frozen=True)
class PairGrid:
    """Square grid of nodes -L, -L + h, ..., L for the pair solver."""

    L: float = 7.0
    h: float = 0.05
    dt: float | None = None  # defaults to the stability limit h^2 / 4

    @property
    def nodes(self) -> np.ndarray:
        N = int(round(2 * self.L / self.h))
        return -self.L + self.h * np.arange(N + 1)

    @property
    def dt_max(self) -> float:
        return self.h * self.h / 4.0


@dataclass
class PairSolution:
    nodes: np.ndarray
    times: np.ndarray
    tables: np.ndarray  # (len(times), N, N)

    def table(self, k: int = -1) -> PairFunction:
        return PairFunction.grid(self.nodes, self.tables[k])


def _neumann_laplacian(V: np.ndarray, inv_h2: float) -> np.ndarray:
    P = np.pad(V, 1, mode="reflect")
    return ((P[:-2, 1:-1] + P[2:, 1:-1]) + (P[1:-1, :-2] + P[1:-1, 2:]) - 4.0 * V) * inv_h2


def pair_semigroup_pde(kernel: CovarianceKernel, F: Callable, t: float,
                       grid: PairGrid = PairGrid(), times=None) -> PairSolution:
    """Explicit finite differences for dV/ds = (d_xx + d_yy) V + g V, V_0 = F.

    Each step is an explicit diffusion step followed by multiplication by
    exp(g dt), so a constant potential is reproduced exactly.

    Zero-flux (mirror) boundaries. ``times`` lists extra snapshot times in
    [0, t]; each must be a whole number of time steps. The step defaults to
    the largest value <= h^2/4 that divides every requested time.
    """
    if t < 0:
        raise DomainError("pair_semigroup_pde needs t >= 0")
    times = np.unique(np.append(np.asarray([] if times is None else times, dtype=float), t))
    if np.any(times < 0) or np.any(times > t + 1e-12):
        raise DomainError("snapshot times must lie in [0, t]")
    if grid.dt is None:
        base = _common_step(times)
        sub = max(1, int(np.ceil(base / grid.dt_max - 1e-9)))
        dt = base / sub if base > 0 else grid.dt_max
    else:
        dt = grid.dt
    if dt > grid.dt_max * (1 + 1e-12):
        raise StabilityError(f"dt = {dt:g} exceeds the stability bound h^2/4 = {grid.dt_max:g}")
    marks = np.rint(times / dt).astype(int)
    if np.any(np.abs(marks * dt - times) > 1e-9 * max(t, 1.0)):
        raise DomainError("snapshot times must be multiples of dt")

    x = grid.nodes
    if isinstance(F, PairFunction):
        V = F.on_grid(x)
    else:
        V = np.broadcast_to(np.asarray(F(x[:, None], x[None, :]), dtype=float), (x.size, x.size)).copy()
    # potential applied as an exact factor exp(g dt) after each diffusion step
    E = None if kernel.is_zero else np.exp(dt * kernel.matrix(x))
    inv_h2 = 1.0 / (grid.h * grid.h)
    out = np.empty((times.size, x.size, x.size))
    k = 0
    for step in range(int(marks[-1]) + 1):
        while k < times.size and marks[k] == step:
            out[k] = V
            k += 1
        if step == marks[-1]:
            break
        V = V + dt * _neumann_laplacian(V, inv_h2)
        if E is not None:
            V *= E
    return PairSolution(x, times, out)


def _common_step(times: np.ndarray) -> float:
    """Largest step dividing all ``times`` (they are assumed commensurate)."""
    pos = times[times > 0]
    if pos.size == 0:
        return 0.0
    base = pos.min()
    for q in range(1, 1025):
        step = base / q
        r = pos / step
        if np.all(np.abs(r - np.rint(r)) < 1e-9):
            return step
    raise DomainError("snapshot times are not commensurate")


def diagonal_restrict(F: PairFunction):
    """x -> F(x, x)."""
    if F.kind == "tensor":
        return ProductFunction(F.phi, F.psi)
    return NodalFunction(F.nodes, np.diagonal(F.table).copy())


# ---------------------------------------------------------------------------
# second moment and the Gronwall bound


def simpson_weights(a: float, b: float, intervals: int) -> tuple[np.ndarray, np.ndarray]:
    if intervals < 2 or intervals % 2:
        raise ValueError("Simpson needs an even number of intervals >= 2")
    s = np.linspace(a, b, intervals + 1)
    w = np.ones(intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return s, w * (b - a) / (3.0 * intervals)


@dataclass
class MomentEstimate:
    value: float
    error: float
    method: str
    details: dict = field(default_factory=dict)


def _grid_heat(values: np.ndarray, nodes: np.ndarray, s: float, x: np.ndarray) -> np.ndarray:
    """Trapezoid rule for int p_s(x - y) v(y) dy over the grid nodes."""
    if s == 0:
        return np.interp(x, nodes, values)
    h = nodes[1] - nodes[0]
    w = np.full(nodes.size, h)
    w[0] = w[-1] = h / 2
    return heat_kernel(s, x[:, None] - nodes[None, :]) @ (w * values)


def second_moment(mu: FiniteMeasure, phi: Callable, t: float, kernel: CovarianceKernel,
                  method: str = "pde", intervals: int = SIMPSON_INTERVALS,
                  grid: PairGrid | None = None, paths: int = 100_000, dt: float | None = None,
                  seed: int = 0) -> MomentEstimate:
    """E_mu <phi, X_t>^2 from the pair-semigroup representation.

    ``method='pde'`` uses the grid solver (error bar: the change in the
    Simpson sum when halving the number of intervals); ``method='fk'`` uses
    Feynman-Kac paths (error bar: Monte Carlo standard error propagated
    through the Simpson weights).
    """
    if t < 0:
        raise DomainError("second_moment needs t >= 0")
    pts = np.asarray(mu.points, dtype=float)
    wts = np.asarray(mu.weights, dtype=float)
    if t == 0:
        v = float(np.dot(wts, np.atleast_1d(phi(pts))))
        return MomentEstimate(v * v, 0.0, method)
    F = PairFunction.tensor(phi)
    s_nodes, s_w = simpson_weights(0.0, t, intervals)
    if method == "pde":
        grid = grid or PairGrid()
        sol = pair_semigroup_pde(kernel, F, t, grid, times=t - s_nodes)
        nodes = sol.nodes
        # solution snapshot at time tau = t - s
        by_tau = {round(tau, 12): k for k, tau in enumerate(sol.times)}

        def table(tau):
            return sol.tables[by_tau[round(tau, 12)]]

        Vt = PairFunction.grid(nodes, table(t))
        term1 = float(wts @ Vt(pts[:, None], pts[None, :]) @ wts)
        inner = np.empty(s_nodes.size)
        for k, s in enumerate(s_nodes):
            diag = np.diagonal(table(max(t - s, 0.0)))
            inner[k] = float(wts @ _grid_heat(diag, nodes, s, pts))
        term2 = float(s_w @ inner)
        s_half, w_half = simpson_weights(0.0, t, intervals // 2) if intervals % 4 == 0 else (None, None)
        err = 0.0
        if s_half is not None:
            coarse = float(w_half @ inner[::2])
            err = abs(term2 - coarse)
        return MomentEstimate(term1 + term2, err, "pde",
                              {"term1": term1, "term2": term2, "h": grid.h, "L": grid.L})
    if method == "fk":
        dt = t / 256 if dt is None else dt
        rng = derive_stream(seed, 0, "second-moment-fk")
        term1 = 0.0
        var1 = 0.0
        for i, xi in enumerate(pts):
            for j, xj in enumerate(pts):
                est, se = pair_semigroup_fk(kernel, F, t, xi, xj, paths, dt, rng)
                term1 += wts[i] * wts[j] * est
                var1 += (wts[i] * wts[j] * se) ** 2
        inner = np.zeros(s_nodes.size)
        inner_var = np.zeros(s_nodes.size)
        for k, s in enumerate(s_nodes):
            tau = t - s
            for i, xi in enumerate(pts):
                if tau <= 0:
                    inner[k] += wts[i] * float(apply_Pt(diagonal_restrict(F), s, xi))
                    continue
                start = xi + np.sqrt(2.0 * s) * rng.standard_normal(paths)
                samp = _fk_samples(kernel, F, start, start.copy(), tau, dt, rng)
                inner[k] += wts[i] * float(np.mean(samp))
                inner_var[k] += (wts[i] ** 2) * float(np.var(samp, ddof=1)) / paths
        term2 = float(s_w @ inner)
        err = float(np.sqrt(var1 + (s_w ** 2) @ inner_var))
        return MomentEstimate(term1 + term2, err, "fk", {"term1": term1, "term2": term2, "dt": dt})
    raise ValueError(f"unknown method {method!r}")


def gronwall_bound(mu: FiniteMeasure, f: Callable, t: float, kernel: CovarianceKernel,
                   intervals: int = SIMPSON_INTERVALS) -> float:
    """(<P_t f, mu>^2 + int_0^t <mu, P_s[(P_{t-s} f)^2]> ds) exp(||g|| t)."""
    if t < 0:
        raise DomainError("gronwall_bound needs t >= 0")
    pts = np.asarray(mu.points, dtype=float)
    first = first_moment(mu, f, t)
    if t == 0:
        return first * first
    s_nodes, s_w = simpson_weights(0.0, t, intervals)
    inner = np.empty(s_nodes.size)
    for k, s in enumerate(s_nodes):
        tau = t - s

        def sq(y, tau=tau):
            v = apply_Pt(f, tau, y)
            return np.asarray(v) * np.asarray(v)

        inner[k] = float(np.dot(mu.weights, np.atleast_1d(apply_Pt(sq, s, pts))))
    return (first * first + float(s_w @ inner)) * float(np.exp(kernel.g_max * t))


def oracle_record(formula: str, params: dict, value: float, error: float) -> dict:
    """JSON-ready oracle record."""
    return {"formula": formula, "params": params, "value": float(value), "error": float(error)}
