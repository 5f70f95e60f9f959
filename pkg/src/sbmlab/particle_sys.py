"""Rescaled branching particle system in a random environment.

Each particle carries mass 1/n and moves as a Brownian motion with generator
d^2/dx^2 (increments of variance 2 dt). At every epoch time i/n a fresh
Gaussian environment xi_i is drawn at the current particle positions and each
particle independently splits in two with probability
1/2 + clamp(xi(x), n) / (2 sqrt(n)), otherwise it dies.

Observations at an epoch time are taken after that epoch's branching. A time
t strictly between epochs is reached by splitting the motion step at t, which
is exact for Brownian increments.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env_field import (
    CovarianceKernel,
    EnvironmentField,
    clamp_env,
    factorize,
)
from .errors import MismatchedField
from .functions import TestFunction, laplacian_of
from .parallel import map_blocks
from .streams import derive_stream

TIME_EPS = 1e-12


@dataclass(frozen=True)
class InitialLaw:
    """Initial measure mu: a point mass or a uniform density on [lo, hi].

    Particle positions are placed deterministically (all at x0, or at the
    midpoint quantiles of the uniform law) so the configuration alone fixes
    X_0.
    """

    kind: str = "point"
    x0: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    mass: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "uniform"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        if self.mass <= 0:
            raise ValueError("initial mass must be positive")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise ValueError("uniform initial law needs lo < hi")

    @classmethod
    def point(cls, x0: float = 0.0, mass: float = 1.0) -> "InitialLaw":
        return cls("point", x0=float(x0), mass=float(mass))

    @classmethod
    def uniform(cls, lo: float, hi: float, mass: float = 1.0) -> "InitialLaw":
        return cls("uniform", lo=float(lo), hi=float(hi), mass=float(mass))

    def positions(self, K: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(K, self.x0)
        return self.lo + (np.arange(K) + 0.5) * (self.hi - self.lo) / K

    def to_dict(self) -> dict:
        if self.kind == "point":
            return {"kind": "point", "x0": self.x0, "mass": self.mass}
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi, "mass": self.mass}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialLaw":
        if d.get("kind", "point") == "point":
            return cls.point(d.get("x0", 0.0), d.get("mass", 1.0))
        return cls.uniform(d["lo"], d["hi"], d.get("mass", 1.0))


@dataclass(frozen=True)
class ParticleSystemConfig:
    n: int
    T: float
    kernel: CovarianceKernel = field(default_factory=CovarianceKernel.zero)
    initial: InitialLaw = field(default_factory=InitialLaw.point)
    K_n: int | None = None
    seed: int = 0
    factorization: str = "pivoted"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.K_n is None:
            object.__setattr__(self, "K_n", max(1, int(round(self.n * self.initial.mass))))
        if self.K_n < 1:
            raise ValueError("K_n must be >= 1")
        if abs(self.K_n / self.n - self.initial.mass) > 1.0 / self.n + 1e-12:
            raise ValueError("K_n / n must equal the initial mass within 1/n")

    @property
    def epochs(self) -> int:
        return epoch_floor(self.T, self.n)


@dataclass
class ParticlePopulation:
    positions: np.ndarray
    epoch: int
    n: int

    @property
    def mass_unit(self) -> float:
        return 1.0 / self.n

    @property
    def count(self) -> int:
        return int(self.positions.size)

    @property
    def total_mass(self) -> float:
        return self.count / self.n

    def integrate(self, f) -> float:
        """<f, X> = (1/n) sum_i f(x_i)."""
        if self.count == 0:
            return 0.0
        return float(np.sum(f(self.positions))) / self.n


def epoch_floor(t: float, n: int) -> int:
    return int(np.floor(t * n + 1e-9))


def initial_population(config: ParticleSystemConfig) -> ParticlePopulation:
    return ParticlePopulation(config.initial.positions(config.K_n), 0, config.n)


def step_motion(pop: ParticlePopulation, dt: float, rng: np.random.Generator) -> ParticlePopulation:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if pop.count == 0:
        return ParticlePopulation(pop.positions.copy(), pop.epoch, pop.n)
    pos = pop.positions + np.sqrt(2.0 * dt) * rng.standard_normal(pop.count)
    return ParticlePopulation(pos, pop.epoch, pop.n)


def branch_probabilities(xi, n: int) -> np.ndarray:
    return 0.5 + np.asarray(clamp_env(np.asarray(xi, dtype=float), n)) / (2.0 * np.sqrt(n))


def branch_epoch(pop: ParticlePopulation, env: EnvironmentField, n: int,
                 rng: np.random.Generator) -> ParticlePopulation:
    """Binary split or death of every particle, driven by the environment."""
    if env.points.shape != pop.positions.shape or not np.array_equal(env.points, pop.positions):
        raise MismatchedField("environment must be sampled at the particle positions")
    if pop.count == 0:
        return ParticlePopulation(pop.positions.copy(), pop.epoch + 1, pop.n)
    survive = rng.random(pop.count) < branch_probabilities(env.values, n)
    return ParticlePopulation(np.repeat(pop.positions[survive], 2), pop.epoch + 1, pop.n)


# ---------------------------------------------------------------------------
# path simulation


def _value_and_laplacian(f, x):
    if isinstance(f, TestFunction):
        if f.variant == "constant":
            return np.full(x.shape, f.a), None
        if f.variant == "gaussian_bump":
            w2 = f.width * f.width
            d = x - f.center
            d2 = d * d
            fv = f.height * np.exp(d2 * (-0.5 / w2))
            return fv, fv * (d2 / (w2 * w2) - 1.0 / w2)
    return np.asarray(f(x), dtype=float), laplacian_of(f, x)


def _cross_term(kernel, fvals, positions, n, factor=None, weight=1.0):
    """<g f(x) f(y), X (x) X> for the atoms in ``positions``.

    ``weight`` multiplies each atom (2 for surviving parents).
    """
    if kernel.is_zero or positions.size == 0:
        return 0.0
    w = fvals * weight
    if kernel.variant == "constant":
        s = float(np.sum(w)) / n
        return kernel.c * s * s
    if factor is None:
        factor = factorize(kernel, positions)
    v = w @ factor
    return float(v @ v) / (n * n)


class _Plan:
    """Observation and martingale-problem requests arranged by epoch."""

    def __init__(self, observables, mp_requests, n):
        self.observables = list(observables)
        self.mp = list(mp_requests)
        self.n = n
        times = [t for _, t in self.observables] + [t for _, t in self.mp]
        self.t_max = max(times) if times else 0.0
        self.last_epoch = epoch_floor(self.t_max, n)
        # (time, kind, index) for every observation, sorted by time
        self.events = sorted(
            [(t, 0, i) for i, (_, t) in enumerate(self.observables)]
            + [(t, 1, i) for i, (_, t) in enumerate(self.mp)]
        )


def _simulate(config: ParticleSystemConfig, plan: _Plan, rng: np.random.Generator):
    """One replicate. Returns (observable values, mp (M_t^2, Q_t) pairs)."""
    n = config.n
    kernel = config.kernel
    obs_out = np.zeros(len(plan.observables))
    mp_out = np.zeros((len(plan.mp), 2))
    mp_f0 = np.zeros(len(plan.mp))
    drift = np.zeros(len(plan.mp))
    quad = np.zeros(len(plan.mp))
    # per-epoch rates for the left-endpoint sums
    rate_drift = np.zeros(len(plan.mp))
    rate_quad = np.zeros(len(plan.mp))

    pop = initial_population(config)
    pos = pop.positions
    sqrt_n = np.sqrt(n)
    half_inv = 0.5 / sqrt_n

    def set_rates(positions, factor, weight):
        for j, (f, _) in enumerate(plan.mp):
            if positions.size == 0:
                rate_drift[j] = rate_quad[j] = 0.0
                continue
            fv, lap = _value_and_laplacian(f, positions)
            rate_drift[j] = 0.0 if lap is None else weight * float(np.sum(lap)) / n
            rate_quad[j] = weight * float(fv @ fv) / n + _cross_term(
                kernel, fv, positions, n, factor, weight)

    def observe(positions, t, kind, idx):
        if kind == 0:
            f = plan.observables[idx][0]
            obs_out[idx] = float(np.sum(f(positions))) / n if positions.size else 0.0
        else:
            f = plan.mp[idx][0]
            val = float(np.sum(f(positions))) / n if positions.size else 0.0
            m = val - mp_f0[idx] - drift[idx]
            mp_out[idx] = (m * m, quad[idx])

    if plan.mp:
        for j, (f, _) in enumerate(plan.mp):
            mp_f0[j] = float(np.sum(f(pos))) / n
        set_rates(pos, None, 1.0)

    ev = plan.events
    e = 0
    while e < len(ev) and ev[e][0] <= TIME_EPS:
        observe(pos, 0.0, ev[e][1], ev[e][2])
        e += 1

    for i in range(1, plan.last_epoch + 2):
        t_left = (i - 1) / n
        t_right = i / n
        # observations strictly inside (t_left, t_right), or at t_right when that
        # is past the last needed epoch (motion only, no branching)
        clock = t_left
        while e < len(ev) and ev[e][0] < t_right - TIME_EPS:
            t_obs = ev[e][0]
            if t_obs - clock > TIME_EPS and pos.size:
                pos = pos + np.sqrt(2.0 * (t_obs - clock)) * rng.standard_normal(pos.size)
            drift += rate_drift * (t_obs - clock)
            quad += rate_quad * (t_obs - clock)
            clock = t_obs
            while e < len(ev) and ev[e][0] <= t_obs + TIME_EPS:
                observe(pos, t_obs, ev[e][1], ev[e][2])
                e += 1
        if e >= len(ev):
            break
        if pos.size:
            pos = pos + np.sqrt(2.0 * (t_right - clock)) * rng.standard_normal(pos.size)
        drift += rate_drift * (t_right - clock)
        quad += rate_quad * (t_right - clock)

        # branching epoch i
        factor = None
        if pos.size:
            if kernel.is_zero:
                xi = np.zeros(pos.size)
            else:
                factor = factorize(kernel, pos, config.factorization)
                xi = factor @ rng.standard_normal(factor.shape[1])
            survive = rng.random(pos.size) < 0.5 + np.clip(xi, -sqrt_n, sqrt_n) * half_inv
            parents = pos[survive]
            if plan.mp:
                set_rates(parents, None if factor is None else factor[survive], 2.0)
            pos = np.repeat(parents, 2)
        elif plan.mp:
            rate_drift[:] = 0.0
            rate_quad[:] = 0.0
        while e < len(ev) and ev[e][0] <= t_right + TIME_EPS:
            observe(pos, t_right, ev[e][1], ev[e][2])
            e += 1
        if e >= len(ev):
            break
    return obs_out, mp_out


def _check_times(config, times):
    for t in times:
        if t < 0 or t > config.T + TIME_EPS:
            raise ValueError(f"observation time {t} outside [0, T={config.T}]")


def simulate_path(config: ParticleSystemConfig, observables: Sequence[tuple[Callable, float]],
                  replicate: int = 0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Values <f, X^n_t> for each (f, t) on one path."""
    _check_times(config, [t for _, t in observables])
    if rng is None:
        rng = derive_stream(config.seed, replicate, "particles")
    obs, _ = _simulate(config, _Plan(observables, [], config.n), rng)
    return obs


@dataclass
class EnsembleResult:
    """Per-replicate observable values and martingale-problem samples."""

    replicate_ids: np.ndarray
    values: np.ndarray          # (R, n_obs)
    mp: np.ndarray              # (R, n_mp, 2): (M_t^2, Q_t)

    @property
    def replicates(self) -> int:
        return int(self.values.shape[0])

    def stats(self, column: np.ndarray) -> dict:
        return summarize(column)

    def observable_stats(self) -> list[dict]:
        return [summarize(self.values[:, k]) for k in range(self.values.shape[1])]


def summarize(x) -> dict:
    x = np.asarray(x, dtype=float)
    R = x.size
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1)) if R > 1 else 0.0
    return {"mean": mean, "variance": var, "se": float(np.sqrt(var / R)) if R else 0.0,
            "replicates": int(R)}


def _run_block(ids, config, observables, mp_requests):
    plan = _Plan(observables, mp_requests, config.n)
    vals = np.zeros((len(ids), len(observables)))
    mps = np.zeros((len(ids), len(mp_requests), 2))
    for k, rid in enumerate(ids):
        rng = derive_stream(config.seed, int(rid), "particles")
        vals[k], mps[k] = _simulate(config, plan, rng)
    return vals, mps


def run_ensemble(config: ParticleSystemConfig, observables: Sequence[tuple[Callable, float]],
                 replicates: int, workers: int = 1,
                 mp_requests: Sequence[tuple[Callable, float]] = (),
                 replicate_ids: Sequence[int] | None = None) -> EnsembleResult:
    """Simulate ``replicates`` independent paths.

    ``replicate_ids`` overrides the stream index of each replicate (for
    instance ``[0, 0]`` forces two identical paths).
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    ids = list(range(replicates)) if replicate_ids is None else [int(i) for i in replicate_ids]
    if len(ids) != replicates:
        raise ValueError("replicate_ids must have one entry per replicate")
    _check_times(config, [t for _, t in observables] + [t for _, t in mp_requests])
    parts = map_blocks(_run_block, ids, workers, config=config,
                       observables=list(observables), mp_requests=list(mp_requests))
    vals = np.concatenate([p[0] for p in parts], axis=0)
    mps = np.concatenate([p[1] for p in parts], axis=0)
    return EnsembleResult(np.asarray(ids), vals, mps)


@dataclass
class MPResult:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    replicates: int

    @property
    def combined_se(self) -> float:
        return float(np.hypot(self.lhs_se, self.rhs_se))

    @property
    def z(self) -> float:
        se = self.combined_se
        return 0.0 if se == 0 else (self.lhs - self.rhs) / se


def mp_result(samples: np.ndarray) -> MPResult:
    """Reduce (R, 2) samples of (M_t^2, Q_t) to the two estimates."""
    lhs = summarize(samples[:, 0])
    rhs = summarize(samples[:, 1])
    return MPResult(lhs["mean"], rhs["mean"], lhs["se"], rhs["se"], lhs["replicates"])


def check_mp(config: ParticleSystemConfig, f: Callable, t: float, replicates: int,
             workers: int = 1) -> MPResult:
    """Compare E[(M_t^f)^2] with E[int <f^2, X_s> ds + int <g f(x) f(y), X_s (x) X_s> ds].

    M_t^f = <f, X_t> - <f, X_0> - int_0^t <f'', X_s> ds; both time integrals
    are left-endpoint sums on the epoch grid. The Laplacian is analytic for
    ``TestFunction`` inputs and a central difference with step
    ``functions.FD_STEP`` otherwise.
    """
    res = run_ensemble(config, [], replicates, workers, mp_requests=[(f, t)])
    return mp_result(res.mp[:, 0, :])
