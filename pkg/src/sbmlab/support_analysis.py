"""Observables behind the compact-support property of the density SPDE.

Right edges R_eps(t) = max{x_j : u_j(t) > eps}, their running supremum N,
occupation integrals J_T(x) = int_0^T u_t(x) dt, tail probabilities of J_T,
and extinction statistics with two independent Feller-diffusion oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import mannwhitneyu

from .spde_solver import GridFunction, Trajectory

EPS_LADDER = (1e-4, 1e-6, 1e-8)
MIN_ENSEMBLE = 200


def support_edge(u: GridFunction, eps: float) -> float | None:
    """Rightmost cell centre with u_j > eps, or None."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    idx = np.flatnonzero(u.values > eps)
    if idx.size == 0:
        return None
    return float(u.x[idx[-1]])


def edge_series(traj: Trajectory, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """(snapshot times, R_eps(t)) with NaN where no cell exceeds eps."""
    x = traj.grid.x
    above = traj.snapshots > eps
    last = np.where(above.any(axis=1), x.size - 1 - np.argmax(above[:, ::-1], axis=1), -1)
    edges = np.where(last >= 0, x[np.clip(last, 0, None)], np.nan)
    return traj.times.copy(), edges


def occupation_integral(traj: Trajectory, x_probe: float, t0: float = 0.0,
                        t1: float | None = None) -> float:
    """Trapezoid rule for int_{t0}^{t1} u_t(x_probe) dt on the step grid.

    The probe must be one of the trajectory's configured probes; its value
    is the nearest cell. Splitting [t0, t1] at a step boundary splits the
    sum exactly.
    """
    k = np.flatnonzero(np.isclose(traj.probe_x, x_probe, rtol=0, atol=1e-12))
    if k.size == 0:
        raise ValueError(f"x = {x_probe} was not recorded as a probe")
    grid = traj.grid
    a = grid.step_of(t0)
    b = grid.steps if t1 is None else grid.step_of(t1)
    v = traj.probe_vals[a:b + 1, k[0]]
    if v.size < 2:
        return 0.0
    return float(grid.dt * (np.sum(v) - 0.5 * (v[0] + v[-1])))


# ---------------------------------------------------------------------------
# per-replicate summaries for ensembles


def support_summary(traj: Trajectory, eps_ladder=EPS_LADDER, probes=()) -> np.ndarray:
    """Flat per-replicate record used by ensemble runs.

    Layout: edges for each eps (one per snapshot), extinction time (NaN if
    none), final mass, occupation integral at each probe.
    """
    parts = [edge_series(traj, e)[1] for e in eps_ladder]
    ext = traj.extinction_time
    parts.append(np.array([np.nan if ext is None else ext, traj.mass[-1]]))
    parts.append(np.array([occupation_integral(traj, x) for x in probes]))
    return np.concatenate(parts)


@dataclass
class SupportReport:
    times: np.ndarray
    eps_ladder: tuple
    edges: dict                 # eps -> (R, S) edge series
    extinction_time: np.ndarray  # NaN where the replicate survived
    final_mass: np.ndarray
    probes: tuple
    occupation: np.ndarray      # (R, P)
    L: float
    margin: float = 5.0

    @classmethod
    def from_rows(cls, rows: np.ndarray, times, eps_ladder, probes, L: float,
                  margin: float = 5.0) -> "SupportReport":
        S = len(times)
        edges = {}
        off = 0
        for e in eps_ladder:
            edges[e] = rows[:, off:off + S]
            off += S
        ext = rows[:, off]
        mass = rows[:, off + 1]
        occ = rows[:, off + 2:off + 2 + len(probes)]
        return cls(np.asarray(times), tuple(eps_ladder), edges, ext, mass, tuple(probes), occ, L, margin)

    @property
    def replicates(self) -> int:
        return int(self.final_mass.size)

    def N(self, eps: float) -> np.ndarray:
        """sup over recorded times of R_eps(t); NaN if never above eps."""
        e = self.edges[eps]
        out = np.full(e.shape[0], np.nan)
        has = ~np.all(np.isnan(e), axis=1)
        out[has] = np.nanmax(e[has], axis=1)
        return out

    def interior(self, eps: float) -> np.ndarray:
        """Per-replicate flag: N < L - margin (or no edge at all)."""
        n = self.N(eps)
        return np.isnan(n) | (n < self.L - self.margin)

    def extinction_fraction(self) -> tuple[float, float]:
        return binomial(np.sum(self.final_mass == 0.0), self.replicates)

    def to_dict(self) -> dict:
        out = {"replicates": self.replicates, "L": self.L, "margin": self.margin,
               "times": self.times.tolist(), "probes": list(self.probes), "eps": {}}
        for e in self.eps_ladder:
            n = self.N(e)
            fin = n[~np.isnan(n)]
            q = np.quantile(fin, [0.1, 0.5, 0.9]).tolist() if fin.size else [None] * 3
            out["eps"][repr(e)] = {
                "N_quantiles": dict(zip(["q10", "q50", "q90"], q)),
                "interior_fraction": float(np.mean(self.interior(e))),
            }
        frac, se = self.extinction_fraction()
        out["extinction_fraction"] = frac
        out["extinction_se"] = se
        return out


def binomial(successes, total) -> tuple[float, float]:
    p = float(successes) / total
    return p, float(np.sqrt(p * (1.0 - p) / total))


# ---------------------------------------------------------------------------
# tail probabilities of occupation integrals


@dataclass
class TailTable:
    probes: list
    p: float
    q: float
    prob_x: np.ndarray
    se_x: np.ndarray
    prob_0: float
    se_0: float

    @property
    def comparison(self) -> np.ndarray:
        """P(J_T(x) >= p) - P(J_T(0) >= q) per probe."""
        return self.prob_x - self.prob_0

    def monotone_violations(self, k_se: float = 2.0) -> list[int]:
        """Indices i where P(x_{i+1}) exceeds P(x_i) by more than k_se combined SEs."""
        bad = []
        for i in range(len(self.probes) - 1):
            tol = k_se * np.hypot(self.se_x[i], self.se_x[i + 1])
            if self.prob_x[i + 1] > self.prob_x[i] + tol:
                bad.append(i)
        return bad

    def to_dict(self) -> dict:
        return {"probes": list(self.probes), "p": self.p, "q": self.q,
                "P_x": self.prob_x.tolist(), "se_x": self.se_x.tolist(),
                "P_0": self.prob_0, "se_0": self.se_0,
                "comparison": self.comparison.tolist()}


def tail_decay(occupation: np.ndarray, probes, p: float, q: float,
               occupation_0: np.ndarray | None = None) -> TailTable:
    """Empirical P(J_T(x) >= p) along the probe ladder and P(J_T(0) >= q).

    ``occupation`` is (replicates, probes); ``occupation_0`` holds J_T(0)
    per replicate (taken from the probe at 0 if omitted).
    """
    occ = np.asarray(occupation, dtype=float)
    R = occ.shape[0]
    if R < MIN_ENSEMBLE:
        raise ValueError(f"tail_decay needs at least {MIN_ENSEMBLE} replicates")
    probes = list(probes)
    if occupation_0 is None:
        if 0.0 not in probes:
            raise ValueError("give occupation_0 or include 0 among the probes")
        occupation_0 = occ[:, probes.index(0.0)]
    hits = occ >= p
    prob = hits.mean(axis=0)
    se = np.sqrt(prob * (1 - prob) / R)
    p0, se0 = binomial(np.sum(np.asarray(occupation_0) >= q), R)
    return TailTable(probes, p, q, prob, se, p0, se0)


# ---------------------------------------------------------------------------
# extinction


def extinction_stats(final_mass) -> tuple[float, float]:
    """Fraction of replicates with m_T exactly 0 and its binomial SE."""
    m = np.asarray(final_mass, dtype=float)
    if m.size < MIN_ENSEMBLE:
        raise ValueError(f"extinction_stats needs at least {MIN_ENSEMBLE} replicates")
    return binomial(np.sum(m == 0.0), m.size)


def feller_extinction_ode(m0: float, T: float, lambdas=(1e3, 1e6, 1e9)) -> dict:
    """P(m_T = 0) for dm = sqrt(m) dW from the Laplace exponent.

    E exp(-lam m_T) = exp(-m0 v_T(lam)) with v' = -v^2/2, v(0) = lam; the
    extinction probability is the lam -> infinity limit. The ODE is solved
    numerically along a ladder of lam.
    """
    vals = []
    for lam in lambdas:
        sol = solve_ivp(lambda t, v: -0.5 * v * v, (0.0, T), [lam], method="Radau",
                        rtol=1e-11, atol=1e-12)
        vals.append(float(sol.y[0, -1]))
    probs = [float(np.exp(-m0 * v)) for v in vals]
    return {"formula": "exp(-m0 * lim v_T)", "lambdas": list(lambdas), "v_T": vals,
            "value": probs[-1], "error": abs(probs[-1] - probs[-2])}


def feller_extinction_mc(m0: float, T: float, paths: int, steps: int,
                         rng: np.random.Generator) -> tuple[float, float]:
    """Euler-Maruyama for dm = sqrt(m) dW, absorbed at 0; (fraction dead, SE)."""
    dt = T / steps
    sd = np.sqrt(dt)
    m = np.full(paths, float(m0))
    alive = np.ones(paths, dtype=bool)
    for _ in range(steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        mi = m[idx]
        mi = mi + np.sqrt(mi) * sd * rng.standard_normal(idx.size)
        dead = mi <= 0.0
        mi[dead] = 0.0
        m[idx] = mi
        alive[idx[dead]] = False
    return binomial(np.sum(~alive), paths)


# ---------------------------------------------------------------------------
# verdicts


@dataclass
class Verdict:
    eps: float
    interior_fraction: float
    median_N: float | None
    replicates: int
    contrast: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "interior_fraction": self.interior_fraction,
                "median_N": self.median_N, "replicates": self.replicates,
                "contrast": self.contrast}


def compact_support_verdict(report: SupportReport, eps: float, margin: float | None = None,
                            contrast: SupportReport | None = None, alpha: float = 0.05) -> Verdict:
    """Fraction of replicates whose running edge stays inside [-L, L - margin].

    With a ``contrast`` report (same configuration, another exponent) the
    record also holds a one-sided Mann-Whitney test that the edges of
    ``report`` are stochastically smaller.
    """
    if margin is not None:
        report = _with_margin(report, margin)
    n = report.N(eps)
    fin = n[~np.isnan(n)]
    med = float(np.median(fin)) if fin.size else None
    v = Verdict(eps, float(np.mean(report.interior(eps))), med, report.replicates)
    if contrast is not None:
        m = contrast.N(eps)
        a = np.where(np.isnan(n), -report.L, n)
        b = np.where(np.isnan(m), -contrast.L, m)
        test = mannwhitneyu(a, b, alternative="less")
        v.contrast = {"median_self": float(np.median(a)), "median_other": float(np.median(b)),
                      "p_value": float(test.pvalue), "alpha": alpha,
                      "passed": bool(np.median(a) < np.median(b) and test.pvalue < alpha)}
    return v


def _with_margin(report: SupportReport, margin: float) -> SupportReport:
    from dataclasses import replace

    return replace(report, margin=margin)
