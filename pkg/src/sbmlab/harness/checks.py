"""Crosscheck recipes: simulations compared against independent oracles.

Each recipe takes (recorder, params, tolerances, seed, workers), records
per-replicate rows and appends named checks with measured value, reference
and tolerance. Parameter and tolerance defaults below are the values the
acceptance suite uses; a config may override any of them.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import partial
from typing import Callable

import numpy as np

from .. import bessel, moment_oracle, support_analysis
from ..env_field import CovarianceKernel
from ..functions import FiniteMeasure, PairFunction, TestFunction
from ..particle_sys import InitialLaw, ParticleSystemConfig, mp_result, run_ensemble, summarize
from ..spde_solver import (
    GridSpec,
    InitialProfile,
    SpdeConfig,
    duhamel_residual,
    estimate_pmoment,
    mass_at,
    refine_noise,
    run_spde_ensemble,
    simulate,
)
from ..streams import derive_stream

BUMP = {"variant": "gaussian_bump", "center": 0.0, "width": 0.5, "height": 1.0}
ONE = {"variant": "constant", "a": 1.0}


@dataclass(frozen=True)
class Recipe:
    name: str
    func: Callable
    params: dict
    tolerances: dict
    description: str


RECIPES: dict = {}


def recipe(name: str, params: dict, tolerances: dict):
    def deco(func):
        RECIPES[name] = Recipe(name, func, params, tolerances, (func.__doc__ or "").strip())
        return func
    return deco


def _within_se(rec, name, measured, se, reference, k):
    gap = abs(measured - reference)
    return rec.check(name, gap <= k * se, measured, f"{k} SE", reference=reference, se=se,
                     z=gap / se if se > 0 else None)


def _kernel(d) -> CovarianceKernel:
    return CovarianceKernel.from_dict(d)


def _grid(g: dict, T: float) -> GridSpec:
    return GridSpec(float(g["L"]), int(g["J"]), float(g["dt"]), float(T))


def closed_second_moment(c: float, t: float) -> float:
    """E <1, X_t>^2 from a unit point mass when g is the constant c."""
    if c == 0:
        return 1.0 + t
    return float(np.exp(c * t) + np.expm1(c * t) / c)


def _spde_mass_sq(rec, label, cfg, times, replicates, workers):
    rows = run_spde_ensemble(cfg, replicates, partial(mass_at, times=tuple(times)), workers)
    out = []
    for k, t in enumerate(times):
        sq = rows[:, k] ** 2
        rec.add_rows(label, t, sq)
        out.append(summarize(sq))
    return out


# ---------------------------------------------------------------------------


@recipe("first_moment",
        {"n": 256, "K_n": 256, "kernel": {"variant": "squared_exponential", "variance": 1.0,
                                          "length": 1.0},
         "f": BUMP, "t": 0.5, "replicates": 10000},
        {"k_se": 4.0})
def first_moment_check(rec, p, tol, seed, workers):
    """Particle mean of <f, X_t> against <P_t f, mu> for mu = delta_0."""
    f = TestFunction.from_dict(p["f"])
    t = float(p["t"])
    cfg = ParticleSystemConfig(int(p["n"]), t, _kernel(p["kernel"]), InitialLaw.point(0.0),
                               int(p["K_n"]), seed)
    res = run_ensemble(cfg, [(f, t)], int(p["replicates"]), workers)
    rec.add_rows("f_X_t", t, res.values[:, 0])
    oracle = moment_oracle.first_moment(FiniteMeasure.point_mass(0.0), f, t)
    rec.write_json("oracle.json", moment_oracle.oracle_record("<P_t f, mu>", p, oracle, 0.0))
    s = summarize(res.values[:, 0])
    _within_se(rec, "particles_first_moment", s["mean"], s["se"], oracle, tol["k_se"])


@recipe("second_moment_constant",
        {"c": 0.5, "t": 0.5, "n": 256, "replicates": 10000, "spde_replicates": 10000,
         "grid": {"L": 8.0, "J": 160, "dt": 0.0025}},
        {"oracle_rel": 0.01, "k_se": 4.0, "spde_rel": 0.10})
def second_moment_constant_check(rec, p, tol, seed, workers):
    """E <1, X_t>^2 for constant g: closed form, moment formula, particles, SPDE."""
    c, t = float(p["c"]), float(p["t"])
    kernel = CovarianceKernel.constant(c)
    exact = closed_second_moment(c, t)
    mu = FiniteMeasure.point_mass(0.0)
    one = TestFunction.constant(1.0)
    est = moment_oracle.second_moment(mu, one, t, kernel)
    rec.write_json("oracle.json", moment_oracle.oracle_record(
        "exp(c t) + (exp(c t) - 1) / c", {"c": c, "t": t}, exact, 0.0))
    rel = abs(est.value - exact) / exact
    rec.check("moment_formula_vs_closed_form", rel <= tol["oracle_rel"], est.value,
              tol["oracle_rel"], reference=exact, relative_error=rel)

    cfg = ParticleSystemConfig(int(p["n"]), t, kernel, InitialLaw.point(0.0), seed=seed)
    res = run_ensemble(cfg, [(one, t)], int(p["replicates"]), workers)
    sq = res.values[:, 0] ** 2
    rec.add_rows("particles_mass_sq", t, sq)
    s = summarize(sq)
    _within_se(rec, "particles_vs_closed_form", s["mean"], s["se"], exact, tol["k_se"])

    scfg = SpdeConfig(0.5, kernel, InitialProfile("point", 1.0, 0.0), _grid(p["grid"], t), seed)
    s = _spde_mass_sq(rec, "spde_mass_sq", scfg, [t], int(p["spde_replicates"]), workers)[0]
    rel = abs(s["mean"] - exact) / exact
    rec.check("spde_vs_closed_form", rel <= tol["spde_rel"], s["mean"], tol["spde_rel"],
              reference=exact, se=s["se"], relative_error=rel)


@recipe("second_moment_zero",
        {"times": [0.25, 0.5], "n": 256, "replicates": 10000, "spde_replicates": 10000,
         "grid": {"L": 8.0, "J": 160, "dt": 0.0025}},
        {"oracle_abs": 1e-3, "k_se": 4.0})
def second_moment_zero_check(rec, p, tol, seed, workers):
    """With g = 0 the second moment of the mass is 1 + t."""
    times = [float(t) for t in p["times"]]
    T = max(times)
    kernel = CovarianceKernel.zero()
    mu = FiniteMeasure.point_mass(0.0)
    one = TestFunction.constant(1.0)
    for t in times:
        est = moment_oracle.second_moment(mu, one, t, kernel)
        rec.check(f"moment_formula[t={t:g}]", abs(est.value - (1 + t)) <= tol["oracle_abs"],
                  est.value, tol["oracle_abs"], reference=1 + t)
    cfg = ParticleSystemConfig(int(p["n"]), T, kernel, InitialLaw.point(0.0), seed=seed)
    res = run_ensemble(cfg, [(one, t) for t in times], int(p["replicates"]), workers)
    for k, t in enumerate(times):
        sq = res.values[:, k] ** 2
        rec.add_rows("particles_mass_sq", t, sq)
        s = summarize(sq)
        _within_se(rec, f"particles[t={t:g}]", s["mean"], s["se"], 1 + t, tol["k_se"])
    scfg = SpdeConfig(0.5, kernel, InitialProfile("point", 1.0, 0.0), _grid(p["grid"], T), seed)
    stats = _spde_mass_sq(rec, "spde_mass_sq", scfg, times, int(p["spde_replicates"]), workers)
    for t, s in zip(times, stats):
        _within_se(rec, f"spde[t={t:g}]", s["mean"], s["se"], 1 + t, tol["k_se"])


@recipe("gronwall",
        {"cs": [0.0, 0.1, 0.5, 1.0], "times": [0.25, 0.5], "fs": [ONE, BUMP]},
        {"equality_abs": 1e-3})
def gronwall_check(rec, p, tol, seed, workers):
    """The exponential upper bound dominates the second moment, with equality at g = 0."""
    mu = FiniteMeasure.point_mass(0.0)
    for fd in p["fs"]:
        f = TestFunction.from_dict(fd)
        for c in p["cs"]:
            kernel = CovarianceKernel.zero() if c == 0 else CovarianceKernel.constant(c)
            for t in p["times"]:
                sm = moment_oracle.second_moment(mu, f, t, kernel)
                gb = moment_oracle.gronwall_bound(mu, f, t, kernel)
                label = f"{fd['variant']}[c={c:g},t={t:g}]"
                rec.add_rows(f"second_moment:{label}", t, [sm.value])
                rec.add_rows(f"gronwall:{label}", t, [gb])
                if c == 0:
                    rec.check(f"equality:{label}", abs(gb - sm.value) <= tol["equality_abs"],
                              gb, tol["equality_abs"], reference=sm.value)
                else:
                    rec.check(f"bound:{label}", gb >= sm.value - sm.error, gb, "bound >= value",
                              reference=sm.value, error=sm.error)


@recipe("martingale_problem",
        {"kernels": [{"variant": "zero"}, {"variant": "constant", "c": 0.5}], "fs": [ONE, BUMP],
         "t": 0.5, "n": 256, "replicates": 10000},
        {"k_se": 4.0})
def martingale_problem_check(rec, p, tol, seed, workers):
    """E (M_t^f)^2 against the expected quadratic variation, per kernel and f."""
    t = float(p["t"])
    fs = [TestFunction.from_dict(d) for d in p["fs"]]
    for kd in p["kernels"]:
        kernel = _kernel(kd)
        cfg = ParticleSystemConfig(int(p["n"]), t, kernel, InitialLaw.point(0.0), seed=seed)
        res = run_ensemble(cfg, [], int(p["replicates"]), workers, mp_requests=[(f, t) for f in fs])
        for k, fd in enumerate(p["fs"]):
            label = f"{kd['variant']}:{fd['variant']}"
            rec.add_rows(f"M2[{label}]", t, res.mp[:, k, 0])
            rec.add_rows(f"Q[{label}]", t, res.mp[:, k, 1])
            r = mp_result(res.mp[:, k, :])
            gap = abs(r.lhs - r.rhs)
            rec.check(f"mp[{label}]", gap <= tol["k_se"] * r.combined_se, r.lhs,
                      f"{tol['k_se']} combined SE", reference=r.rhs, se=r.combined_se, z=r.z)


@recipe("pair_semigroup",
        {"kernel": {"variant": "squared_exponential", "variance": 1.0, "length": 1.0},
         "f": {"variant": "gaussian_bump", "center": 0.0, "width": 1.0, "height": 1.0},
         "t": 0.5, "probes": [-0.5, 0.0, 0.5], "paths": 20000, "fk_steps": 256,
         "grid": {"L": 7.0, "h": 0.05}},
        {"k_se": 3.0, "abs": 1e-3})
def pair_semigroup_check(rec, p, tol, seed, workers):
    """Feynman-Kac against the grid PDE for Q_t^g(f x f) at interior probes."""
    kernel = _kernel(p["kernel"])
    f = TestFunction.from_dict(p["f"])
    F = PairFunction.tensor(f)
    t = float(p["t"])
    sol = moment_oracle.pair_semigroup_pde(kernel, F, t, moment_oracle.PairGrid(
        float(p["grid"]["L"]), float(p["grid"]["h"])))
    table = sol.table(-1)
    k = 0
    for x in p["probes"]:
        for y in p["probes"]:
            rng = derive_stream(seed, k, "pair-fk")
            est, se = moment_oracle.pair_semigroup_fk(kernel, F, t, x, y, int(p["paths"]),
                                                      t / int(p["fk_steps"]), rng)
            ref = float(table(x, y))
            rec.add_rows(f"fk[{x:g},{y:g}]", t, [est], [k])
            rec.add_rows(f"pde[{x:g},{y:g}]", t, [ref], [k])
            gap = abs(est - ref)
            bound = tol["k_se"] * se + tol["abs"]
            rec.check(f"probe[{x:g},{y:g}]", gap <= bound, est, bound, reference=ref, se=se)
            k += 1


def random_mild_config(seed: int, index: int) -> tuple[SpdeConfig, dict]:
    """A reproducible random SPDE configuration with dt <= h^2/8."""
    rng = derive_stream(seed, index, "mild-config")
    L = float(rng.choice([4.0, 5.0, 6.0]))
    J = int(rng.choice([40, 48, 60, 80]))
    h = 2 * L / J
    dt = float(h * h / 8 * rng.uniform(0.5, 1.0))
    # whole number of steps, so the dt/2 run has exactly twice as many
    T = float(dt * round(rng.uniform(0.1, 0.3) / dt))
    gamma = float(rng.choice([0.5, rng.uniform(0.5, 1.0)]))
    kind = int(rng.integers(3))
    kernel = [CovarianceKernel.zero(), CovarianceKernel.constant(float(rng.uniform(0.1, 1.0))),
              CovarianceKernel.squared_exponential(float(rng.uniform(0.2, 1.0)),
                                                   float(rng.uniform(0.5, 2.0)))][kind]
    lo = float(rng.uniform(-2.0, -0.5))
    hi = float(lo + rng.uniform(1.0, 2.5))
    u0 = InitialProfile("cosine", float(rng.uniform(0.5, 2.0)), lo=lo, hi=hi)
    cfg = SpdeConfig(gamma, kernel, u0, GridSpec(L, J, dt, T), seed + index, "euler",
                     retain_noise=True)
    desc = {"L": L, "J": J, "dt": dt, "T": T, "gamma": gamma, "kernel": kernel.to_dict(),
            "u0": u0.to_dict(), "scheme": cfg.resolved_scheme}
    return cfg, desc


@recipe("mild_form", {"configs": 5}, {"ratio_lo": 1.5, "ratio_hi": 3.0})
def mild_form_check(rec, p, tol, seed, workers):
    """Gap between the stepped solution and its mild reconstruction halves with dt.

    Both runs use the Euler step; the dt/2 run replays a Brownian refinement
    of the coarse noise so the two follow the same noise path.
    """
    described = []
    for i in range(int(p["configs"])):
        cfg, desc = random_mild_config(seed, i)
        coarse_traj = simulate(cfg, i, warn=False)
        coarse = duhamel_residual(coarse_traj)
        g = cfg.grid
        fine_cfg = replace(cfg, grid=GridSpec(g.L, g.J, g.dt / 2, g.T))
        noise = refine_noise(coarse_traj.noise, cfg.kernel, g, derive_stream(seed, i, "refine"))
        fine = duhamel_residual(simulate(fine_cfg, i, noise=noise, warn=False))
        ratio = coarse / fine if fine > 0 else np.inf
        rec.add_rows("residual_dt", g.T, [coarse], [i])
        rec.add_rows("residual_dt_half", g.T, [fine], [i])
        rec.check(f"ratio[{i}]", tol["ratio_lo"] <= ratio <= tol["ratio_hi"], ratio,
                  [tol["ratio_lo"], tol["ratio_hi"]], config=desc)
        described.append(desc)
    rec.write_json("configs.json", described)


@recipe("pmoment",
        {"kernels": [{"variant": "zero"}, {"variant": "constant", "c": 0.5}], "p": 2.0,
         "lam": 1.0, "gamma": 0.5, "u0": {"kind": "cosine", "mass": 1.0, "lo": -1.0, "hi": 1.0},
         "grid": {"L": 8.0, "J": 80, "dt": 0.01, "T": 1.0},
         "probe_times": [0.25, 0.5, 0.75, 1.0], "replicates": 2000},
        {"rel_change": 0.2})
def pmoment_check(rec, p, tol, seed, workers):
    """sup_t E ||u_t||_{p,lam}^p is finite and stable under h -> h/2, dt -> dt/4."""
    base = _grid(p["grid"], p["grid"]["T"])
    u0 = InitialProfile.from_dict(p["u0"])
    for kd in p["kernels"]:
        vals = []
        for label, grid in (("base", base), ("refined", base.refined())):
            cfg = SpdeConfig(float(p["gamma"]), _kernel(kd), u0, grid, seed)
            est = estimate_pmoment(cfg, float(p["p"]), float(p["lam"]), int(p["replicates"]),
                                   p["probe_times"], workers)
            for j, t in enumerate(est.times):
                rec.add_rows(f"lp[{kd['variant']},{label}]", t, est.rows[:, j])
            vals.append(est)
        a, b = vals[0].value, vals[1].value
        change = abs(b - a) / a
        ok = bool(np.isfinite(a) and np.isfinite(b) and change < tol["rel_change"])
        rec.check(f"refinement[{kd['variant']}]", ok, change, tol["rel_change"],
                  base=a, base_se=vals[0].se, refined=b, refined_se=vals[1].se)


@recipe("extinction",
        {"m0": 1.0, "T": 1.0, "replicates": 4000, "grid": {"L": 8.0, "J": 160, "dt": 0.0025},
         "mc_paths": 20000, "mc_steps": 1000},
        {"k_se": 4.0, "ode_abs": 1e-6})
def extinction_check(rec, p, tol, seed, workers):
    """SPDE extinction fraction against two Feller-diffusion oracles."""
    m0, T = float(p["m0"]), float(p["T"])
    ode = support_analysis.feller_extinction_ode(m0, T)
    closed = float(np.exp(-2.0 * m0 / T))
    rec.check("ode_vs_closed_form", abs(ode["value"] - closed) <= tol["ode_abs"], ode["value"],
              tol["ode_abs"], reference=closed)
    mc, mc_se = support_analysis.feller_extinction_mc(
        m0, T, int(p["mc_paths"]), int(p["mc_steps"]), derive_stream(seed, 0, "feller-mc"))
    _within_se(rec, "direct_simulation_vs_ode", mc, mc_se, ode["value"], tol["k_se"])
    rec.write_json("oracle.json", {**moment_oracle.oracle_record(
        "P(m_T = 0) = exp(-m0 lim v_T), v' = -v^2/2", {"m0": m0, "T": T}, ode["value"], ode["error"]),
        "direct_simulation": {"value": mc, "se": mc_se, "paths": p["mc_paths"], "steps": p["mc_steps"]}})
    u0 = InitialProfile("cosine", m0, lo=-1.0, hi=0.0)
    cfg = SpdeConfig(0.5, CovarianceKernel.zero(), u0, _grid(p["grid"], T), seed)
    rows = run_spde_ensemble(cfg, int(p["replicates"]), partial(mass_at, times=(T,)), workers)
    rec.add_rows("mass_T", T, rows[:, 0])
    frac, se = support_analysis.extinction_stats(rows[:, 0])
    _within_se(rec, "spde_vs_ode", frac, se, ode["value"], tol["k_se"])


@recipe("compact_support",
        {"L": 20.0, "J": 400, "dt": 0.0025, "T": 1.0, "eps": 1e-6, "replicates": 200,
         "gammas": [0.5, 1.0], "kernel": {"variant": "zero"},
         "u0": {"kind": "cosine", "mass": 1.0, "lo": -1.0, "hi": 0.0}, "record_every": 0.05},
        {"margin": 5.0, "alpha": 0.05})
def compact_support_check(rec, p, tol, seed, workers):
    """Running right edges: gamma = 1/2 stays interior and below the gamma = 1 contrast."""
    from .runner import record_support, support_ensemble

    grid = GridSpec(float(p["L"]), int(p["J"]), float(p["dt"]), float(p["T"]))
    n_rec = int(round(grid.T / p["record_every"]))
    times = tuple(grid.T * k / n_rec for k in range(1, n_rec + 1))
    u0 = InitialProfile.from_dict(p["u0"])
    eps = float(p["eps"])
    reports = []
    for g in p["gammas"]:
        cfg = SpdeConfig(float(g), _kernel(p["kernel"]), u0, grid, seed, snapshot_times=times)
        rep = support_ensemble(cfg, int(p["replicates"]), [eps], [], workers)
        rep.margin = float(tol["margin"])
        record_support(rec, rep, f"_gamma={g:g}")
        reports.append(rep)
    main, contrast = reports
    v = support_analysis.compact_support_verdict(main, eps, contrast=contrast, alpha=tol["alpha"])
    rec.write_json("support_report.json", {"report": main.to_dict(), "contrast_report": contrast.to_dict(),
                                           "verdict": v.to_dict()})
    c = v.contrast
    rec.check("median_edge_contrast", c["passed"], c["median_self"], f"p < {tol['alpha']}",
              reference=c["median_other"], p_value=c["p_value"])
    n = main.N(eps)
    worst = float(np.nanmax(n)) if np.any(~np.isnan(n)) else None
    rec.check("edges_interior", v.interior_fraction == 1.0, worst, grid.L - tol["margin"],
              interior_fraction=v.interior_fraction)


@recipe("occupation_monotone",
        {"replicates": 500, "gamma": 0.5, "probes": [0.5, 1.0, 2.0, 4.0], "p": 0.01, "q": 0.01,
         "grid": {"L": 10.0, "J": 200, "dt": 0.0025, "T": 1.0},
         "u0": {"kind": "cosine", "mass": 1.0, "lo": -1.0, "hi": 0.0}},
        {"k_se": 2.0})
def occupation_monotone_check(rec, p, tol, seed, workers):
    """P(J_T(x) >= p) does not increase along the probe ladder."""
    from .runner import record_support, support_ensemble

    probes = [0.0] + [float(x) for x in p["probes"]]
    g = p["grid"]
    cfg = SpdeConfig(float(p["gamma"]), CovarianceKernel.zero(), InitialProfile.from_dict(p["u0"]),
                     _grid(g, g["T"]), seed, probes=tuple(probes))
    rep = support_ensemble(cfg, int(p["replicates"]), support_analysis.EPS_LADDER, probes, workers)
    record_support(rec, rep)
    table = support_analysis.tail_decay(rep.occupation[:, 1:], probes[1:], float(p["p"]),
                                        float(p["q"]), rep.occupation[:, 0])
    rec.write_json("tail_table.json", table.to_dict())
    bad = table.monotone_violations(tol["k_se"])
    rec.check("tail_monotone", not bad, table.prob_x, f"{tol['k_se']} SE", se=table.se_x,
              violations=bad)


@recipe("bessel",
        {"lp_convergent": [[0.5, 1.5]], "lp_divergent": [[0.5, 2.5]],
         "deltas": [0.5, 1.0, 1.5, 2.0], "closed_x": [0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0]},
        {"closed_rel": 1e-6})
def bessel_check(rec, p, tol, seed, workers):
    """L^p membership, asymptote diagnostics and the delta = 2 closed form."""
    diag = {"lp": [], "asymptotes": []}
    for expected, cases in (("convergent", p["lp_convergent"]), ("divergent", p["lp_divergent"])):
        for d, q in cases:
            c = bessel.lp_classify(d, q)
            diag["lp"].append(c.to_dict())
            rec.check(f"lp[delta={d:g},p={q:g}]", c.classification == expected, c.classification,
                      expected)
    for d in p["deltas"]:
        a = bessel.asymptote_check(d)
        diag["asymptotes"].append(a.to_dict())
        rec.check(f"asymptote[delta={d:g}]", a.passed, {k: v["measured"] for k, v in a.checks.items()},
                  {k: v["tolerance"] for k, v in a.checks.items()})
    xs = np.asarray(p["closed_x"], dtype=float)
    vals = np.array([bessel.eval_R(2.0, x) for x in xs])
    ref = np.sqrt(np.pi) * np.exp(-xs)
    rel = float(np.max(np.abs(vals - ref) / ref))
    rec.add_rows("R_2", 0.0, vals)
    rec.check("closed_form_delta_2", rel <= tol["closed_rel"], rel, tol["closed_rel"])
    rec.write_json("bessel.json", diag)
