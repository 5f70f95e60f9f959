"""Experiment execution and persistence.

Every run writes into its output directory:

``rows.csv``        per-replicate rows (replicate, observable, t, value)
``aggregate.json``  per-(observable, t) mean, variance, SE and replicate count
``report.json``     the RunReport: config echo, statistics, checks, wall time,
                    artifact list

plus kind-specific artifacts (oracle records, kernel diagnostics, support
reports, edge series, binary trajectories). Floats are written with ``repr``
so CSV files are bitwise reproducible.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .. import backend, bessel, moment_oracle, support_analysis
from ..functions import PairFunction
from ..particle_sys import mp_result, run_ensemble, summarize
from ..spde_solver import (
    lp_norms_at_snapshots,
    run_spde_ensemble,
    simulate,
    snapshot_steps,
    write_trajectory_binary,
)
from .config import ExperimentConfig


def _num(v) -> str:
    return repr(float(v))


@dataclass
class Recorder:
    """Collects rows, checks and artifacts of one run inside ``out``."""

    out: str
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        os.makedirs(self.out, exist_ok=True)

    def path(self, name: str) -> str:
        if os.path.isabs(name) or ".." in name.split("/"):
            raise ValueError(f"artifact {name!r} would leave the output directory")
        return os.path.join(self.out, name)

    def add_rows(self, observable: str, t: float, values, replicates=None) -> None:
        values = np.asarray(values, dtype=float).ravel()
        ids = range(values.size) if replicates is None else replicates
        for r, v in zip(ids, values):
            self.rows.append((int(r), observable, float(t), float(v)))

    def check(self, name: str, passed: bool, measured, tolerance, **info) -> dict:
        rec = {"name": name, "passed": bool(passed), "measured": _jsonable(measured),
               "tolerance": _jsonable(tolerance)}
        rec.update({k: _jsonable(v) for k, v in info.items()})
        self.checks.append(rec)
        return rec

    def write_json(self, name: str, obj) -> str:
        p = self.path(name)
        with open(p, "w") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._register(name)
        return p

    def write_csv(self, name: str, header, rows) -> str:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
        self._register(name)
        return p

    def register(self, name: str) -> None:
        self._register(name)

    def _register(self, name: str) -> None:
        if name not in self.artifacts:
            self.artifacts.append(name)

    def statistics(self) -> dict:
        groups: dict = {}
        for _, obs, t, v in self.rows:
            groups.setdefault((obs, t), []).append(v)
        return {f"{obs}@t={_num(t)}": summarize(vals) for (obs, t), vals in groups.items()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class RunReport:
    kind: str
    config: dict
    statistics: dict
    checks: list
    wall_time: float
    artifacts: list
    backend: str
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "statistics": self.statistics,
                "checks": self.checks, "passed": self.passed, "wall_time": self.wall_time,
                "artifacts": self.artifacts, "backend": self.backend, "extra": self.extra}


def run(config: ExperimentConfig, out: str | None = None, workers: int | None = None) -> RunReport:
    """Execute the experiment and persist its artifacts under ``out``."""
    out = out or config.out or os.path.join("runs", f"{config.kind}-seed{config.seed}")
    workers = config.threads if workers is None else workers
    rec = Recorder(out)
    t0 = time.perf_counter()
    try:
        RUNNERS[config.kind](config, rec, workers)
    except Exception as exc:
        exc.add_note(f"while running {config.kind} experiment (seed {config.seed}, out {out})")
        raise
    wall = time.perf_counter() - t0
    rec.write_csv("rows.csv", ["replicate", "observable", "t", "value"], rec.rows)
    stats = rec.statistics()
    rec.write_json("aggregate.json", stats)
    rec.register("report.json")
    report = RunReport(config.kind, config.echo(), stats, rec.checks, wall, list(rec.artifacts),
                       backend.BACKEND, rec.extra)
    rec.write_json("report.json", report.to_dict())
    return report


# ---------------------------------------------------------------------------
# particles


def run_particles(config: ExperimentConfig, rec: Recorder, workers: int) -> None:
    o = config.objects
    cfg = o["config"]
    res = run_ensemble(cfg, [(f, t) for _, f, t, _ in o["observables"]], config.replicates,
                       workers, mp_requests=[(f, t) for _, f, t in o["mp"]])
    for k, (name, _, t, power) in enumerate(o["observables"]):
        rec.add_rows(name, t, res.values[:, k] ** power)
    mp = {}
    for k, (name, _, t) in enumerate(o["mp"]):
        rec.add_rows(f"{name}:M2", t, res.mp[:, k, 0])
        rec.add_rows(f"{name}:Q", t, res.mp[:, k, 1])
        r = mp_result(res.mp[:, k, :])
        mp[name] = {"lhs": r.lhs, "rhs": r.rhs, "lhs_se": r.lhs_se, "rhs_se": r.rhs_se, "z": r.z}
    if mp:
        rec.extra["martingale_problem"] = mp


# ---------------------------------------------------------------------------
# spde


def spde_observables(traj, observables) -> np.ndarray:
    """Per-snapshot values of each configured observable, then boundary loss."""
    parts = []
    h = traj.grid.h
    for o in observables:
        q = o["quantity"]
        if q == "mass":
            parts.append(traj.snapshots.sum(axis=1) * h)
        elif q == "mass_power":
            parts.append((traj.snapshots.sum(axis=1) * h) ** o.get("power", 2))
        else:
            parts.append(lp_norms_at_snapshots(traj, o["p"], o["lam"]))
    parts.append([traj.boundary_loss])
    return np.concatenate(parts)


def run_spde(config: ExperimentConfig, rec: Recorder, workers: int) -> None:
    cfg = config.objects["config"]
    obs = [dict(o) for o in config.section["observables"]]
    rows = run_spde_ensemble(cfg, config.replicates, partial(spde_observables, observables=obs),
                             workers)
    times = snapshot_steps(cfg) * cfg.grid.dt
    S = times.size
    for k, o in enumerate(obs):
        block = rows[:, k * S:(k + 1) * S]
        for j, t in enumerate(times):
            rec.add_rows(o.get("id", o["quantity"]), t, block[:, j])
    rec.add_rows("boundary_loss", cfg.grid.T, rows[:, -1])
    for r in range(min(int(config.section["dump_trajectories"]), config.replicates)):
        name = f"trajectory_{r:05d}.bin"
        write_trajectory_binary(rec.path(name), simulate(cfg, r, warn=False))
        rec.register(name)


# ---------------------------------------------------------------------------
# moments


def run_moments(config: ExperimentConfig, rec: Recorder, workers: int) -> None:
    s = config.section
    o = config.objects
    mu, f, kernel, t = o["mu"], o["f"], o["kernel"], float(s["t"])
    params = {"t": t, "mu": s["mu"], "f": s["f"], "kernel": s["kernel"]}
    if s["quantity"] == "first":
        val = moment_oracle.first_moment(mu, f, t)
        record = moment_oracle.oracle_record("<P_t f, mu>", params, val, 0.0)
    elif s["quantity"] == "second":
        est = moment_oracle.second_moment(mu, f, t, kernel, s["method"], int(s["intervals"]),
                                          paths=int(s["paths"]), seed=config.seed)
        params.update(method=s["method"], intervals=s["intervals"])
        record = moment_oracle.oracle_record(
            "<Q_t(f x f), mu x mu> + int_0^t <P_s pi Q_{t-s}(f x f), mu> ds",
            params, est.value, est.error)
    elif s["quantity"] == "gronwall":
        val = moment_oracle.gronwall_bound(mu, f, t, kernel, int(s["intervals"]))
        record = moment_oracle.oracle_record(
            "(<P_t f, mu>^2 + int_0^t <mu, P_s[(P_{t-s} f)^2]> ds) exp(||g|| t)", params, val, 0.0)
    else:
        F = PairFunction.tensor(f)
        x, y = float(s["x"]), float(s["y"])
        params.update(x=x, y=y)
        if s["method"] == "fk":
            from ..streams import derive_stream

            val, err = moment_oracle.pair_semigroup_fk(kernel, F, t, x, y, int(s["paths"]),
                                                        rng=derive_stream(config.seed, 0, "pair-fk"))
        else:
            sol = moment_oracle.pair_semigroup_pde(kernel, F, t, moment_oracle.PairGrid())
            val, err = float(sol.table(-1)(x, y)), 0.0
        record = moment_oracle.oracle_record("(Q_t^g (f x f))(x, y)", params, val, err)
    rec.add_rows(s["quantity"], t, [record["value"]])
    rec.write_json("oracle.json", record)


# ---------------------------------------------------------------------------
# kernels


def run_kernels(config: ExperimentConfig, rec: Recorder, workers: int) -> None:
    s = config.section
    evals = []
    for d in s["deltas"]:
        for x in s["x"]:
            evals.append((float(d), float(x), bessel.eval_R(d, x), bessel.eval_R_prime(d, x)))
    rec.write_csv("kernels.csv", ["delta", "x", "R", "dR_dx"], evals)
    asym = [bessel.asymptote_check(d).to_dict() for d in s["deltas"]]
    lp = [bessel.lp_classify(e["delta"], e["p"]).to_dict() for e in s["lp"]]
    rec.write_json("bessel.json", {"asymptotes": asym, "lp": lp})
    for a in asym:
        rec.add_rows(f"asymptote_passed[delta={a['delta']}]", 0.0, [float(a["passed"])])


# ---------------------------------------------------------------------------
# support


def support_ensemble(cfg, replicates, eps_ladder, probes, workers):
    rows = run_spde_ensemble(cfg, replicates, partial(support_analysis.support_summary,
                                                      eps_ladder=tuple(eps_ladder),
                                                      probes=tuple(probes)), workers)
    times = snapshot_steps(cfg) * cfg.grid.dt
    return support_analysis.SupportReport.from_rows(rows, times, eps_ladder, probes, cfg.grid.L)


def record_support(rec: Recorder, rep, label: str = "") -> None:
    """Edge CSV per threshold plus N, occupation and mass rows."""
    T = float(rep.times[-1])
    for e in rep.eps_ladder:
        series = rep.edges[e]
        rows = [(r, float(t), float(series[r, j]))
                for r in range(series.shape[0]) for j, t in enumerate(rep.times)]
        rec.write_csv(f"edges{label}_eps={e:g}.csv", ["replicate", "t", "R_eps"], rows)
        rec.add_rows(f"N{label}[eps={e:g}]", T, rep.N(e))
    for k, x in enumerate(rep.probes):
        rec.add_rows(f"J{label}[x={x:g}]", T, rep.occupation[:, k])
    rec.add_rows(f"mass{label}", T, rep.final_mass)
    rec.add_rows(f"extinction_time{label}", T, rep.extinction_time)


def run_support(config: ExperimentConfig, rec: Recorder, workers: int) -> None:
    s = config.section
    cfg = config.objects["config"]
    eps, probes = s["eps_ladder"], s["spde"]["probes"]
    rep = support_ensemble(cfg, config.replicates, eps, probes, workers)
    rep.margin = float(s["margin"])
    record_support(rec, rep)
    out = {"report": rep.to_dict(), "verdicts": []}
    contrast = None
    if "contrast" in config.objects:
        contrast = support_ensemble(config.objects["contrast"], config.replicates, eps, probes, workers)
        contrast.margin = rep.margin
        record_support(rec, contrast, "_contrast")
        out["contrast_report"] = contrast.to_dict()
    for e in eps:
        out["verdicts"].append(support_analysis.compact_support_verdict(rep, e, contrast=contrast).to_dict())
    if config.replicates >= support_analysis.MIN_ENSEMBLE:
        frac, se = support_analysis.extinction_stats(rep.final_mass)
        out["extinction"] = {"fraction": frac, "se": se}
        if 0.0 in [float(x) for x in probes]:
            tail = support_analysis.tail_decay(rep.occupation, [float(x) for x in probes],
                                               s["tail"]["p"], s["tail"]["q"])
            out["tail"] = tail.to_dict()
    rec.write_json("support_report.json", out)


def run_crosscheck(config: ExperimentConfig, rec: Recorder, workers: int) -> None:
    recipe = config.objects["recipe"]
    s = config.section
    recipe.func(rec, s["params"], s["tolerances"], config.seed, workers)


RUNNERS = {
    "particles": run_particles,
    "spde": run_spde,
    "moments": run_moments,
    "kernels": run_kernels,
    "support": run_support,
    "crosscheck": run_crosscheck,
}
