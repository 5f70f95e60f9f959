"""Experiment configuration: JSON text -> validated ExperimentConfig.

Defaults are merged into the user document before validation, and the merged
document is what the run report echoes, so every parameter that affects the
results is visible there.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from ..env_field import CovarianceKernel
from ..errors import ParseError, StabilityError, ValidationError
from ..functions import FiniteMeasure, TestFunction
from ..particle_sys import InitialLaw, ParticleSystemConfig
from ..spde_solver import DEFAULT_GRID, GridSpec, InitialProfile, SpdeConfig

KINDS = ("particles", "spde", "moments", "kernels", "support", "crosscheck")

PARTICLES_DEFAULTS = {
    "n": 256,
    "T": 0.5,
    "K_n": None,
    "kernel": {"variant": "zero"},
    "initial": {"kind": "point", "x0": 0.0, "mass": 1.0},
    "factorization": "pivoted",
    "observables": [{"id": "mass", "f": {"variant": "constant", "a": 1.0}, "t": 0.5, "power": 1}],
    "mp": [],
}

SPDE_DEFAULTS = {
    "gamma": 0.5,
    "kernel": {"variant": "zero"},
    "u0": {"kind": "point", "mass": 1.0, "x0": 0.0},
    "grid": dict(DEFAULT_GRID),
    "scheme": "auto",
    "snapshot_times": [],
    "probes": [],
    # per-snapshot observables: mass, mass_power (power), weighted_lp (p, lam)
    "observables": [{"id": "mass", "quantity": "mass"}],
    "dump_trajectories": 0,
}

MOMENTS_DEFAULTS = {
    "quantity": "second",  # first | second | gronwall | pair
    "mu": {"points": [0.0], "weights": [1.0]},
    "f": {"variant": "constant", "a": 1.0},
    "t": 0.5,
    "kernel": {"variant": "zero"},
    "method": "pde",
    "intervals": 16,
    "paths": 20000,
    "x": 0.0,
    "y": 0.0,
}

KERNELS_DEFAULTS = {
    "deltas": [0.5, 1.0, 1.5, 2.0],
    "lp": [{"delta": 0.5, "p": 1.5}, {"delta": 0.5, "p": 2.5}],
    "x": [0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0],
}

SUPPORT_DEFAULTS = {
    "spde": {**SPDE_DEFAULTS, "u0": {"kind": "cosine", "mass": 1.0, "lo": -1.0, "hi": 0.0},
             "grid": {"L": 20.0, "J": 400, "dt": 0.0025, "T": 1.0},
             "snapshot_times": [0.1 * k for k in range(1, 11)],
             "probes": [0.0, 0.5, 1.0, 2.0, 4.0]},
    "eps_ladder": [1e-4, 1e-6, 1e-8],
    "margin": 5.0,
    "tail": {"p": 0.01, "q": 0.01},
    "contrast_gamma": None,
}

CROSSCHECK_DEFAULTS = {"recipe": None, "params": {}, "tolerances": {}}

SECTION_DEFAULTS = {
    "particles": PARTICLES_DEFAULTS,
    "spde": SPDE_DEFAULTS,
    "moments": MOMENTS_DEFAULTS,
    "kernels": KERNELS_DEFAULTS,
    "support": SUPPORT_DEFAULTS,
    "crosscheck": CROSSCHECK_DEFAULTS,
}

# crosscheck recipes carry their own counts; an explicit value overrides them
REPLICATE_DEFAULTS = {"particles": 1000, "spde": 100, "moments": 1, "kernels": 1,
                      "support": 200, "crosscheck": None}


def merge(defaults: dict, user: dict) -> dict:
    """Recursive dict merge; user values win, lists are replaced whole."""
    out = copy.deepcopy(defaults)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    replicates: int | None
    section: dict
    out: str | None = None
    threads: int = 1
    objects: dict = field(default_factory=dict, repr=False)

    def echo(self) -> dict:
        """Full merged configuration (threads excluded: it never changes results)."""
        return {"kind": self.kind, "seed": self.seed, "replicates": self.replicates,
                self.kind: copy.deepcopy(self.section)}


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a JSON experiment document.

    ``overrides`` (seed, replicates, out, threads) replace top-level keys
    before validation, as the CLI flags do.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ValidationError("kind", f"must be one of {', '.join(KINDS)}, got {kind!r}")
    if "seed" not in doc or doc["seed"] is None:
        raise ValidationError("seed", "a seed is mandatory")
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValidationError("seed", "must be a nonnegative integer")
    reps = doc.get("replicates", REPLICATE_DEFAULTS[kind])
    if reps is None and kind != "crosscheck":
        reps = REPLICATE_DEFAULTS[kind]
    if reps is not None and (not isinstance(reps, int) or isinstance(reps, bool) or reps < 1):
        raise ValidationError("replicates", "must be a positive integer")
    threads = doc.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise ValidationError("threads", "must be a positive integer")
    user = doc.get(kind, {})
    if not isinstance(user, dict):
        raise ValidationError(kind, "section must be an object")
    section = merge(SECTION_DEFAULTS[kind], user)
    if kind == "crosscheck" and reps is not None:
        section["params"] = {**section.get("params", {}), "replicates": reps}
    cfg = ExperimentConfig(kind, seed, reps, section, doc.get("out"), threads)
    cfg.objects = BUILDERS[kind](section, seed)
    return cfg


# ---------------------------------------------------------------------------
# section builders; each raises ValidationError naming the offending field


def _wrap(field_name: str, fn, *args):
    try:
        return fn(*args)
    except ValidationError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(field_name, str(exc)) from exc


def build_kernel(d: dict, name: str = "kernel") -> CovarianceKernel:
    return _wrap(name, CovarianceKernel.from_dict, d)


def build_function(d: dict, name: str = "f") -> TestFunction:
    return _wrap(name, TestFunction.from_dict, d)


def build_measure(d: dict, name: str = "mu") -> FiniteMeasure:
    return _wrap(name, lambda: FiniteMeasure(tuple(map(float, d["points"])),
                                             tuple(map(float, d["weights"]))))


def build_particles(s: dict, seed: int) -> dict:
    kernel = build_kernel(s["kernel"], "particles.kernel")
    initial = _wrap("particles.initial", InitialLaw.from_dict, s["initial"])
    cfg = _wrap("particles", lambda: ParticleSystemConfig(
        int(s["n"]), float(s["T"]), kernel, initial, s["K_n"], seed, s["factorization"]))
    obs = []
    for k, o in enumerate(s["observables"]):
        t = float(o["t"])
        if not 0 <= t <= cfg.T + 1e-12:
            raise ValidationError(f"particles.observables[{k}].t", f"must lie in [0, T={cfg.T}]")
        if o.get("power", 1) not in (1, 2):
            raise ValidationError(f"particles.observables[{k}].power", "must be 1 or 2")
        obs.append((o.get("id", f"obs{k}"), build_function(o["f"], f"particles.observables[{k}].f"),
                    t, int(o.get("power", 1))))
    mp = []
    for k, o in enumerate(s["mp"]):
        t = float(o["t"])
        if not 0 < t <= cfg.T + 1e-12:
            raise ValidationError(f"particles.mp[{k}].t", f"must lie in (0, T={cfg.T}]")
        f = build_function(o["f"], f"particles.mp[{k}].f")
        if not f.smooth:
            raise ValidationError(f"particles.mp[{k}].f", "needs a smooth test function")
        mp.append((o.get("id", f"mp{k}"), f, t))
    return {"config": cfg, "observables": obs, "mp": mp}


def build_spde_config(s: dict, seed: int, name: str = "spde") -> SpdeConfig:
    try:
        grid = GridSpec(float(s["grid"]["L"]), int(s["grid"]["J"]), float(s["grid"]["dt"]),
                        float(s["grid"]["T"]))
    except ValidationError as exc:
        raise ValidationError(f"{name}.{exc.field}", exc.message) from exc
    except StabilityError as exc:
        raise ValidationError(f"{name}.grid.dt", str(exc)) from exc
    kernel = build_kernel(s["kernel"], f"{name}.kernel")
    u0 = _wrap(f"{name}.u0", InitialProfile.from_dict, s["u0"])
    try:
        return SpdeConfig(float(s["gamma"]), kernel, u0, grid, seed, s["scheme"],
                          tuple(float(t) for t in s["snapshot_times"]),
                          tuple(float(x) for x in s["probes"]))
    except ValidationError as exc:
        raise ValidationError(f"{name}.{exc.field}", exc.message) from exc


SPDE_QUANTITIES = ("mass", "mass_power", "weighted_lp")


def build_spde(s: dict, seed: int) -> dict:
    cfg = build_spde_config(s, seed)
    for k, o in enumerate(s["observables"]):
        q = o.get("quantity")
        if q not in SPDE_QUANTITIES:
            raise ValidationError(f"spde.observables[{k}].quantity",
                                  f"must be one of {', '.join(SPDE_QUANTITIES)}")
        if q == "weighted_lp" and not (o.get("p", 0) >= 1 and o.get("lam", 0) > 0):
            raise ValidationError(f"spde.observables[{k}]", "weighted_lp needs p >= 1 and lam > 0")
    return {"config": cfg}


def build_moments(s: dict, seed: int) -> dict:
    if s["quantity"] not in ("first", "second", "gronwall", "pair"):
        raise ValidationError("moments.quantity", "must be first, second, gronwall or pair")
    if s["method"] not in ("pde", "fk"):
        raise ValidationError("moments.method", "must be pde or fk")
    if not float(s["t"]) >= 0:
        raise ValidationError("moments.t", "must be >= 0")
    return {"mu": build_measure(s["mu"], "moments.mu"),
            "f": build_function(s["f"], "moments.f"),
            "kernel": build_kernel(s["kernel"], "moments.kernel")}


def build_kernels(s: dict, seed: int) -> dict:
    for k, d in enumerate(s["deltas"]):
        if not d > 0:
            raise ValidationError(f"kernels.deltas[{k}]", "delta must be positive")
    for k, e in enumerate(s["lp"]):
        if not (e.get("delta", 0) > 0 and e.get("p", 0) >= 1):
            raise ValidationError(f"kernels.lp[{k}]", "need delta > 0 and p >= 1")
    return {}


def build_support(s: dict, seed: int) -> dict:
    cfg = build_spde_config(s["spde"], seed, "support.spde")
    lo, hi = cfg.u0.support
    if cfg.u0.kind != "zero" and not (-cfg.grid.L <= lo and hi <= 0.0):
        raise ValidationError("support.spde.u0", "initial support must lie in [-L, 0]")
    for e in s["eps_ladder"]:
        if not e > 0:
            raise ValidationError("support.eps_ladder", "thresholds must be positive")
    out = {"config": cfg}
    if s["contrast_gamma"] is not None:
        c = merge(s["spde"], {"gamma": s["contrast_gamma"]})
        out["contrast"] = build_spde_config(c, seed, "support.contrast_gamma")
    return out


def build_crosscheck(s: dict, seed: int) -> dict:
    from .checks import RECIPES

    if s["recipe"] not in RECIPES:
        raise ValidationError("crosscheck.recipe", f"must be one of {', '.join(RECIPES)}")
    recipe = RECIPES[s["recipe"]]
    unknown = set(s["params"]) - set(recipe.params)
    if unknown:
        raise ValidationError("crosscheck.params", f"unknown keys {sorted(unknown)}")
    unknown = set(s["tolerances"]) - set(recipe.tolerances)
    if unknown:
        raise ValidationError("crosscheck.tolerances", f"unknown keys {sorted(unknown)}")
    # fill recipe defaults so the echo is complete
    s["params"] = merge(recipe.params, s["params"])
    s["tolerances"] = merge(recipe.tolerances, s["tolerances"])
    return {"recipe": recipe}


BUILDERS = {
    "particles": build_particles,
    "spde": build_spde,
    "moments": build_moments,
    "kernels": build_kernels,
    "support": build_support,
    "crosscheck": build_crosscheck,
}
