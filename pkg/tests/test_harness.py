import csv
import json

import numpy as np
import pytest

from sbmlab.errors import ParseError, ValidationError
from sbmlab.harness import parse_config, run
from sbmlab.harness.checks import RECIPES
from sbmlab.harness.cli import main
from sbmlab.harness.runner import Recorder

SMALL_PARTICLES = {
    "kind": "particles", "seed": 3, "replicates": 20,
    "particles": {"n": 8, "T": 0.5, "kernel": {"variant": "squared_exponential", "variance": 1.0, "length": 1.0},
                  "observables": [{"id": "mass", "f": {"variant": "constant", "a": 1.0}, "t": 0.5},
                                  {"id": "bump", "f": {"variant": "gaussian_bump"}, "t": 0.25}],
                  "mp": [{"id": "mp1", "f": {"variant": "constant", "a": 1.0}, "t": 0.5}]},
}
SMALL_SPDE = {
    "kind": "spde", "seed": 4, "replicates": 6,
    "spde": {"gamma": 0.7, "grid": {"L": 4.0, "J": 40, "dt": 0.005, "T": 0.2},
             "u0": {"kind": "cosine", "mass": 1.0, "lo": -1.0, "hi": 0.0},
             "snapshot_times": [0.1], "dump_trajectories": 2,
             "observables": [{"id": "mass", "quantity": "mass"},
                             {"id": "l2", "quantity": "weighted_lp", "p": 2, "lam": 1.0}]},
}
SMALL_SUPPORT = {
    "kind": "support", "seed": 5, "replicates": 200,
    "support": {"spde": {"grid": {"L": 6.0, "J": 60, "dt": 0.01, "T": 0.3},
                         "snapshot_times": [0.1, 0.2], "probes": [0.0, 1.0]},
                "margin": 2.0},
}


def _text(d):
    return json.dumps(d)


def test_minimal_particles_config_echoed(tmp_path):
    cfg = parse_config('{"kind": "particles", "seed": 1, "replicates": 4, "particles": {"n": 4, "T": 0.25,'
                       ' "observables": [{"id": "m", "f": {"variant": "constant", "a": 1.0}, "t": 0.25}]}}')
    assert cfg.section["factorization"] == "pivoted"
    rep = run(cfg, out=str(tmp_path))
    echo = json.loads((tmp_path / "report.json").read_text())["config"]
    assert echo == json.loads(json.dumps(cfg.echo()))
    assert echo["particles"]["n"] == 4 and rep.kind == "particles"


def test_validation_errors():
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "spde", "seed": 1, "spde": {"gamma": 1.2}}')
    assert "gamma" in e.value.field and "[1/2, 1]" in e.value.message
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "particles"}')
    assert e.value.field == "seed"
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "weather", "seed": 1}')
    assert e.value.field == "kind"
    with pytest.raises(ParseError):
        parse_config('{"kind": ')
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "crosscheck", "seed": 1, "crosscheck": {"recipe": "nope"}}')
    assert e.value.field == "crosscheck.recipe"
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "crosscheck", "seed": 1, "crosscheck": {"recipe": "bessel", "params": {"zzz": 1}}}')
    assert e.value.field.startswith("crosscheck.params")
    with pytest.raises(ValidationError):
        parse_config('{"kind": "spde", "seed": 1, "spde": {"grid": {"L": 1, "J": 10, "dt": 1.0, "T": 1}}}')
    with pytest.raises(ValidationError):
        parse_config('{"kind": "particles", "seed": -2}')
    with pytest.raises(ValidationError) as e:
        parse_config('{"kind": "spde", "seed": 1, "spde": {"kernel": {"variant": "squared_exponential", "ell": 2}}}')
    assert "kernel" in e.value.field and "ell" in e.value.message


def test_overrides():
    cfg = parse_config(_text(SMALL_PARTICLES), {"seed": 9, "replicates": 7})
    assert cfg.seed == 9 and cfg.replicates == 7


def _read_rows(path):
    with open(path) as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def test_rows_reconstruct_statistics(tmp_path):
    rep = run(parse_config(_text(SMALL_PARTICLES)), out=str(tmp_path))
    header, rows = _read_rows(tmp_path / "rows.csv")
    assert header == ["replicate", "observable", "t", "value"]
    groups = {}
    for r, obs, t, v in rows:
        groups.setdefault(f"{obs}@t={t}", []).append(float(v))
    agg = json.loads((tmp_path / "aggregate.json").read_text())
    assert set(groups) == set(agg) == set(rep.statistics)
    for k, vals in groups.items():
        assert agg[k]["mean"] == pytest.approx(np.mean(vals), rel=1e-12, abs=1e-15)
        assert agg[k]["replicates"] == len(vals)
    assert any(k.startswith("mp1") for k in groups)


@pytest.mark.parametrize("doc", [SMALL_PARTICLES, SMALL_SPDE, SMALL_SUPPORT], ids=["particles", "spde", "support"])
def test_determinism_across_workers(tmp_path, doc):
    a = run(parse_config(_text(doc)), out=str(tmp_path / "a"), workers=1)
    b = run(parse_config(_text(doc)), out=str(tmp_path / "b"), workers=3)
    c = run(parse_config(_text(doc)), out=str(tmp_path / "c"), workers=1)
    for name in a.artifacts:
        if name == "report.json":
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "c" / name).read_bytes(), name
    assert a.artifacts == b.artifacts


def test_spde_artifacts(tmp_path):
    from sbmlab.spde_solver import read_trajectory_binary

    rep = run(parse_config(_text(SMALL_SPDE)), out=str(tmp_path))
    assert "trajectory_00000.bin" in rep.artifacts and "trajectory_00001.bin" in rep.artifacts
    head, times, snaps = read_trajectory_binary(tmp_path / "trajectory_00000.bin")
    assert head["J"] == 40 and snaps.shape == (times.size, 40)
    assert any(k.startswith("l2@") for k in rep.statistics)


def test_support_artifacts(tmp_path):
    rep = run(parse_config(_text(SMALL_SUPPORT)), out=str(tmp_path))
    rep_json = json.loads((tmp_path / "support_report.json").read_text())
    assert rep_json["report"]["replicates"] == 200 and "extinction" in rep_json
    header, rows = _read_rows(tmp_path / "edges_eps=1e-06.csv")
    assert header == ["replicate", "t", "R_eps"]
    assert len(rows) == 200 * 4
    assert "edges_eps=1e-06.csv" in rep.artifacts


def test_moments_and_kernels_artifacts(tmp_path):
    doc = {"kind": "moments", "seed": 1,
           "moments": {"kernel": {"variant": "constant", "c": 0.5}, "quantity": "second"}}
    run(parse_config(_text(doc)), out=str(tmp_path / "m"))
    oracle = json.loads((tmp_path / "m" / "oracle.json").read_text())
    assert set(oracle) >= {"formula", "params", "value", "error"}
    assert oracle["value"] == pytest.approx(np.exp(0.25) + (np.exp(0.25) - 1) / 0.5, rel=1e-3)
    doc = {"kind": "kernels", "seed": 1, "kernels": {"deltas": [0.5, 2.0], "x": [0.1, 1.0]}}
    rep = run(parse_config(_text(doc)), out=str(tmp_path / "k"))
    diag = json.loads((tmp_path / "k" / "bessel.json").read_text())
    assert "asymptotes" in diag or "lp" in diag
    assert "kernels.csv" in rep.artifacts


def test_crosscheck_report_shape(tmp_path):
    rep = run(parse_config('{"kind": "crosscheck", "seed": 1, "crosscheck": {"recipe": "bessel"}}'),
              out=str(tmp_path))
    assert rep.passed and rep.checks
    for c in rep.checks:
        assert set(c) >= {"name", "passed", "measured", "tolerance"}


def test_recorder_stays_inside(tmp_path):
    rec = Recorder(str(tmp_path))
    with pytest.raises(ValueError):
        rec.path("../escape.json")
    with pytest.raises(ValueError):
        rec.path("/tmp/escape.json")


def test_recipes_registered():
    assert set(RECIPES) == {"first_moment", "second_moment_constant", "second_moment_zero", "gronwall",
                            "martingale_problem", "pair_semigroup", "mild_form", "pmoment", "extinction",
                            "compact_support", "occupation_monotone", "bessel"}


def test_cli(tmp_path, capsys):
    assert main(["--seed", "1", "--out", str(tmp_path / "x"), "crosscheck", "bessel"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert main(["crosscheck", "bessel"]) == 2  # no seed
    cfg = tmp_path / "c.json"
    cfg.write_text('{"kind": "spde", "seed": 1, "spde": {"gamma": 1.2}}')
    assert main(["--config", str(cfg), "simulate-spde"]) == 2
    cfg.write_text("{not json")
    assert main(["--config", str(cfg), "simulate-spde"]) == 2
    assert main(["crosscheck", "--list"]) == 0
    assert "mild_form" in capsys.readouterr().out
    cfg.write_text(_text(SMALL_PARTICLES))
    assert main(["--config", str(cfg), "--out", str(tmp_path / "p"), "--threads", "2",
                 "simulate-particles"]) == 0
    assert (tmp_path / "p" / "rows.csv").exists()


def test_cli_failing_crosscheck_exit_status(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "crosscheck", "seed": 1,
                               "crosscheck": {"recipe": "bessel", "tolerances": {"closed_rel": 1e-30}}}))
    code = main(["--config", str(cfg), "--out", str(tmp_path / "o"), "crosscheck"])
    assert code == 1
