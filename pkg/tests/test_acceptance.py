"""Acceptance suite: each criterion runs its crosscheck recipe through the harness.

Recipes carry the acceptance-scale defaults (replicate counts, grids and
tolerances). Every criterion prints one PASS/FAIL line, and the terminal
summary repeats them all.
"""
import json
import os

import pytest

from sbmlab.harness import parse_config, run

from conftest import ACCEPTANCE_LINES

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SEED = 1

CRITERIA = [
    (1, "first-moment formula", "first_moment"),
    (2, "second moment, constant environment", "second_moment_constant"),
    (3, "classical reduction g = 0", "second_moment_zero"),
    (4, "Gronwall bound", "gronwall"),
    (5, "martingale problem balance", "martingale_problem"),
    (6, "pair-semigroup cross-validation", "pair_semigroup"),
    (7, "mild-form residual order", "mild_form"),
    (8, "weighted moment bound", "pmoment"),
    (9, "extinction oracle", "extinction"),
    (10, "compact-support contrast", "compact_support"),
    (11, "occupation-integral monotonicity", "occupation_monotone"),
    (12, "Bessel-kernel claims", "bessel"),
]


class Runs:
    def __init__(self, root):
        self.root = root
        self.reports = {}

    def get(self, recipe, workers=1):
        key = (recipe, workers)
        if key not in self.reports:
            cfg = parse_config(json.dumps({"kind": "crosscheck", "seed": SEED,
                                           "crosscheck": {"recipe": recipe}}))
            out = os.path.join(self.root, f"{recipe}-w{workers}")
            self.reports[key] = (run(cfg, out=out, workers=workers), out)
        return self.reports[key]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(str(tmp_path_factory.mktemp("acceptance")))


def _emit(number, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:2d} ({title}): {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def _detail(report):
    parts = []
    for c in report.checks:
        m = c["measured"]
        if isinstance(m, float):
            m = f"{m:.6g}"
        parts.append(f"{c['name']}={m}{'' if c['passed'] else ' (fail)'}")
    return "; ".join(parts)


@pytest.mark.parametrize("number,title,recipe", CRITERIA, ids=[c[2] for c in CRITERIA])
def test_criterion(runs, number, title, recipe):
    report, _ = runs.get(recipe)
    _emit(number, title, report.passed, _detail(report))
    failed = [c for c in report.checks if not c["passed"]]
    assert report.checks and not failed, failed


def _csv_artifacts(out):
    return sorted(f for f in os.listdir(out) if f.endswith(".csv"))


def test_criterion_13_determinism(runs):
    mismatched = []
    compared = 0
    for _, _, recipe in CRITERIA:
        _, out1 = runs.get(recipe, 1)
        _, out8 = runs.get(recipe, 8)
        names = _csv_artifacts(out1)
        if names != _csv_artifacts(out8):
            mismatched.append(f"{recipe}: artifact lists differ")
            continue
        for name in names:
            compared += 1
            with open(os.path.join(out1, name), "rb") as a, open(os.path.join(out8, name), "rb") as b:
                if a.read() != b.read():
                    mismatched.append(f"{recipe}/{name}")
    _emit(13, "determinism at 1 vs 8 workers", not mismatched,
          f"{compared} CSV files compared, {len(mismatched)} differ")
    assert not mismatched, mismatched
