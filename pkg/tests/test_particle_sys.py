import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbmlab.env_field import CovarianceKernel, EnvironmentField
from sbmlab.errors import MismatchedField
from sbmlab.functions import TestFunction
from sbmlab.moment_oracle import first_moment
from sbmlab.functions import FiniteMeasure
from sbmlab.particle_sys import (
    InitialLaw,
    ParticlePopulation,
    ParticleSystemConfig,
    branch_epoch,
    check_mp,
    run_ensemble,
    simulate_path,
    step_motion,
)
from sbmlab.streams import derive_stream

ONE = TestFunction.constant(1.0)


def _field(points, value):
    return EnvironmentField(np.asarray(points, dtype=float), np.full(len(points), float(value)))


def test_step_motion_empty():
    pop = ParticlePopulation(np.zeros(0), 0, 4)
    out = step_motion(pop, 0.5, derive_stream(0, 0, "m"))
    assert out.count == 0


def test_step_motion_variance_and_mean():
    rng = derive_stream(2, 0, "m")
    pop = ParticlePopulation(np.zeros(100_000), 0, 1)
    d = step_motion(pop, 0.5, rng).positions
    N = d.size
    assert abs(d.mean()) <= 3 * np.sqrt(1.0 / N)
    assert abs(d.var(ddof=1) - 1.0) <= 3 * np.sqrt(2.0 / (N - 1))


def test_branch_extremes():
    n = 16
    pos = np.linspace(-1, 1, 7)
    pop = ParticlePopulation(pos, 0, n)
    up = branch_epoch(pop, _field(pos, np.sqrt(n)), n, derive_stream(0, 0, "b"))
    assert up.count == 14 and up.epoch == 1
    down = branch_epoch(pop, _field(pos, -np.sqrt(n)), n, derive_stream(0, 0, "b"))
    assert down.count == 0


def test_branch_critical_mean():
    n = 9
    rng = derive_stream(3, 0, "b")
    pos = np.zeros(100_000)
    pop = ParticlePopulation(pos, 0, n)
    # one particle per replicate: offspring count is 0 or 2
    survive = branch_epoch(pop, _field(pos, 0.0), n, rng).count / 2
    offspring = np.concatenate([np.full(int(survive), 2.0), np.zeros(pos.size - int(survive))])
    se = offspring.std(ddof=1) / np.sqrt(pos.size)
    assert abs(offspring.mean() - 1.0) <= 3 * se


def test_branch_mismatched_field():
    pop = ParticlePopulation(np.array([0.0, 1.0]), 0, 4)
    with pytest.raises(MismatchedField):
        branch_epoch(pop, _field([0.0, 2.0], 0.0), 4, derive_stream(0, 0, "b"))


def test_initial_mass_exact():
    cfg = ParticleSystemConfig(n=32, T=1.0, seed=1)
    assert simulate_path(cfg, [(ONE, 0.0)])[0] == 1.0


def test_identical_ids_give_zero_se():
    cfg = ParticleSystemConfig(n=16, T=0.5, seed=4)
    res = run_ensemble(cfg, [(ONE, 0.5)], 2, replicate_ids=[0, 0])
    assert res.observable_stats()[0]["se"] == 0.0


def test_se_scaling():
    cfg = ParticleSystemConfig(n=16, T=0.5, seed=5)
    a = run_ensemble(cfg, [(ONE, 0.5)], 2000).observable_stats()[0]["se"]
    b = run_ensemble(cfg, [(ONE, 0.5)], 4000).observable_stats()[0]["se"]
    assert abs(b / a - 1 / np.sqrt(2)) <= 0.2 / np.sqrt(2)


@pytest.mark.slow
def test_zero_kernel_mass_and_symmetry():
    cfg = ParticleSystemConfig(n=16, T=0.5, seed=6)
    xf = lambda x: np.asarray(x, dtype=float)
    res = run_ensemble(cfg, [(ONE, 0.5), (xf, 0.5)], 10_000)
    m, x = res.observable_stats()
    assert abs(m["mean"] - 1.0) <= 3 * m["se"]
    assert abs(x["mean"]) <= 3 * x["se"]


def test_first_moment_agreement_bump():
    f = TestFunction.gaussian_bump(0.0, 0.5, 1.0)
    cfg = ParticleSystemConfig(n=32, T=0.5, kernel=CovarianceKernel.squared_exponential(1.0, 1.0), seed=7)
    st_ = run_ensemble(cfg, [(f, 0.5)], 3000).observable_stats()[0]
    ref = first_moment(FiniteMeasure.point_mass(0.0), f, 0.5)
    assert abs(st_["mean"] - ref) <= 4 * st_["se"]


def test_worker_invariance():
    cfg = ParticleSystemConfig(n=16, T=0.5, kernel=CovarianceKernel.squared_exponential(1.0, 1.0), seed=8)
    obs = [(ONE, 0.25), (TestFunction.gaussian_bump(), 0.5)]
    a = run_ensemble(cfg, obs, 40, workers=1, mp_requests=[(ONE, 0.5)])
    b = run_ensemble(cfg, obs, 40, workers=3, mp_requests=[(ONE, 0.5)])
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.mp, b.mp)


def test_mp_zero_time():
    cfg = ParticleSystemConfig(n=8, T=0.5, seed=9)
    r = check_mp(cfg, ONE, 0.0, 50)
    assert r.lhs == 0.0 and r.rhs == 0.0


def test_mp_balance_zero_kernel():
    cfg = ParticleSystemConfig(n=16, T=0.5, seed=10)
    r = check_mp(cfg, ONE, 0.5, 3000)
    assert abs(r.rhs - 0.5) <= 3 * r.rhs_se
    assert abs(r.lhs - r.rhs) <= 3 * r.combined_se


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.0, 0.5, 1.0]))
def test_mass_nonnegative_and_absorbing(seed, c):
    kernel = CovarianceKernel.constant(c) if c else CovarianceKernel.zero()
    cfg = ParticleSystemConfig(n=8, T=1.0, kernel=kernel, seed=seed)
    times = np.linspace(0, 1, 9)
    m = simulate_path(cfg, [(ONE, t) for t in times])
    assert np.all(m >= 0)
    dead = np.flatnonzero(m == 0)
    if dead.size:
        assert np.all(m[dead[0]:] == 0)


def test_uniform_initial_law():
    law = InitialLaw.uniform(-1, 0, mass=2.0)
    cfg = ParticleSystemConfig(n=10, T=0.1, initial=law)
    assert cfg.K_n == 20
    assert simulate_path(cfg, [(ONE, 0.0)])[0] == 2.0
    with pytest.raises(ValueError):
        ParticleSystemConfig(n=10, T=0.1, initial=law, K_n=5)
