import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbmlab import backend
from sbmlab.env_field import CovarianceKernel
from sbmlab.errors import StabilityError, ValidationError
from sbmlab.spde_solver import (
    GridFunction,
    GridSpec,
    InitialProfile,
    SpdeConfig,
    StepNoise,
    colored_noise_factor,
    duhamel_residual,
    estimate_pmoment,
    mass_at,
    mass_process,
    read_trajectory_binary,
    refine_noise,
    run_spde_ensemble,
    simulate,
    simulate_noiseless,
    step,
    weighted_Lp_norm,
    write_trajectory_binary,
    write_trajectory_csv,
)
from sbmlab.streams import derive_stream

SE = CovarianceKernel.squared_exponential(1.0, 1.0)
SMALL = GridSpec(6.0, 60, 0.0025, 0.5)
BUMP = InitialProfile("cosine", 1.0, lo=-1.0, hi=1.0)


def _cfg(gamma=0.5, kernel=None, u0=BUMP, grid=SMALL, **kw):
    return SpdeConfig(gamma, kernel or CovarianceKernel.zero(), u0, grid, **kw)


def test_grid_invariants():
    with pytest.raises(StabilityError):
        GridSpec(1.0, 10, 0.02, 1.0)
    with pytest.raises(ValidationError):
        GridSpec(1.0, 11, 0.001, 1.0)
    g = GridSpec(1.0, 10, 0.01, 1.0)
    assert g.h == 0.2 and g.steps == 100
    with pytest.raises(StabilityError):
        step(GridFunction(np.zeros(10), 0.0, g), _cfg(grid=g, scheme="euler"), StepNoise(), dt=0.02)


def test_gamma_range():
    with pytest.raises(ValidationError) as e:
        _cfg(gamma=1.2)
    assert e.value.field == "gamma"


def test_colored_factor_examples():
    assert colored_noise_factor(CovarianceKernel.zero(), SMALL).rank == 0
    A = colored_noise_factor(CovarianceKernel.constant(0.5), SMALL).A
    assert A.shape[1] == 1
    eta = derive_stream(0, 0, "c").standard_normal((50_000, 1)) @ A.T
    assert np.all(eta == eta[:, :1])
    assert abs(eta[:, 0].var() - 0.5) <= 4 * 0.5 * np.sqrt(2 / eta.shape[0])


@pytest.mark.slow
def test_colored_factor_covariance():
    g = GridSpec(3.0, 12, 0.01, 1.0)
    A = colored_noise_factor(SE, g).A
    eta = derive_stream(1, 0, "c").standard_normal((100_000, A.shape[1])) @ A.T
    K = SE.matrix(g.x)
    emp = eta.T @ eta / eta.shape[0]
    se = np.sqrt((np.outer(np.diag(K), np.diag(K)) + K * K) / eta.shape[0])
    assert np.all(np.abs(emp - K) <= 4 * se + 1e-12)


@pytest.mark.parametrize("scheme", ["auto", "euler"])
def test_zero_initial_gives_zero(scheme):
    cfg = _cfg(u0=InitialProfile("zero"), kernel=SE, scheme=scheme, retain_noise=scheme == "euler")
    traj = simulate(cfg, 3)
    assert np.all(traj.snapshots == 0) and np.all(traj.mass == 0)
    assert np.all(mass_process(traj)[1] == 0)
    if scheme == "euler":
        assert duhamel_residual(traj) == 0.0


def test_zero_noise_conserves_mass():
    traj = simulate_noiseless(_cfg(grid=GridSpec(10.0, 200, 0.0025, 0.5)))
    _, m = mass_process(traj)
    assert np.all(np.diff(m) <= 1e-12)
    assert np.all(np.abs(np.diff(m)) <= 1e-12)


def test_step_zero_and_heat():
    g = SMALL
    cfg = _cfg(scheme="euler")
    u = GridFunction(np.zeros(g.J), 0.0, g)
    assert np.all(step(u, cfg, StepNoise(np.ones(g.J), np.ones(g.J))).values == 0)
    u = GridFunction(BUMP.on_grid(g), 0.0, g)
    v = step(u, cfg, StepNoise())
    lap = np.convolve(np.pad(u.values, 1), [1, -2, 1], "valid") / g.h ** 2
    assert np.allclose(v.values, u.values + g.dt * lap, atol=1e-14)


def test_duhamel_zero_noise_discrete_propagator():
    cfg = _cfg(scheme="euler", retain_noise=True)
    zero = np.zeros((SMALL.steps, SMALL.J))
    from sbmlab.spde_solver import NoiseRealization
    traj = simulate(cfg, noise=NoiseRealization(zero, zero, zero), warn=False)
    assert duhamel_residual(traj, "discrete") <= 1e-8
    assert duhamel_residual(traj, "exponential") <= 0.01


def test_duhamel_discrete_matches_noisy_run():
    traj = simulate(_cfg(gamma=0.7, kernel=SE, scheme="euler", retain_noise=True), 1, warn=False)
    assert duhamel_residual(traj, "discrete") <= 1e-8


def test_refine_noise_sums_back():
    cfg = _cfg(kernel=SE, scheme="euler", retain_noise=True, grid=GridSpec(6.0, 60, 0.0025, 0.1))
    noise = simulate(cfg, 2, warn=False).noise
    fine = refine_noise(noise, SE, cfg.grid, derive_stream(0, 0, "r"))
    assert fine.white.shape[0] == 2 * noise.white.shape[0]
    back = (fine.white[0::2] + fine.white[1::2]) / np.sqrt(2)
    assert np.allclose(back, np.nan_to_num(noise.white), atol=1e-13)
    back = (fine.colored[0::2] + fine.colored[1::2]) / np.sqrt(2)
    assert np.allclose(back, noise.colored, atol=1e-13)


def test_mild_residual_halves_with_dt():
    g = GridSpec(5.0, 50, 0.0015, 0.0015 * 133)
    cfg = _cfg(gamma=0.75, kernel=SE, grid=g, scheme="euler", retain_noise=True)
    coarse = simulate(cfg, 0, warn=False)
    noise = refine_noise(coarse.noise, SE, g, derive_stream(9, 0, "r"))
    fine = simulate(replace(cfg, grid=GridSpec(g.L, g.J, g.dt / 2, g.T)), 0, noise=noise, warn=False)
    ratio = duhamel_residual(coarse) / duhamel_residual(fine)
    assert 1.5 <= ratio <= 3.0


@pytest.mark.parametrize("name", ["python", "native"])
def test_replay_rejects_short_noise(name):
    if name == "native" and not backend.native_available():
        pytest.skip("compiled extension not built")
    from sbmlab.spde_solver import NoiseRealization

    # T/dt is not a whole number: the dt/2 grid needs 2M + 1 rows, not 2M
    g = GridSpec(5.0, 50, 0.0014, 0.2)
    cfg = _cfg(gamma=0.75, kernel=SE, grid=g, scheme="euler", retain_noise=True)
    coarse = simulate(cfg, 0, name, warn=False)
    fine_grid = GridSpec(g.L, g.J, g.dt / 2, g.T)
    assert fine_grid.steps == 2 * g.steps + 1
    noise = refine_noise(coarse.noise, SE, g, derive_stream(9, 0, "r"))
    with pytest.raises(ValueError):
        simulate(replace(cfg, grid=fine_grid), 0, name, noise=noise, warn=False)
    short = np.zeros((3, g.J))
    with pytest.raises(ValueError):
        backend.get_integrator(name)(
            np.zeros(g.J), 3, 0.1, 0.75, 0.1, 0.1, 0.1, 0.2, np.random.Philox(0), np.zeros((0, 0)),
            short, short, np.zeros(0, dtype=np.intp), np.zeros((0, g.J)), np.zeros(0, dtype=np.intp),
            np.zeros((6, 0)), np.zeros(6), np.zeros((0, 0)), np.zeros((0, 0)))


def test_weighted_lp_examples():
    g = GridSpec(8.0, 320, 0.0001, 0.1)
    zero = GridFunction(np.zeros(g.J), 0.0, g)
    assert weighted_Lp_norm(zero, 2, 1) == 0.0
    one = GridFunction(np.ones(g.J), 0.0, g)
    assert abs(weighted_Lp_norm(one, 1, 1) - 2 * (1 - np.exp(-g.L))) <= g.h ** 2
    u = GridFunction(BUMP.on_grid(g), 0.0, g)
    u2 = GridFunction(2 * u.values, 0.0, g)
    for p in (1, 2, 3.5):
        assert weighted_Lp_norm(u2, p, 0.5) == pytest.approx(2 ** p * weighted_Lp_norm(u, p, 0.5), rel=1e-14)


@pytest.mark.skipif(not backend.native_available(), reason="compiled extension not built")
@pytest.mark.parametrize("gamma,scheme", [(0.5, "auto"), (1.0, "auto"), (0.75, "auto"), (0.6, "euler")])
def test_backend_parity(gamma, scheme):
    cfg = _cfg(gamma=gamma, kernel=SE, scheme=scheme, snapshot_times=(0.1, 0.3), probes=(0.0, 1.0))
    a = simulate(cfg, 4, "native", warn=False)
    b = simulate(cfg, 4, "python", warn=False)
    assert np.allclose(a.snapshots, b.snapshots, rtol=1e-12, atol=1e-14)
    assert np.allclose(a.probe_vals, b.probe_vals, rtol=1e-12, atol=1e-14)
    assert a.extinction_step == b.extinction_step


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**20), st.sampled_from([0.5, 0.6, 0.8, 1.0]),
       st.sampled_from(["zero", "const", "se"]), st.booleans())
def test_nonnegative_and_absorbing(seed, gamma, kern, euler):
    kernel = {"zero": CovarianceKernel.zero(), "const": CovarianceKernel.constant(0.5), "se": SE}[kern]
    cfg = _cfg(gamma=gamma, kernel=kernel, grid=GridSpec(4.0, 40, 0.005, 1.0), seed=seed,
               scheme="euler" if euler else "auto", u0=InitialProfile("cosine", 0.2, lo=-1, hi=0),
               snapshot_times=tuple(np.arange(0.1, 1.0, 0.1)))
    traj = simulate(cfg, 0, warn=False)
    assert np.all(traj.snapshots >= 0) and np.all(traj.mass >= 0)
    dead = np.flatnonzero(traj.mass == 0)
    if dead.size:
        assert np.all(traj.mass[dead[0]:] == 0)
        assert traj.extinction_step == dead[0]


def _mass_T(traj):
    m = traj.mass[-1]
    return [m, m * m]


@pytest.mark.slow
def test_martingale_mass_and_feller_second_moment():
    cfg = _cfg(grid=GridSpec(8.0, 80, 0.01, 0.5), seed=2)
    rows = run_spde_ensemble(cfg, 4000, _mass_T)
    mean, sq = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / np.sqrt(rows.shape[0])
    assert abs(mean - 1.0) <= 3 * se[0]
    assert abs(sq - 1.5) <= 4 * se[1]


def test_martingale_mass_colored():
    cfg = _cfg(gamma=0.75, kernel=SE, grid=GridSpec(8.0, 80, 0.01, 0.5), seed=3)
    rows = run_spde_ensemble(cfg, 1000, _mass_T)
    se = rows[:, 0].std(ddof=1) / np.sqrt(rows.shape[0])
    assert abs(rows[:, 0].mean() - 1.0) <= 4 * se


def test_determinism_and_workers():
    cfg = _cfg(gamma=0.6, kernel=SE, seed=5)
    a = run_spde_ensemble(cfg, 6, _mass_T, workers=1)
    b = run_spde_ensemble(cfg, 6, _mass_T, workers=3)
    assert np.array_equal(a, b)
    assert np.array_equal(simulate(cfg, 2).final, simulate(cfg, 2).final)


def test_pmoment_zero_and_monotone():
    zero = estimate_pmoment(_cfg(u0=InitialProfile("zero")), 2, 1, 100, [0.25, 0.5])
    assert zero.value == 0.0
    est = estimate_pmoment(_cfg(grid=GridSpec(8.0, 80, 0.01, 0.5)), 2, 1, 300, [0.25, 0.5])
    assert np.isfinite(est.value)
    # sup over [0, 0.25] vs sup over [0, 0.5]
    assert est.means[0] <= max(est.means) + 4 * est.ses[0]
    with pytest.raises(ValueError):
        estimate_pmoment(_cfg(), 2, 1, 50, [0.5])


def test_binary_roundtrip(tmp_path):
    cfg = _cfg(kernel=SE, snapshot_times=(0.1, 0.2))
    traj = simulate(cfg, 1, warn=False)
    path = tmp_path / "t.bin"
    write_trajectory_binary(path, traj)
    head, times, snaps = read_trajectory_binary(path)
    assert head == {"J": 60, "L": 6.0, "dt": 0.0025, "T": 0.5, "count": 4}
    assert np.array_equal(times, traj.times) and np.array_equal(snaps, traj.snapshots)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_trajectory_binary(path)
    write_trajectory_csv(tmp_path / "t.csv", traj)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x,u" and len(lines) == 1 + 4 * 60


def test_mass_at_and_boundary_warning():
    traj = simulate_noiseless(_cfg())
    assert mass_at(traj, [0.0])[0] == pytest.approx(1.0, abs=1e-12)
    wide = _cfg(u0=InitialProfile("box", 1.0, lo=-1.0, hi=0.0), grid=GridSpec(1.2, 24, 0.001, 0.5))
    with pytest.warns(Warning):
        simulate(wide, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        simulate(wide, 0, warn=False)
