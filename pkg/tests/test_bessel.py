import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import kv

from sbmlab.bessel import asymptote_check, eval_R, eval_R_prime, lp_classify
from sbmlab.errors import DomainError


def R_oracle(delta, x):
    """Closed form 2 (|x|/2)^nu K_nu(|x|), nu = (delta - 1)/2."""
    nu = (delta - 1) / 2
    ax = abs(x)
    return 2 * (ax / 2) ** nu * kv(nu, ax)


def Rp_oracle(delta_plus_1, x):
    nu = (delta_plus_1 - 1) / 2
    ax = abs(x)
    return -np.sign(x) * 2 * (ax / 2) ** nu * kv(nu - 1, ax)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(1e-3, 25.0))
def test_eval_R_matches_bessel_k(delta, x):
    assert eval_R(delta, x) == pytest.approx(R_oracle(delta, x), rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(1e-3, 25.0), st.booleans())
def test_eval_R_prime_matches_bessel_k(d1, x, neg):
    x = -x if neg else x
    assert eval_R_prime(d1, x) == pytest.approx(Rp_oracle(d1, x), rel=1e-8)


def test_delta_two_closed_form():
    assert abs(eval_R(2.0, 1.0) - np.sqrt(np.pi) * np.exp(-1)) <= 1e-6
    assert eval_R(2.0, 1.0) == pytest.approx(0.652049, abs=1e-6)
    for x in (5.0, 10.0, 20.0):
        assert abs(eval_R(2.0, x) * np.exp(x) - np.sqrt(np.pi)) <= 1e-6


@pytest.mark.parametrize("delta", [0.5, 1.0, 1.5, 2.0, 3.0])
def test_symmetry_and_monotonicity(delta):
    xs = np.linspace(0.1, 5.0, 50)
    vals = np.array([eval_R(delta, x) for x in xs])
    assert np.all(np.diff(vals) < 0) and np.all(vals > 0)
    for x in xs[::7]:
        assert eval_R(delta, x) == eval_R(delta, -x)
        assert eval_R_prime(delta + 1, -x) == -eval_R_prime(delta + 1, x)
        assert eval_R_prime(delta + 1, x) <= 0


def test_prime_finite_difference():
    h = 1e-5
    fd = (eval_R(1.5, 0.5 + h) - eval_R(1.5, 0.5 - h)) / (2 * h)
    v = eval_R_prime(1.5, 0.5)
    assert abs(v - fd) <= max(1e-6, 1e-4 * abs(v))


def test_domain_errors():
    with pytest.raises(DomainError):
        eval_R(0.5, 0.0)
    with pytest.raises(DomainError):
        eval_R(1.0, 0.0)
    with pytest.raises(DomainError):
        eval_R_prime(1.5, 0.0)
    with pytest.raises(DomainError):
        eval_R(0.0, 1.0)
    assert np.isfinite(eval_R(1.5, 0.0))


@pytest.mark.parametrize("delta", [0.5, 1.0, 1.5, 2.0])
def test_asymptotes(delta):
    rec = asymptote_check(delta)
    assert rec.passed, rec.checks
    d = rec.to_dict()
    assert d["delta"] == delta and "tail" in d["grids"]


def test_tail_envelope_fails_above_two():
    # R_delta(x) e^|x| grows like |x|^((delta-2)/2) for delta > 2
    rec = asymptote_check(2.5)
    assert not rec.checks["tail_exp_envelope"]["passed"]


def test_lp_classification():
    assert lp_classify(0.5, 1.5).classification == "convergent"
    assert lp_classify(0.5, 2.5).classification == "divergent"
    assert lp_classify(0.5, 2.0).classification == "inconclusive"
    assert lp_classify(1.5, np.inf).classification == "convergent"
    with pytest.raises(DomainError):
        lp_classify(0.5, 0.5)


def test_quadrature_stability():
    from sbmlab import bessel

    base = eval_R(0.7, 0.3)
    old = bessel.EPSREL
    try:
        bessel.EPSREL = old / 100
        assert abs(eval_R(0.7, 0.3) - base) <= 1e-8 * base
    finally:
        bessel.EPSREL = old
