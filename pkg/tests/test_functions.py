import numpy as np
import pytest

from sbmlab.functions import FiniteMeasure, PairFunction, TestFunction, laplacian_of


def test_bump_laplacian_matches_finite_difference():
    f = TestFunction.gaussian_bump(0.3, 0.7, 2.0)
    x = np.linspace(-2, 2, 11)
    fd = (f(x + 1e-4) - 2 * f(x) + f(x - 1e-4)) / 1e-8
    assert np.allclose(f.laplacian(x), fd, atol=1e-5)
    assert np.allclose(laplacian_of(lambda y: f(y), x), fd, atol=1e-12)


def test_sup_norms():
    assert TestFunction.constant(-3).sup_norm == 3
    assert TestFunction.gaussian_bump(height=2).sup_norm == 2
    assert TestFunction.indicator_box(0, 1).sup_norm == 1
    assert PairFunction.tensor(TestFunction.constant(2), TestFunction.gaussian_bump()).sup_norm == 2


def test_roundtrip_dict():
    for f in (TestFunction.constant(2.5), TestFunction.gaussian_bump(1, 2, 3),
              TestFunction.indicator_box(-1, 4)):
        assert TestFunction.from_dict(f.to_dict()) == f


def test_invalid_variants():
    with pytest.raises(ValueError):
        TestFunction.gaussian_bump(width=0)
    with pytest.raises(ValueError):
        TestFunction.indicator_box(2, 1)
    with pytest.raises(ValueError):
        FiniteMeasure((0.0,), (-1.0,))


def test_tensor_and_grid_pair():
    phi = TestFunction.gaussian_bump(0, 1)
    F = PairFunction.tensor(phi)
    nodes = np.linspace(-3, 3, 61)
    G = PairFunction.grid(nodes, F.on_grid(nodes))
    assert G(nodes[10], nodes[20]) == pytest.approx(phi(nodes[10]) * phi(nodes[20]), abs=1e-14)
    assert G(5.0, 0.0) == 0.0


def test_measure_integrate():
    mu = FiniteMeasure.weighted_points([(0.0, 1.0), (1.0, 2.0)])
    assert mu.total_mass == 3.0
    assert mu.integrate(lambda x: x) == 2.0
