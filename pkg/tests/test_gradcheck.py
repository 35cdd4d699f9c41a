import numpy as np
import pytest

from sceneshape.gradcheck import (LOSSES, check_loss, numeric_gradient, relative_error,
                                  run_gradcheck)


def test_numeric_gradient_quadratic():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    g = numeric_gradient(lambda z: float((z ** 2).sum() + z[0, 1] * z[1, 0]), x)
    expect = 2 * x
    expect[0, 1] += x[1, 0]
    expect[1, 0] += x[0, 1]
    assert np.abs(g - expect).max() < 1e-8


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)


@pytest.mark.parametrize("name", LOSSES)
def test_each_loss(name):
    rng = np.random.default_rng(7)
    assert check_loss(name, rng) <= 1e-5


def test_detects_wrong_gradient():
    # halving the analytic gradient must be caught
    x = np.random.default_rng(0).normal(size=(4, 4))
    num = numeric_gradient(lambda z: float((z ** 2).sum()), x)
    assert relative_error(x, num) > 0.4


def test_report():
    rep = run_gradcheck(n_fixtures=2, seed=1)
    assert set(rep.max_error) == set(LOSSES)
    assert rep.passed() and rep.worst <= 1e-5 and rep.seconds > 0
