import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from filament_lab._numerics import derivative, fd_weights, fit_power_law, lagrange4, mgs_rows, trapezoid_cumulative


def test_fd_weights_known_stencils():
    w = fd_weights(0.0, [-1.0, 0.0, 1.0], 2)
    np.testing.assert_allclose(w[0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(w[1], [-0.5, 0, 0.5], atol=1e-15)
    np.testing.assert_allclose(w[2], [1, -2, 1], atol=1e-15)
    w5 = fd_weights(0.0, np.arange(-2.0, 3.0), 1)[1]
    np.testing.assert_allclose(w5, np.array([1, -8, 0, 8, -1]) / 12, atol=1e-15)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_derivative_fourth_order(order):
    inner, edge = [], []
    for h in (0.04, 0.02):
        x = np.arange(-1, 1 + h / 2, h)
        d = derivative(np.sin(x), h, order)
        exact = [np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v)][order - 1](x)
        e = np.abs(d - exact)
        inner.append(np.max(e[5:-5]))
        edge.append(np.max(e))
    assert np.log2(inner[0] / inner[1]) > 3.5
    # one-sided stencils of the same width lose one order for even derivatives
    assert np.log2(edge[0] / edge[1]) > 2.8


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(0.0, 1.0))
def test_lagrange4_exact_on_cubics(coef, frac):
    h = 0.1
    x = np.arange(12) * h
    f = np.polyval(coef, x)
    p = 0.5 + frac * 0.4
    assert abs(lagrange4(f, 0.0, h, np.array([p]))[0] - np.polyval(coef, p)) < 1e-11


def test_lagrange4_carries_trailing_axes():
    x = np.linspace(0, 1, 11)
    vals = np.stack([x, x**2, x**3], 1)
    out = lagrange4(vals, 0.0, 0.1, np.array([0.25, 0.55]))
    np.testing.assert_allclose(out, [[0.25, 0.0625, 0.015625], [0.55, 0.3025, 0.166375]], atol=1e-14)


def test_trapezoid_cumulative_origin():
    x = np.linspace(-1, 1, 201)
    F = trapezoid_cumulative(2 * x, 0.01, 100)
    assert F[100] == 0.0
    np.testing.assert_allclose(F, x * x, atol=1e-12)


def test_power_fit_exact_and_interval():
    t = np.logspace(-4, -1, 10)
    fit = fit_power_law(t, 3 * t**0.5)
    assert abs(fit.exponent - 0.5) < 1e-12 and abs(fit.prefactor - 3) < 1e-10
    assert fit.interval[0] <= 0.5 <= fit.interval[1] and fit.n_points == 10
    rng = np.random.default_rng(1)
    noisy = fit_power_law(t, t * np.exp(0.05 * rng.normal(size=10)))
    assert noisy.interval[0] < noisy.exponent < noisy.interval[1]
    with pytest.raises(ValueError):
        fit_power_law([1.0, 2.0], [1.0, 2.0])


def test_mgs_rows():
    rng = np.random.default_rng(0)
    F = np.eye(3) + 1e-3 * rng.normal(size=(5, 3, 3))
    Q = mgs_rows(F)
    np.testing.assert_allclose(Q @ np.swapaxes(Q, 1, 2), np.broadcast_to(np.eye(3), (5, 3, 3)), atol=1e-14)
    np.testing.assert_allclose(Q[:, 0], F[:, 0] / np.linalg.norm(F[:, 0], axis=1, keepdims=True), atol=1e-15)
