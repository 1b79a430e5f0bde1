import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmp_sweep.odeint import (
    IntegrationError,
    TimeGrid,
    Trajectory,
    quadrature,
    rk4_backward,
    rk4_forward,
    with_midpoints,
)


def test_grid():
    g = TimeGrid(0.0, 2.0, 5)
    assert g.nodes.tolist() == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert g.h == 0.5
    assert np.all(np.diff(g.half_nodes) > 0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 3)


def test_with_midpoints():
    assert with_midpoints(np.array([[0.0], [2.0], [6.0]]))[:, 0].tolist() == [0, 1, 2, 4, 6]


def test_trajectory_shape_checks():
    g = TimeGrid(0, 1, 3)
    with pytest.raises(ValueError):
        Trajectory(g, np.zeros((2, 1)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        Trajectory(g, np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((3, 1)))


def test_constant_solution():
    Y = rk4_forward(lambda t, y: [0.0], [5.0], TimeGrid(0, 1, 11))
    assert np.all(Y == 5.0)


def test_exponential():
    Y = rk4_forward(lambda t, y: [y[0]], [1.0], TimeGrid(0, 1, 101))
    assert abs(Y[-1, 0] - math.e) <= 1e-8


def test_state_recovery_with_tabulated_control():
    g = TimeGrid(0, 1, 1001)
    U = (3 - 3 * g.nodes)[:, None]
    X = rk4_forward(lambda t, y, u: [u[0]], [0.0], g, U)
    assert abs(X[-1, 0] - 1.5) <= 1e-9


def test_backward_examples():
    g = TimeGrid(0, 1, 1001)
    lam = rk4_backward(lambda t, y: [-1.0], [0.0], g)[:, 0]
    assert np.abs(lam - (1 - g.nodes)).max() <= 1e-12
    assert np.all(rk4_backward(lambda t, y: [0.0], [2.5], g) == 2.5)
    C = -7.0
    lam2 = rk4_backward(lambda t, y: [-(1 + C)], [0.0], g)[:, 0]
    # lam2' = 6 with lam2(1) = 0 gives lam2 = -6 (1 - t), so -lam2 / 2 = 3 - 3t
    assert np.abs(lam2 + 6 * (1 - g.nodes)).max() <= 1e-12
    assert np.abs(-lam2 / 2 - (3 - 3 * g.nodes)).max() <= 1e-12


def test_backward_uses_frozen_values():
    g = TimeGrid(0, 1, 201)
    Z = g.nodes[:, None] ** 2
    Y = rk4_backward(lambda t, y, z: [z[0]], [0.0], g, Z)[:, 0]
    # y(t) = -(1 - t^3)/3; linear interpolation of z at midpoints costs O(h^2)
    assert np.abs(Y + (1 - g.nodes**3) / 3).max() <= 1e-5


def test_nonfinite_reports_node():
    g = TimeGrid(0, 1, 101)
    with pytest.raises(IntegrationError) as info:
        rk4_forward(lambda t, y: [y[0] ** 2], [4.0], g)  # blows up at t = 1/4
    assert 0 < info.value.node <= 100
    with pytest.raises(IntegrationError):
        rk4_forward(lambda t, y: [math.nan if t > 0.5 else 0.0], [0.0], g)


def test_rk4_order():
    def err(N):
        Y = rk4_forward(lambda t, y: [math.cos(t)], [0.0], TimeGrid(0, 2, N))
        return abs(Y[-1, 0] - math.sin(2))

    ratio = err(11) / err(21)
    assert 14 <= ratio <= 18


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.1, 2))
def test_forward_then_backward_recovers_start(y0, k):
    g = TimeGrid(0, 1, 1001)
    f = lambda t, y: [-k * y[0] + math.sin(t), y[0] - y[1]]  # noqa: E731
    Y = rk4_forward(f, [y0, 0.5], g)
    Z = rk4_backward(f, Y[-1], g)
    assert np.abs(Z[0] - [y0, 0.5]).max() <= 1e-8


def test_quadrature_examples():
    assert quadrature(np.ones(5), TimeGrid(0, 2, 5)) == 2.0
    assert quadrature(np.ones(4), TimeGrid(0, 2, 4)) == pytest.approx(2.0, abs=1e-15)
    g = TimeGrid(0, 1, 101)
    assert abs(quadrature(g.nodes**2, g) - 1 / 3) <= 1e-9
    g = TimeGrid(0, 1, 1001)
    assert abs(quadrature(10 * g.nodes - 9 * g.nodes**2, g) - 2) <= 1e-9
    with pytest.raises(ValueError):
        quadrature(np.ones(3), TimeGrid(0, 1, 4))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.integers(1, 50))
def test_simpson_exact_for_cubics(c, half):
    g = TimeGrid(-1.0, 2.0, 2 * half + 1)
    t = g.nodes
    f = c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3
    F = lambda s: c[0] * s + c[1] * s**2 / 2 + c[2] * s**3 / 3 + c[3] * s**4 / 4  # noqa: E731
    assert quadrature(f, g) == pytest.approx(F(2.0) - F(-1.0), abs=1e-10 * (1 + sum(map(abs, c))))
