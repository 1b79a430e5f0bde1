import math

import numpy as np
import pytest

import oracles as O
from pmp_sweep import lqr
from pmp_sweep.fbsm import SweepConfig, solve
from pmp_sweep.lqr import LqrError, LqrProblem, closed_loop, riccati_solve
from pmp_sweep.model import registry_get
from pmp_sweep.odeint import IntegrationError


def two_by_two(**kw):
    base = dict(
        A=[[0.0, 1.0], [-1.0, -0.2]],
        B=[[0.0], [1.0]],
        Q=[[2.0, 0.3], [0.3, 1.0]],
        R=[[0.5]],
        M=[[1.0, 0.0], [0.0, 0.5]],
        T=2.0,
        x0=[1.0, -0.5],
    )
    base.update(kw)
    return LqrProblem(**base)


@pytest.fixture(scope="module")
def scalar():
    p = lqr.scalar_example()
    sol = riccati_solve(p, 1001)
    return p, sol, closed_loop(p, sol)


def test_scalar_riccati(scalar):
    p, sol, traj = scalar
    S, x, u = O.lqr_scalar(sol.grid.nodes)
    assert abs(sol.S[0, 0, 0] - math.tanh(1.0)) <= 1e-8
    assert np.abs(sol.S[:, 0, 0] - S).max() <= 1e-6
    assert np.abs(traj.x[:, 0] - x).max() <= 1e-6
    assert np.abs(traj.u[:, 0] - u).max() <= 1e-6
    assert traj.x[0, 0] == 1.0
    assert abs(traj.u[0, 0] + math.tanh(1.0)) <= 1e-6
    assert np.array_equal(traj.lam[:, 0], sol.S[:, 0, 0] * traj.x[:, 0])


def test_trivial_cases():
    p = LqrProblem(A=1.0, B=1.0, Q=0.0, R=1.0, M=0.0, T=1.0, x0=[1.0])
    sol = riccati_solve(p, 101)
    assert np.all(sol.S == 0) and np.all(sol.K == 0)
    p = LqrProblem(A=np.zeros((2, 2)), B=np.zeros((2, 1)), Q=np.zeros((2, 2)), R=[[1.0]], M=np.eye(2), T=1.0, x0=[1, 2])
    assert np.all(riccati_solve(p, 101).S == np.eye(2))
    p = lqr.scalar_example(x0=0.0)
    traj = closed_loop(p, riccati_solve(p, 101))
    assert np.all(traj.x == 0) and np.all(traj.u == 0)


def test_running_cost_wiring():
    p = lqr.lqr_as_ocp(lqr.scalar_example())
    assert p.evaluator.running(0.0, np.array([[1.0]]), np.array([[1.0]]))[0] == 1.0


def test_validation():
    with pytest.raises(LqrError, match="symmetric"):
        two_by_two(Q=[[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(LqrError, match="semidefinite"):
        two_by_two(M=[[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(LqrError, match="positive definite"):
        two_by_two(R=[[0.0]])
    with pytest.raises(LqrError, match="shapes"):
        two_by_two(B=[[1.0, 0.0], [0.0, 1.0]])


def test_finite_escape_is_reported():
    # negative Q makes the Riccati flow blow up; validation must be bypassed
    p = lqr.scalar_example(T=5.0)
    object.__setattr__(p, "Q", np.array([[-50.0]]))
    object.__setattr__(p, "M", np.array([[0.0]]))
    with pytest.raises(IntegrationError):
        riccati_solve(p, 101)


@pytest.mark.parametrize("make", [lqr.scalar_example, two_by_two])
def test_riccati_invariants(make):
    p = make()
    sol = riccati_solve(p, 1001)
    assert np.array_equal(sol.S[-1], p.M)
    assert all(np.array_equal(S, S.T) for S in sol.S)
    assert sol.max_asymmetry <= 1e-9
    assert min(np.linalg.eigvalsh(S).min() for S in sol.S) >= -1e-8
    # finite-difference residual of -S' = A'S + SA - S B R^-1 B'S + Q
    h = sol.grid.h
    dS = (sol.S[2:] - sol.S[:-2]) / (2 * h)
    A, B, Q, R = p.A, p.B, p.Q, p.R
    Sm = sol.S[1:-1]
    rhs = np.stack([A.T @ S + S @ A - S @ B @ np.linalg.solve(R, B.T @ S) + Q for S in Sm])
    assert np.abs(dS + rhs).max() <= 1e-4


def test_time_varying_matches_constant():
    p = two_by_two()
    q = two_by_two(A=lambda t: np.array([[0.0, 1.0], [-1.0, -0.2]]), Q=lambda t: np.array([[2.0, 0.3], [0.3, 1.0]]))
    a, b = riccati_solve(p, 201), riccati_solve(q, 201)
    assert np.abs(a.S - b.S).max() <= 1e-14


def test_cross_check_with_sweep(scalar):
    p, sol, traj = scalar
    res = solve(lqr.lqr_as_ocp(p), SweepConfig())
    assert np.abs(res.trajectory.u - traj.u).max() <= 1e-4
    lam_ansatz = np.einsum("nij,nj->ni", sol.S, res.trajectory.x)
    assert np.abs(res.trajectory.lam - lam_ansatz).max() <= 1e-4


def test_two_by_two_cross_check():
    # the sweep itself diverges for R = 0.5, T = 2; keep the horizon short
    p = two_by_two(R=[[1.0]], T=1.0)
    sol = riccati_solve(p, 1001)
    traj = closed_loop(p, sol)
    res = solve(lqr.lqr_as_ocp(p), SweepConfig())
    assert np.abs(res.trajectory.u - traj.u).max() <= 1e-4


def test_ocp_to_lqr_roundtrip():
    lp = lqr.ocp_to_lqr(registry_get("lqr_scalar"))
    assert (lp.A.item(), lp.B.item(), lp.Q.item(), lp.R.item(), lp.M.item()) == (0, 1, 1, 1, 0)
    p = two_by_two()
    back = lqr.ocp_to_lqr(lqr.lqr_as_ocp(p))
    for k in "ABQRM":
        assert np.allclose(getattr(back, k), getattr(p, k), atol=1e-12)
    with pytest.raises(LqrError):
        lqr.ocp_to_lqr(registry_get("double_integrator"))
    with pytest.raises(LqrError):
        lqr.ocp_to_lqr(registry_get("tracking_saturated"))
