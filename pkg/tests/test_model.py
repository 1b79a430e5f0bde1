import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONVERGED_FIXTURES
from pmp_sweep import expr as E
from pmp_sweep.model import (
    BoundarySpec,
    BoxBounds,
    OcpProblem,
    adjoint_rhs,
    hamiltonian,
    registry_get,
    transversality,
)
from pmp_sweep.registry import UnknownProblemError


def zero_problem(n=1, m=1, bounds=None):
    return OcpProblem(
        states=tuple(f"x{i + 1}" for i in range(n)),
        controls=tuple(f"u{k + 1}" for k in range(m)),
        dynamics=("0",) * n,
        running="0",
        boundary=BoundarySpec((0.0,) * n),
        bounds=bounds,
    )


def test_box_bounds_validation():
    with pytest.raises(ValueError, match="exceeds"):
        BoxBounds((1.0,), (0.0,))
    b = BoxBounds((0.0, -np.inf), (2.0, np.inf))
    assert b.default_control().tolist() == [1.0, 0.0]
    assert BoxBounds((1.0,), (np.inf,)).default_control().tolist() == [1.0]


def test_problem_validation():
    with pytest.raises(ValueError, match="t0 < t1"):
        OcpProblem(("x",), ("u",), ("u",), "0", BoundarySpec((0,)), t0=1, t1=1)
    with pytest.raises(E.UnboundVariableError, match="y"):
        OcpProblem(("x",), ("u",), ("u + y",), "0", BoundarySpec((0,)))
    with pytest.raises(ValueError, match="dynamics"):
        OcpProblem(("x", "v"), ("u",), ("u",), "0", BoundarySpec((0, 0)))
    with pytest.raises(ValueError, match="duplicate"):
        OcpProblem(("x",), ("x",), ("x",), "0", BoundarySpec((0,)))


def test_hamiltonian_lqr_scalar():
    p = registry_get("lqr_scalar")
    h = hamiltonian(p, 0.3, [2.0], [1.0], [3.0])
    assert h.value == pytest.approx(5.5, abs=1e-15)


def test_hamiltonian_double_integrator():
    p = registry_get("double_integrator")
    h = hamiltonian(p, 0.0, [0.0, 1.0], [0.0], [0.0, 0.0])
    assert h.value == 1.0
    assert h.dH_du.tolist() == [0.0]


def test_zero_problem_hamiltonian():
    p = zero_problem(2, 1)
    h = hamiltonian(p, 0.5, [1.0, -2.0], [0.3], [4.0, 5.0])
    assert h.value == 0.0
    assert adjoint_rhs(p, 0.5, [1.0, -2.0], [0.3], [4.0, 5.0]).tolist() == [0.0, 0.0]


def test_dimension_mismatch():
    p = registry_get("double_integrator")
    with pytest.raises(ValueError, match="dimension"):
        hamiltonian(p, 0.0, [0.0], [0.0], [0.0, 0.0])


def test_adjoint_rhs_examples():
    p = registry_get("double_integrator")
    assert adjoint_rhs(p, 0.2, [0.1, 0.2], [1.0], [-7.0, 1.0]).tolist() == [0.0, 6.0]
    p = registry_get("linear_growth")
    for t, lam in [(0.0, 3.0), (2.0, -1.0)]:
        assert adjoint_rhs(p, t, [1.7], [0.4], [lam]).tolist() == [-1.0]


def test_transversality():
    assert transversality(zero_problem(3), np.ones(3)) == [0.0, 0.0, 0.0]
    assert transversality(registry_get("double_integrator"), [1.0, 1.5]) == [None, 0.0]
    p = OcpProblem(
        ("a", "b"), ("u",), ("u", "u"), "0", BoundarySpec((0, 0)), terminal="0.5*(a^2 + b^2)"
    )
    assert transversality(p, [2.0, 3.0]) == [2.0, 3.0]


def test_callback_problem_uses_finite_differences():
    p = OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(lambda t, x, u: x[..., 0] * u[..., 0],),
        running=lambda t, x, u: np.sin(x[..., 0]) + u[..., 0] ** 2,
        boundary=BoundarySpec((1.0,)),
        terminal=lambda x: x[0] ** 3,
    )
    h = hamiltonian(p, 0.0, [0.5], [2.0], [1.5])
    assert h.value == pytest.approx(np.sin(0.5) + 4 + 1.5)
    assert h.dH_dx[0] == pytest.approx(np.cos(0.5) + 1.5 * 2.0, rel=1e-8)
    assert h.dH_du[0] == pytest.approx(4.0 + 1.5 * 0.5, rel=1e-8)
    assert p.evaluator.terminal_grad([2.0])[0] == pytest.approx(12.0, rel=1e-8)


def test_callback_with_analytic_partials():
    def partials(t, X, U, Lam):
        return Lam * U, 2 * U + Lam * X

    p = OcpProblem(
        states=("x",),
        controls=("u",),
        dynamics=(lambda t, x, u: x[..., 0] * u[..., 0],),
        running=lambda t, x, u: u[..., 0] ** 2,
        boundary=BoundarySpec((1.0,)),
        hamiltonian_partials=partials,
    )
    h = hamiltonian(p, 0.0, [0.5], [2.0], [1.5])
    assert h.dH_dx.tolist() == [3.0]
    assert h.dH_du.tolist() == [4.75]


def test_registry():
    p = registry_get("double_integrator")
    assert (p.sense, p.n, p.m) == ("min", 2, 1)
    assert p.boundary.initial == (0.0, 0.0)
    assert p.boundary.terminal == (1.0, None)
    q = registry_get("lqr_scalar")
    assert E.pretty_print(q.dynamics[0]) == "((0 * x) + (1 * u))"
    assert E.pretty_print(q.running) == "(0.5 * ((1 * (x ^ 2)) + (1 * (u ^ 2))))"
    assert E.pretty_print(q.terminal) == "((0.5 * 0) * (x ^ 2))"
    iso = registry_get("isoperimetric")
    assert iso.states == ("x", "z")
    assert iso.boundary.initial == (0.0, 0.0)
    assert iso.boundary.terminal == (1.0, 2.0)


def test_registry_overrides_and_errors():
    assert registry_get("linear_growth", T=6.0).t1 == 6.0
    with pytest.raises(UnknownProblemError, match="available: .*double_integrator"):
        registry_get("nope")
    with pytest.raises(UnknownProblemError, match="parameters"):
        registry_get("linear_growth", beta=1.0)


# -- properties ---------------------------------------------------------


def _random_point(p, rng):
    t = rng.uniform(p.t0, p.t1)
    x = rng.uniform(0.2, 2.0, p.n)
    u = rng.uniform(-1.0, 1.0, p.m)
    lo, hi = p.bounds.lo, p.bounds.hi
    boxed = np.isfinite(lo) & np.isfinite(hi)
    u[boxed] = lo[boxed] + (hi - lo)[boxed] * rng.uniform(size=int(boxed.sum()))
    lam = rng.normal(size=p.n)
    return t, x, u, lam


@pytest.mark.parametrize("name", sorted(CONVERGED_FIXTURES))
def test_dual_partials_match_finite_differences(name):
    p = registry_get(name, **CONVERGED_FIXTURES[name])
    rng = np.random.default_rng(7)
    for _ in range(100):
        t, x, u, lam = _random_point(p, rng)
        h = hamiltonian(p, t, x, u, lam)
        for arr, grad in ((x, h.dH_dx), (u, h.dH_du)):
            for i in range(arr.size):
                step = max(1e-6, 1e-6 * abs(arr[i]))
                ap, am = arr.copy(), arr.copy()
                ap[i] += step
                am[i] -= step
                args_p = (ap, u) if arr is x else (x, ap)
                args_m = (am, u) if arr is x else (x, am)
                fd = (hamiltonian(p, t, *args_p, lam).value - hamiltonian(p, t, *args_m, lam).value) / (2 * step)
                assert abs(grad[i] - fd) <= 1e-6 * max(1.0, abs(fd)), (name, i)


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from(sorted(CONVERGED_FIXTURES)),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.floats(0, 1),
)
def test_hamiltonian_linear_in_adjoint(name, l1, l2, s):
    p = registry_get(name, **CONVERGED_FIXTURES[name])
    n = p.n
    a, b = np.array(l1[:n]), np.array(l2[:n])
    t = p.t0 + s * (p.t1 - p.t0)
    x, u = np.full(n, 0.7), p.bounds.default_control() + 0.1
    H = lambda lam: hamiltonian(p, t, x, u, lam).value  # noqa: E731
    assert abs(H(a + b) - H(a) - H(b) + H(np.zeros(n))) <= 1e-12 * (1 + abs(H(a)) + abs(H(b)))
