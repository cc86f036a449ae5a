import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamshape.cost import CostFunctions, TraceSampler, adjoint_load
from hamshape.errors import EmptyDomainError
from hamshape.geometry import FiniteElementSpace, ScalarField, build_rectangle_mesh
from hamshape.levelset import AnalyticLevelSet, ObservationRegion, circle_levelset, classify_domain, trace_boundary
from hamshape.pde import (
    solve_adjoint,
    solve_control_smoothing,
    solve_linearized,
    solve_neumann_validation,
    solve_state,
)

BOX = (-3, 3, -3, 3)
MANUFACTURED = "sin(pi*x/3)*sin(pi*y/3)"


@pytest.fixture(scope="module")
def space24():
    return FiniteElementSpace(build_rectangle_mesh(BOX, 24), 2)


def _l2(space, coeffs, exact):
    q = space.quadrature_points
    diff = space.quad_values(coeffs) - exact(q.reshape(-1, 2)).reshape(q.shape[:2])
    return math.sqrt(space.integrate(diff ** 2))


def manufactured_rates(degree, sizes):
    from hamshape.expressions import Expression

    ystar = Expression(MANUFACTURED)
    f = f"(1 + 2*pi^2/9)*{MANUFACTURED}"
    errs = []
    for n in sizes:
        V = FiniteElementSpace(build_rectangle_mesh(BOX, n), degree)
        y = solve_state(AnalyticLevelSet("-1"), None, f, V)
        errs.append(_l2(V, y.coeffs, ystar.value))
    rates = [math.log(errs[i] / errs[i + 1], 2) for i in range(len(errs) - 1)]
    return errs, rates


def test_manufactured_rate_p1():
    _, rates = manufactured_rates(1, (12, 24, 48))
    assert min(rates) >= 1.9


def test_zero_data_gives_zero_state(space24):
    y = solve_state(circle_levelset(), space24.zero(), "0", space24)
    assert not np.any(y.coeffs)


def test_state_nonnegative_for_positive_source(space24):
    y = solve_state(circle_levelset(), space24.constant(1.0), "0", space24)
    assert y.coeffs.min() >= -1e-10
    assert y.coeffs.max() > 0


def test_state_dirichlet_boundary(space24):
    y = solve_state(circle_levelset(), space24.constant(1.0), "1 + x", space24)
    assert np.all(y.coeffs[space24.boundary_dofs] == 0.0)


def test_linearized_zero_cases(space24):
    g, u = circle_levelset(), space24.constant(1.0)
    q = solve_linearized(g, u, AnalyticLevelSet("0"), space24.zero(), None, space24)
    assert not np.any(q.coeffs)
    q = solve_linearized(AnalyticLevelSet("-1"), u, AnalyticLevelSet("x"), space24.constant(2.0), None, space24)
    assert not np.any(q.coeffs)


def test_linearized_matches_fd(space24):
    g = AnalyticLevelSet("x^2 + y^2 - 1")
    r = AnalyticLevelSet("0.3*x - 0.2*y^2 + 0.1")
    u = space24.interpolate(lambda p: 1 + 0.5 * np.sin(p[:, 0]))
    v = space24.interpolate(lambda p: np.cos(p[:, 1]))
    lam = 1e-5
    f = "-4 + x^2 + y^2 - 1"
    y0 = solve_state(g, u, f, space24)
    gl = AnalyticLevelSet(f"x^2 + y^2 - 1 + {lam!r}*(0.3*x - 0.2*y^2 + 0.1)")
    y1 = solve_state(gl, ScalarField(space24, u.coeffs + lam * v.coeffs), f, space24)
    q = solve_linearized(g, u, r, v, f, space24)
    fd = (y1.coeffs - y0.coeffs) / lam
    M = space24.mass
    err = math.sqrt((fd - q.coeffs) @ (M @ (fd - q.coeffs)))
    assert err <= 1e-4 * math.sqrt(q.coeffs @ (M @ q.coeffs))


def test_adjoint_zero_load(space24):
    g = circle_levelset()
    trace = trace_boundary(g, space24.mesh)
    y = space24.interpolate(lambda p: p[:, 0] ** 2 + p[:, 1] ** 2)
    # no tracking and flux exactly delta (2|x| is the normal derivative of
    # |x|^2 on every circle, so trace samples slightly off G do not matter)
    p = solve_adjoint(g, y, trace, None, CostFunctions(), "2*sqrt(x^2 + y^2)", 0.5)
    assert np.max(np.abs(p.coeffs)) < 1e-10


def test_smoothing_zero_cases(space24):
    g, u = circle_levelset(), space24.constant(1.0)
    assert not np.any(solve_control_smoothing(g, u, space24.zero(), space24).coeffs)
    p = space24.interpolate(lambda q: np.cos(q[:, 0]))
    assert not np.any(solve_control_smoothing(AnalyticLevelSet("-1"), u, p, space24).coeffs)


def test_smoothing_energy_identity(space24):
    g = AnalyticLevelSet("x^2 + y^2 - 1")
    u = space24.interpolate(lambda q: 1 + q[:, 0])
    p = space24.interpolate(lambda q: np.cos(q[:, 0]) * np.sin(q[:, 1]))
    d = solve_control_smoothing(g, u, p, space24)
    energy = d.coeffs @ (space24.operator @ d.coeffs)
    gp = np.maximum(g.quad_values(space24), 0.0)
    rhs = space24.integrate(2 * gp * u.quad_values() * p.quad_values() * d.quad_values())
    assert abs(energy - rhs) <= 1e-10 * abs(energy)


def test_neumann_constant_solution():
    mesh = build_rectangle_mesh(BOX, 24)
    g = circle_levelset(r=2.0)
    mask = classify_domain(g, mesh, (0.0, 0.0))
    sol = solve_neumann_validation(g, mask, "3.5", "0", mesh)
    assert np.max(np.abs(sol.field.coeffs - 3.5)) < 1e-10


def test_neumann_empty_mask():
    mesh = build_rectangle_mesh(BOX, 8)
    with pytest.raises(EmptyDomainError):
        solve_neumann_validation(circle_levelset(), np.zeros(mesh.n_triangles, bool), "1", "0", mesh)


def neumann_disk_errors(sizes):
    g = circle_levelset()
    errs = []
    for n in sizes:
        mesh = build_rectangle_mesh(BOX, n)
        mask = classify_domain(g, mesh, (0.0, 0.0))
        sol = solve_neumann_validation(g, mask, "-4 + x^2 + y^2", "2", mesh)
        errs.append(_l2(sol.space, sol.field.coeffs, lambda p: p[:, 0] ** 2 + p[:, 1] ** 2))
    return errs


def test_neumann_disk_converges():
    errs = neumann_disk_errors((24, 48, 96))
    assert errs[0] > errs[1] > errs[2]
    assert math.log(errs[1] / errs[2], 2) >= 0.9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_state_linear(space24, seed):
    rng = np.random.default_rng(seed)
    g = circle_levelset(r=float(rng.uniform(0.5, 2)))
    f1, f2 = (f"{float(a)!r}*sin(x) + {float(b)!r}*y" for a, b in rng.normal(size=(2, 2)))
    u1, u2 = (ScalarField(space24, rng.normal(size=space24.n)) for _ in range(2))
    y12 = solve_state(g, u1 + u2, f"({f1}) + ({f2})", space24)
    y1 = solve_state(g, u1, f1, space24)
    y2 = solve_state(g, u2, f2, space24)
    assert np.allclose(y12.coeffs, y1.coeffs + y2.coeffs, atol=1e-10 * max(1, np.abs(y12.coeffs).max()))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_adjoint_identity(space24, seed):
    # the adjoint load applied to phi equals the q-terms of the derivative with q = phi
    rng = np.random.default_rng(seed)
    g = circle_levelset(r=float(rng.uniform(0.8, 1.5)))
    trace = trace_boundary(g, space24.mesh)
    y = ScalarField(space24, rng.normal(size=space24.n))
    phi = ScalarField(space24, rng.normal(size=space24.n))
    E = ObservationRegion((0.0, 0.0), 0.4)
    cf = CostFunctions.tracking("x^2 + y^2 - 1", distributed=True, boundary=True)
    eps, delta = float(rng.uniform(0.2, 2)), 2.0
    smp = TraceSampler(space24, trace)
    b = adjoint_load(y, g, smp, E, cf, delta, eps)
    # direct evaluation of the q-multiplying terms
    BE = space24.point_matrices(E.quad_points)
    t = E.integrate(cf.dJ(E.quad_points, BE @ y.coeffs) * (BE @ phi.coeffs))
    gg = g.gradient(smp.z)
    n = gg / np.hypot(gg[:, 0], gg[:, 1])[:, None]
    s = np.sum(smp.grad(y.coeffs) * n, axis=1) - delta
    t += smp.ds @ (cf.dj(smp.z, smp.values(y.coeffs)) * smp.values(phi.coeffs))
    t += (2 / eps) * smp.ds @ (s * np.sum(smp.grad(phi.coeffs) * n, axis=1))
    assert abs(b @ phi.coeffs - t) <= 1e-10 * max(1.0, abs(t))
