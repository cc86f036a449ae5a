import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from hamshape.config import PRESETS
from hamshape.errors import EmptyDomainError, NoZeroSetError
from hamshape.geometry import FiniteElementSpace, ScalarField, build_rectangle_mesh
from hamshape.levelset import (
    AnalyticLevelSet,
    FELevelSet,
    ObservationRegion,
    check_admissibility,
    circle_levelset,
    classify_domain,
    find_boundary_seeds,
    project_constraint,
)

BOX = (-3, 3, -3, 3)
EX1 = PRESETS["example1"]["g0"]
EX2 = PRESETS["example2"]["g0"]


@pytest.fixture(scope="module")
def mesh48():
    return build_rectangle_mesh(BOX, 48)


@pytest.fixture(scope="module")
def space24():
    return FiniteElementSpace(build_rectangle_mesh(BOX, 24), 2)


def test_single_seed_on_circle(mesh48):
    seeds = find_boundary_seeds(circle_levelset(), mesh48)
    assert len(seeds) == 1
    assert abs(np.hypot(*seeds[0]) - 1.0) < 1e-8


def test_example1_has_two_seeds(mesh48):
    assert len(find_boundary_seeds(AnalyticLevelSet(EX1), mesh48)) == 2


def test_no_zero_set(mesh48):
    with pytest.raises(NoZeroSetError):
        find_boundary_seeds(AnalyticLevelSet("1"), mesh48)


@pytest.mark.parametrize("text, count", [
    ("x^2 + y^2 - 1", 1),
    ("min((x - 1.5)^2 + y^2 - 0.5, (x + 1.5)^2 + y^2 - 0.5)", 2),
    ("max(x^2 + y^2 - 4, 1 - x^2 - y^2)", 2),
    (EX1, 2),
    (EX2, 2),
    ("min((x - 1.5)^2 + (y - 1.5)^2 - 0.3, min((x + 1.5)^2 + y^2 - 0.3, x^2 + (y + 2)^2 - 0.3))", 3),
])
def test_seed_count_library(mesh48, text, count):
    _, comps = find_boundary_seeds(AnalyticLevelSet(text), mesh48, return_components=True)
    assert len(comps) == count


def test_fe_levelset_seeds(space24):
    g = FELevelSet(ScalarField(space24, AnalyticLevelSet(EX1).nodal(space24)))
    assert len(find_boundary_seeds(g, space24.mesh)) == 2


def test_analytic_gradient_self_consistent():
    g = AnalyticLevelSet(EX1)
    pts = np.random.default_rng(5).uniform(-2.9, 2.9, (40, 2))
    h = 1e-6
    fd = np.column_stack([
        (g(pts + [h, 0]) - g(pts - [h, 0])) / (2 * h),
        (g(pts + [0, h]) - g(pts - [0, h])) / (2 * h),
    ])
    grad = g.gradient(pts)
    assert np.max(np.abs(grad - fd) / np.maximum(1.0, np.abs(grad))) < 1e-6


def test_unit_disk_area():
    # triangles cut by the circle are dropped; they lie in a band of width
    # at most one triangle diameter, so the deficit is below 2 pi sqrt(2) h
    errs = []
    for n in (96, 192):
        mesh = build_rectangle_mesh(BOX, n)
        mask = classify_domain(circle_levelset(), mesh, (0.0, 0.0))
        err = math.pi - mesh.areas[mask].sum()
        assert 0 < err < 2 * math.pi * math.sqrt(2) * mesh.h
        errs.append(err)
    assert errs[1] < 0.6 * errs[0]


def test_negative_everywhere_selects_all(mesh48):
    mask = classify_domain(AnalyticLevelSet("-1"), mesh48, (0.0, 0.0))
    assert mask.all()


def test_example2_anchor_on_E(mesh48):
    # brute force: g0 at the origin is max(1.28 - 3.24, -1.28 + 0.36) = -0.92,
    # so the origin lies inside the ring and E meets {g0 < 0}
    g0 = AnalyticLevelSet(EX2)
    assert abs(g0.value_at(0.0, 0.0) + 0.92) < 1e-12
    E = ObservationRegion((0.0, 0.0), 0.5)
    assert np.any(g0(E.quad_points) < 0)
    mask = classify_domain(g0, mesh48, E)
    assert mask.any()
    # the selected component is the ring, which does not contain its hole
    cent = mesh48.vertices[mesh48.triangles[mask]].mean(axis=1)
    assert np.all(np.hypot(cent[:, 0] + 0.8, cent[:, 1] + 0.8) > 0.6 - mesh48.h)


def test_anchor_outside_domain(mesh48):
    with pytest.raises(EmptyDomainError):
        classify_domain(circle_levelset(), mesh48, (2.5, 2.5))


def test_anchor_selects_component(mesh48):
    g = AnalyticLevelSet("min((x - 1.5)^2 + y^2 - 0.5, (x + 1.5)^2 + y^2 - 0.5)")
    left = classify_domain(g, mesh48, (-1.5, 0.0))
    right = classify_domain(g, mesh48, (1.5, 0.0))
    assert left.any() and right.any() and not np.any(left & right)


def test_projection_fixed_point(space24):
    E = ObservationRegion((0.0, 0.0), 0.5)
    gE = "x^2 + y^2 - 0.5^2"
    g = project_constraint(AnalyticLevelSet(gE), E, gE, space24)
    again = project_constraint(g, E, gE, space24)
    assert np.array_equal(g.coeffs, again.coeffs)


def test_projection_of_positive_constant(space24):
    E = ObservationRegion((0.0, 0.0), 0.5)
    g = project_constraint(AnalyticLevelSet("1"), E, "x^2 + y^2 - 0.25", space24)
    inE = E.contains(space24.dof_coords)
    assert inE.any()
    assert np.all(g.coeffs[inE] <= 0)
    assert np.all(g.coeffs[~inE] == 1.0)


def test_admissibility_circle(mesh48):
    rep = check_admissibility(circle_levelset(), mesh48, m=0.5)
    assert abs(rep.min_grad_on_zero_set - 2.0) < 1e-6
    assert abs(rep.min_g_on_boundary - 8.0) < 1e-12
    assert rep.passed
    assert rep.n_zero_set_samples > 0 and rep.n_boundary_samples > 0


def test_admissibility_E(mesh48):
    rep = check_admissibility(circle_levelset(), mesh48, ObservationRegion((0, 0), 0.5))
    assert abs(rep.max_g_on_E + 0.75) < 1e-9
    assert rep.E_ok


def test_admissibility_fails_on_boundary(mesh48):
    rep = check_admissibility(AnalyticLevelSet("x^2 + y^2 - 16"), mesh48)
    assert not rep.boundary_ok and not rep.passed
    assert rep.to_dict()["passed"] is False


def test_admissibility_fe_uses_nodes(space24):
    E = ObservationRegion((0.0, 0.0), 0.5)
    g = project_constraint(AnalyticLevelSet(EX2), E, "x^2 + y^2 - 0.25", space24)
    rep = check_admissibility(g, space24.mesh, E)
    inE = E.contains(space24.dof_coords)
    assert rep.max_g_on_E == g.coeffs[inE].max()
    assert rep.n_E_samples == inE.sum()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 2.0))
def test_projection_idempotent(space24, seed, scale):
    rng = np.random.default_rng(seed)
    g = FELevelSet(ScalarField(space24, scale * rng.normal(size=space24.n)))
    E = ObservationRegion((rng.uniform(-1, 1), rng.uniform(-1, 1)), rng.uniform(0.2, 1.0))
    gE = f"(x - ({E.center[0]!r}))^2 + (y - ({E.center[1]!r}))^2 - {E.radius ** 2!r}"
    once = project_constraint(g, E, gE, space24)
    twice = project_constraint(once, E, gE, space24)
    assert np.array_equal(once.coeffs, twice.coeffs)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.8, 2.0), st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_mask_monotone_under_decrease(mesh48, r, shift, seed):
    g = circle_levelset(r=r)
    bump = np.random.default_rng(seed).uniform(0, shift, mesh48.n_vertices)

    class Lowered:
        def value(self, pts):
            return g.value(pts) - bump

    base = classify_domain(g, mesh48, (0.0, 0.0))
    lower = classify_domain(Lowered(), mesh48, (0.0, 0.0))
    assume(base.any())
    assert np.all(lower[base])
