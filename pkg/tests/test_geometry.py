import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hamshape.errors import ConfigError, OutsideMeshError
from hamshape.geometry import (
    FiniteElementSpace,
    Mesh,
    ScalarField,
    build_rectangle_mesh,
    recover_gradient,
)

BOX = (-3, 3, -3, 3)


@pytest.fixture(scope="module")
def mesh8():
    return build_rectangle_mesh(BOX, 8)


@pytest.fixture(scope="module")
def spaces(mesh8):
    return {1: FiniteElementSpace(mesh8, 1), 2: FiniteElementSpace(mesh8, 2)}


def test_counts_n2():
    mesh = build_rectangle_mesh(BOX, 2)
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    assert abs(mesh.areas.sum() - 36.0) < 1e-12


def test_boundary_edges_n96():
    mesh = build_rectangle_mesh(BOX, 96)
    assert len(mesh.boundary_edges) == 4 * 96
    assert abs(mesh.h - 6 / 96) < 1e-15


@pytest.mark.parametrize("pattern", ["diagonal", "crossed"])
def test_mesh_invariants(pattern):
    mesh = build_rectangle_mesh(BOX, 6, pattern)
    assert np.all(mesh.signed_areas > 0)
    assert abs(mesh.areas.sum() - 36.0) < 1e-12
    v = mesh.vertices
    assert np.all((v >= -3) & (v <= 3))
    # each boundary edge belongs to exactly one triangle
    be ={tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    seen = {}
    for tri in mesh.triangles.tolist():
        for i in range(3):
            e = tuple(sorted((tri[i], tri[(i + 1) % 3])))
            seen[e] = seen.get(e, 0) + 1
    assert be == {e for e, c in seen.items() if c == 1}
    length = sum(np.hypot(*(v[a] - v[b])) for a, b in mesh.boundary_edges)
    assert abs(length - 24.0) < 1e-12


def test_unknown_pattern_rejected():
    with pytest.raises(ConfigError):
        build_rectangle_mesh(BOX, 4, "hexagonal")


def test_degree_three_rejected(mesh8):
    with pytest.raises(ConfigError):
        FiniteElementSpace(mesh8, 3)


def test_locate_tie_goes_to_lowest_index(mesh8):
    # a vertex is shared by several triangles
    p = mesh8.vertices[40]
    tri, _ = mesh8.locate(p[None, :])
    owners = np.nonzero(np.any(mesh8.triangles == 40, axis=1))[0]
    assert tri[0] == owners.min()


def test_locate_outside(mesh8):
    with pytest.raises(OutsideMeshError):
        mesh8.locate(np.array([[3.5, 0.0]]))
    tri, _ = mesh8.locate(np.array([[3.5, 0.0]]), extrapolate=True)
    assert tri[0] >= 0


def test_linear_reproduction_p1(spaces):
    f = spaces[1].interpolate(lambda p: 2 * p[:, 0] + p[:, 1] - 1)
    assert abs(f(np.array([0.3, 0.7])) - 0.3) < 1e-12


def test_quadratic_reproduction_p2(spaces):
    f = spaces[2].interpolate(lambda p: p[:, 0] ** 2)
    assert abs(f(np.array([0.5, 0.0])) - 0.25) < 1e-12


def test_lagrange_property(spaces):
    V = spaces[2]
    rng = np.random.default_rng(1)
    c = rng.normal(size=V.n)
    f = ScalarField(V, c)
    idx = rng.choice(V.n, 20, replace=False)
    assert np.allclose(f(V.dof_coords[idx]), c[idx], atol=1e-12)


def test_recovered_gradient_linear_exact(spaces):
    for V in spaces.values():
        grad = recover_gradient(V.interpolate(lambda p: 2 * p[:, 0] + p[:, 1]))
        pts = np.random.default_rng(0).uniform(-3, 3, (30, 2))
        assert np.allclose(grad(pts), [2.0, 1.0], atol=1e-12)
        zero = recover_gradient(V.constant(4.2))
        assert np.allclose(zero(pts), 0.0, atol=1e-12)


def test_recovered_gradient_quadratic_at_h96():
    mesh = build_rectangle_mesh(BOX, 96)
    V = FiniteElementSpace(mesh, 2)
    grad = recover_gradient(V.interpolate(lambda p: p[:, 0] ** 2))
    inner = np.nonzero(np.all(np.abs(mesh.vertices) < 2.9, axis=1))[0][::37]
    v = mesh.vertices[inner]
    assert np.max(np.abs(grad.x(v) - 2 * v[:, 0])) < 0.2


def test_matrices_symmetric(spaces):
    for V in spaces.values():
        for A in (V.stiffness, V.mass, V.operator):
            assert abs(A - A.T).max() < 1e-12


def test_mass_integrates_constant(spaces):
    for V in spaces.values():
        one = np.ones(V.n)
        assert abs(one @ (V.mass @ one) - 36.0) < 1e-10
        assert abs(one @ (V.stiffness @ one)) < 1e-10


def test_export_roundtrip(tmp_path, mesh8, spaces):
    mesh8.export_csv(tmp_path / "mesh")
    again = Mesh.from_csv(tmp_path / "mesh", BOX)
    assert np.array_equal(again.triangles, mesh8.triangles)
    assert np.array_equal(again.vertices, mesh8.vertices)
    f = spaces[2].interpolate(lambda p: np.sin(p[:, 0]) * p[:, 1])
    f.export_csv(tmp_path / "f.csv")
    g = ScalarField.from_csv(spaces[2], tmp_path / "f.csv")
    assert np.array_equal(f.coeffs, g.coeffs)


def test_submesh_maps_vertices(mesh8):
    mask = mesh8.vertices[mesh8.triangles].mean(axis=1)[:, 0] < 0
    sub, used = mesh8.submesh(mask)
    assert sub.n_triangles == mask.sum()
    assert np.array_equal(sub.vertices, mesh8.vertices[used])
    assert abs(sub.areas.sum() - 18.0) < 1e-12


points = st.tuples(st.floats(-3, 3), st.floats(-3, 3))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2]), st.lists(st.floats(-2, 2), min_size=6, max_size=6),
       st.lists(points, min_size=1, max_size=20))
def test_polynomial_reproduction(spaces, degree, c, pts):
    V = spaces[degree]
    pts = np.array(pts)

    def poly(p):
        x, y = p[:, 0], p[:, 1]
        out = c[0] + c[1] * x + c[2] * y
        if degree == 2:
            out = out + c[3] * x * x + c[4] * x * y + c[5] * y * y
        return out

    assert np.allclose(V.interpolate(poly)(pts), poly(pts), atol=1e-12, rtol=0)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2]), st.lists(points, min_size=1, max_size=30))
def test_partition_of_unity(spaces, degree, pts):
    s = spaces[degree].basis_sum(np.array(pts))
    assert np.allclose(s, 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_recovery_linear(spaces, seed, a, b):
    V = spaces[2]
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=V.n), rng.normal(size=V.n)
    Rx, Ry = V.recovery
    for R in (Rx, Ry):
        assert np.allclose(R @ (a * u + b * v), a * (R @ u) + b * (R @ v), atol=1e-10)
