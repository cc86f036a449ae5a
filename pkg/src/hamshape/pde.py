"""Boundary value problems on the fixed box D.

The state solves  -lap y + y = f + g_+^2 u  with homogeneous Dirichlet data
on the boundary of D. The linearized and adjoint problems share the same
operator, so one cached factorization serves every solve on a mesh.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import TraceSampler, adjoint_load
from .errors import EmptyDomainError
from .expressions import Expression
from .geometry import LINE_QUAD_POINTS, LINE_QUAD_WEIGHTS, FiniteElementSpace, ScalarField


def quad_values(obj, space: FiniteElementSpace):
    """Sample a source term at the quadrature points, shape (nt, nq).

    Accepts None (zero), numbers, expression strings, :class:`Expression`,
    FE fields, level sets, or callables of an (N, 2) point array.
    """
    q = space.quadrature_points
    if obj is None:
        return np.zeros(q.shape[:2])
    if isinstance(obj, (int, float)):
        return np.full(q.shape[:2], float(obj))
    if isinstance(obj, str):
        obj = Expression(obj)
    if isinstance(obj, ScalarField):
        if obj.space is space:
            return space.quad_values(obj.coeffs)
        return obj(q.reshape(-1, 2)).reshape(q.shape[:2])
    if hasattr(obj, "quad_values") and not isinstance(obj, Expression):
        return obj.quad_values(space)
    fn = obj.value if isinstance(obj, Expression) else obj
    return np.asarray(fn(q.reshape(-1, 2)), dtype=float).reshape(q.shape[:2])


def _positive_part(g, space):
    return np.maximum(quad_values(g, space), 0.0)


def solve_state(g, u, f, space: FiniteElementSpace) -> ScalarField:
    gp = _positive_part(g, space)
    rhs = space.load(quad_values(f, space) + gp * gp * quad_values(u, space))
    return ScalarField(space, space.solve_dirichlet(rhs), constrained=True, name="y")


def solve_linearized(g, u, r, v, f, space: FiniteElementSpace) -> ScalarField:
    """Derivative of the state along (r, v):  source g_+^2 v + 2 g_+ u r.
    ``f`` does not enter the linearized equation."""
    gp = _positive_part(g, space)
    src = gp * gp * quad_values(v, space) + 2.0 * gp * quad_values(u, space) * quad_values(r, space)
    return ScalarField(space, space.solve_dirichlet(space.load(src)), constrained=True, name="q")


def solve_adjoint(g, y, trace, E, cf, delta, epsilon, m=1e-3, sampler=None) -> ScalarField:
    """Adjoint state p with load given by the terms of the cost derivative
    that are linear in the state increment."""
    space = y.space
    sampler = sampler or TraceSampler(space, trace)
    b = adjoint_load(y, g, sampler, E, cf, delta, epsilon, m)
    return ScalarField(space, space.solve_dirichlet(b), constrained=True, name="p")


def solve_control_smoothing(g, u, p, space: FiniteElementSpace) -> ScalarField:
    """d with  -lap d + d = 2 g_+ u p  and natural boundary conditions."""
    gp = _positive_part(g, space)
    rhs = space.load(2.0 * gp * quad_values(u, space) * quad_values(p, space))
    return ScalarField(space, space.solve_natural(rhs), name="d")


@dataclass
class NeumannSolution:
    field: ScalarField
    space: FiniteElementSpace
    vertex_map: np.ndarray

    def __call__(self, pts):
        B = self.space.point_matrices(np.atleast_2d(pts), extrapolate=True)
        return B @ self.field.coeffs

    def gradient(self, pts):
        _, (Gx, Gy) = self.space.point_matrices(np.atleast_2d(pts), derivatives=1, extrapolate=True)
        return np.column_stack([Gx @ self.field.coeffs, Gy @ self.field.coeffs])


def solve_neumann_validation(g, mask, f, delta, mesh, degree=2) -> NeumannSolution:
    """Direct solve of  -lap y + y = f,  dy/dn = delta  on the union of the
    triangles selected by ``mask`` (a staircase approximation of {g < 0}).

    The flux delta * N, with N the unit normal of the level curves of g, is
    applied through the staircase edges as (delta N) . n_h so that the total
    flux converges under refinement. Points outside the submesh are
    evaluated by polynomial extension from the nearest triangle.
    """
    if not np.any(mask):
        raise EmptyDomainError("validation mask selects no triangles")
    sub, used = mesh.submesh(mask)
    space = FiniteElementSpace(sub, degree)
    rhs = space.load(quad_values(f, space))
    be = sub.boundary_edges
    if len(be):
        a = sub.vertices[be[:, 0]]
        b = sub.vertices[be[:, 1]]
        s = LINE_QUAD_POINTS
        pts = (a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
        t = b - a
        # outward normal times edge length
        nh = np.repeat(_outward(sub, be, t), len(s), axis=0)
        wts = np.repeat(LINE_QUAD_WEIGHTS[None, :], len(be), axis=0).ravel()
        grad = g.gradient(pts)
        N = grad / np.maximum(np.hypot(grad[:, 0], grad[:, 1]), 1e-300)[:, None]
        d = delta if isinstance(delta, Expression) else Expression(delta)
        B = space.point_matrices(pts)
        rhs += B.T @ (wts * d.value(pts) * np.sum(N * nh, axis=1))
    y = ScalarField(space, space.solve_natural(rhs), name="y_neumann")
    return NeumannSolution(y, space, used)


def _outward(mesh, edges, t):
    """Length-weighted outward normals of boundary edges."""
    n = np.column_stack([t[:, 1], -t[:, 0]])
    key = {tuple(sorted(e)): k for k, e in enumerate(edges.tolist())}
    cent = np.zeros((len(edges), 2))
    for tri in mesh.triangles.tolist():
        for i in range(3):
            k = key.get(tuple(sorted((tri[i], tri[(i + 1) % 3]))))
            if k is not None:
                cent[k] = mesh.vertices[tri].mean(axis=0)
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    flip = np.sum(n * (mid - cent), axis=1) < 0
    n[flip] *= -1
    return n
