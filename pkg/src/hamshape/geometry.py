"""Triangular meshes of a box, Lagrange P1/P2 spaces, point evaluation and
gradient recovery.

Structured meshes come in two patterns:

* ``"diagonal"``: every cell split along its (i,j)-(i+1,j+1) diagonal,
  ``2 n^2`` triangles;
* ``"crossed"``: every cell split into four by its centre vertex,
  ``4 n^2`` triangles.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .errors import ConfigError, OutsideMeshError, SolverError

# 7-point degree-5 rule on the reference triangle (0,0),(1,0),(0,1); weights sum to 1.
_S15 = math.sqrt(15.0)
_A1, _B1 = (9 - 2 * _S15) / 21, (6 + _S15) / 21
_A2, _B2 = (9 + 2 * _S15) / 21, (6 - _S15) / 21
_W1, _W2 = (155 + _S15) / 1200, (155 - _S15) / 1200
TRI_QUAD_POINTS = np.array(
    [
        [1 / 3, 1 / 3],
        [_B1, _B1], [_A1, _B1], [_B1, _A1],
        [_B2, _B2], [_A2, _B2], [_B2, _A2],
    ]
)
TRI_QUAD_WEIGHTS = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])

_LINE_GAUSS_X, _LINE_GAUSS_W = np.polynomial.legendre.leggauss(3)
LINE_QUAD_POINTS = 0.5 * (_LINE_GAUSS_X + 1.0)
LINE_QUAD_WEIGHTS = 0.5 * _LINE_GAUSS_W

# local node positions in reference coordinates
_P1_NODES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_P2_NODES = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
)
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_P2_EDGES = ((0, 1), (1, 2), (2, 0))


def reference_basis(degree, xi):
    """Values of the local basis at reference points ``xi`` (m, 2) -> (m, nloc)."""
    xi = np.atleast_2d(xi)
    lam = np.stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=1)
    if degree == 1:
        return lam
    out = np.empty((len(xi), 6))
    for i in range(3):
        out[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
    for k, (a, b) in enumerate(_P2_EDGES):
        out[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
    return out


def reference_basis_grad(degree, xi):
    """Reference gradients (m, nloc, 2)."""
    xi = np.atleast_2d(xi)
    m = len(xi)
    if degree == 1:
        return np.broadcast_to(_DLAMBDA, (m, 3, 2)).copy()
    lam = np.stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=1)
    out = np.empty((m, 6, 2))
    for i in range(3):
        out[:, i, :] = (4.0 * lam[:, i] - 1.0)[:, None] * _DLAMBDA[i]
    for k, (a, b) in enumerate(_P2_EDGES):
        out[:, 3 + k, :] = 4.0 * (lam[:, a, None] * _DLAMBDA[b] + lam[:, b, None] * _DLAMBDA[a])
    return out


def reference_basis_hessian(degree):
    """Reference Hessians (nloc, 2, 2); constant for P1 (zero) and P2."""
    if degree == 1:
        return np.zeros((3, 2, 2))
    out = np.empty((6, 2, 2))
    for i in range(3):
        out[i] = 4.0 * np.outer(_DLAMBDA[i], _DLAMBDA[i])
    for k, (a, b) in enumerate(_P2_EDGES):
        out[3 + k] = 4.0 * (np.outer(_DLAMBDA[a], _DLAMBDA[b]) + np.outer(_DLAMBDA[b], _DLAMBDA[a]))
    return out


@dataclass(frozen=True)
class Box:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError(f"degenerate bounds {self}")

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    def contains(self, pts, tol=1e-12):
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= self.xmin - tol) & (pts[:, 0] <= self.xmax + tol)
            & (pts[:, 1] >= self.ymin - tol) & (pts[:, 1] <= self.ymax + tol)
        )

    def as_tuple(self):
        return (self.xmin, self.xmax, self.ymin, self.ymax)


def as_box(bounds):
    if isinstance(bounds, Box):
        return bounds
    return Box(*map(float, bounds))


class Mesh:
    """Immutable triangle mesh.

    Triangles are stored counter-clockwise. ``boundary_edges`` are oriented so
    the mesh lies on their left, hence the outward normal of edge (p, q) is
    ``(dy, -dx) / |q - p|``.
    """

    def __init__(self, vertices, triangles, bounds, h=None, boundary_edges=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.bounds = as_box(bounds)
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False
        if boundary_edges is None:
            boundary_edges = self._find_boundary_edges()
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        self.h = float(h) if h is not None else float(np.sqrt(2.0 * self.areas.mean()))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def signed_areas(self):
        v = self.vertices[self.triangles]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def areas(self):
        return np.abs(self.signed_areas)

    @cached_property
    def edges(self):
        """Unique undirected edges (ne, 2) with sorted endpoints, and the
        (nt, 3) map from local edge k = (k, k+1 mod 3) to the global edge id."""
        t = self.triangles
        local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        key = np.sort(local, axis=1)
        uniq, inverse = np.unique(key, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1, 3)

    @cached_property
    def edge_triangles(self):
        """For every unique edge, the (up to two) adjacent triangles; -1 pads."""
        _, tri_edges = self.edges
        ne = len(self.edges[0])
        out = -np.ones((ne, 2), dtype=np.int64)
        flat = tri_edges.ravel()
        tri_ids = np.repeat(np.arange(self.n_triangles), 3)
        order = np.argsort(flat, kind="stable")
        flat_sorted = flat[order]
        first = np.ones(len(flat_sorted), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        out[flat_sorted[first], 0] = tri_ids[order][first]
        out[flat_sorted[~first], 1] = tri_ids[order][~first]
        return out

    def _find_boundary_edges(self):
        t = self.triangles
        directed = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        uniq, tri_edges = self.edges
        counts = np.bincount(tri_edges.ravel(), minlength=len(uniq))
        on_boundary = counts[tri_edges.ravel()] == 1
        return directed[on_boundary]

    @cached_property
    def neighbours(self):
        """(nt, 3) triangle adjacency across local edge k; -1 on the boundary."""
        _, tri_edges = self.edges
        et = self.edge_triangles
        nb = np.where(et[tri_edges, 0] == np.arange(self.n_triangles)[:, None],
                      et[tri_edges, 1], et[tri_edges, 0])
        return nb

    @cached_property
    def _affine(self):
        v = self.vertices[self.triangles]
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # columns
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        return v[:, 0].copy(), jac, inv, det

    @cached_property
    def _bins(self):
        b = self.bounds
        nb = max(1, int(math.sqrt(self.n_triangles / 2.0)))
        bw, bh = b.width / nb, b.height / nb
        v = self.vertices[self.triangles]
        lo = v.min(axis=1)
        hi = v.max(axis=1)
        eps = 1e-12 * max(b.width, b.height)
        i0 = np.clip(np.floor((lo[:, 0] - eps - b.xmin) / bw).astype(int), 0, nb - 1)
        i1 = np.clip(np.floor((hi[:, 0] + eps - b.xmin) / bw).astype(int), 0, nb - 1)
        j0 = np.clip(np.floor((lo[:, 1] - eps - b.ymin) / bh).astype(int), 0, nb - 1)
        j1 = np.clip(np.floor((hi[:, 1] + eps - b.ymin) / bh).astype(int), 0, nb - 1)
        lists = [[] for _ in range(nb * nb)]
        for t in range(self.n_triangles):
            for j in range(j0[t], j1[t] + 1):
                row = j * nb
                for i in range(i0[t], i1[t] + 1):
                    lists[row + i].append(t)
        ptr = np.zeros(nb * nb + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(x) for x in lists])
        cand = np.fromiter((t for x in lists for t in x), dtype=np.int64, count=ptr[-1])
        return nb, bw, bh, ptr, cand, lists

    @cached_property
    def _scalar_affine(self):
        v0, _, inv, _ = self._affine
        return [tuple(row) for row in np.column_stack(
            [v0[:, 0], v0[:, 1], inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 0], inv[:, 1, 1]]
        ).tolist()]

    @cached_property
    def _centroid_tree(self):
        return cKDTree(self.vertices[self.triangles].mean(axis=1))

    def locate(self, pts, tol=1e-10, extrapolate=False):
        """Triangle index and reference coordinates for each point.

        Ties on shared edges go to the lowest triangle index. Uncovered
        points raise :class:`OutsideMeshError`, or with ``extrapolate`` are
        assigned to the triangle with the nearest centroid (reference
        coordinates then fall outside the unit triangle).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        nb, bw, bh, ptr, cand, _ = self._bins
        b = self.bounds
        bi = np.clip(np.floor((pts[:, 0] - b.xmin) / bw).astype(int), 0, nb - 1)
        bj = np.clip(np.floor((pts[:, 1] - b.ymin) / bh).astype(int), 0, nb - 1)
        cell = bj * nb + bi
        start, stop = ptr[cell], ptr[cell + 1]
        tri = -np.ones(len(pts), dtype=np.int64)
        ref = np.zeros((len(pts), 2))
        v0, _, inv, _ = self._affine
        kmax = int((stop - start).max()) if len(pts) else 0
        for k in range(kmax):
            idx = np.nonzero((tri < 0) & (start + k < stop))[0]
            if not len(idx):
                break
            t = cand[start[idx] + k]
            d = pts[idx] - v0[t]
            xi = np.einsum("nij,nj->ni", inv[t], d)
            ok = (xi[:, 0] >= -tol) & (xi[:, 1] >= -tol) & (xi[:, 0] + xi[:, 1] <= 1.0 + tol)
            tri[idx[ok]] = t[ok]
            ref[idx[ok]] = xi[ok]
        bad = tri < 0
        if bad.any() and extrapolate:
            idx = np.nonzero(bad)[0]
            _, t = self._centroid_tree.query(pts[idx])
            tri[idx] = t
            ref[idx] = np.einsum("nij,nj->ni", inv[t], pts[idx] - v0[t])
        elif bad.any():
            p = pts[np.nonzero(bad)[0][0]]
            raise OutsideMeshError(f"point ({p[0]:.6g}, {p[1]:.6g}) is outside the mesh")
        return tri, ref

    def locate_one(self, x, y, hint=-1, tol=1e-10):
        """Scalar point location; returns (triangle, xi, eta)."""
        aff = self._scalar_affine
        if hint >= 0:
            x0, y0, a, b_, c, d = aff[hint]
            dx, dy = x - x0, y - y0
            xi, eta = a * dx + b_ * dy, c * dx + d * dy
            if xi >= -tol and eta >= -tol and xi + eta <= 1.0 + tol:
                return hint, xi, eta
        nb, bw, bh, _, _, lists = self._bins
        bd = self.bounds
        i = min(max(int((x - bd.xmin) // bw), 0), nb - 1)
        j = min(max(int((y - bd.ymin) // bh), 0), nb - 1)
        for t in lists[j * nb + i]:
            x0, y0, a, b_, c, d = aff[t]
            dx, dy = x - x0, y - y0
            xi, eta = a * dx + b_ * dy, c * dx + d * dy
            if xi >= -tol and eta >= -tol and xi + eta <= 1.0 + tol:
                return t, xi, eta
        raise OutsideMeshError(f"point ({x:.6g}, {y:.6g}) is outside the mesh")

    def submesh(self, mask):
        """Mesh of the triangles selected by ``mask``, with compacted vertex
        numbering; returns (mesh, vertex_map) where vertex_map[i] is the parent
        index of sub-vertex i."""
        mask = np.asarray(mask, dtype=bool)
        tris = self.triangles[mask]
        used = np.unique(tris)
        renum = -np.ones(self.n_vertices, dtype=np.int64)
        renum[used] = np.arange(len(used))
        sub = Mesh(self.vertices[used], renum[tris], self.bounds, h=self.h)
        return sub, used

    def export_csv(self, directory):
        """Write vertices.csv (id,x,y) and triangles.csv (id,v0,v1,v2)."""
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "vertices.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y"])
            for i, (x, y) in enumerate(self.vertices):
                w.writerow([i, repr(float(x)), repr(float(y))])
        with open(directory / "triangles.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "v0", "v1", "v2"])
            for i, t in enumerate(self.triangles):
                w.writerow([i, *map(int, t)])

    @classmethod
    def from_csv(cls, directory, bounds, h=None):
        from pathlib import Path

        directory = Path(directory)
        v = np.loadtxt(directory / "vertices.csv", delimiter=",", skiprows=1)[:, 1:]
        t = np.loadtxt(directory / "triangles.csv", delimiter=",", skiprows=1, dtype=np.int64)[:, 1:]
        return cls(v, t, bounds, h=h)


def build_rectangle_mesh(bounds, n_per_side, pattern="diagonal"):
    """Structured triangulation of the box with ``n_per_side`` cells per side."""
    box = as_box(bounds)
    if n_per_side < 2:
        raise ConfigError("n_per_side must be at least 2")
    n = int(n_per_side)
    xs = np.linspace(box.xmin, box.xmax, n + 1)
    ys = np.linspace(box.ymin, box.ymax, n + 1)
    X, Y = np.meshgrid(xs, ys)  # row j is y_j
    verts = [np.column_stack([X.ravel(), Y.ravel()])]
    ii, jj = np.meshgrid(np.arange(n), np.arange(n))
    ii, jj = ii.ravel(), jj.ravel()
    a = jj * (n + 1) + ii
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    if pattern == "diagonal":
        tris = np.empty((2 * n * n, 3), dtype=np.int64)
        tris[0::2] = np.column_stack([a, b, c])
        tris[1::2] = np.column_stack([a, c, d])
    elif pattern == "crossed":
        m = (n + 1) ** 2 + np.arange(n * n)
        cx = 0.5 * (xs[ii] + xs[ii + 1])
        cy = 0.5 * (ys[jj] + ys[jj + 1])
        verts.append(np.column_stack([cx, cy]))
        tris = np.empty((4 * n * n, 3), dtype=np.int64)
        tris[0::4] = np.column_stack([a, b, m])
        tris[1::4] = np.column_stack([b, c, m])
        tris[2::4] = np.column_stack([c, d, m])
        tris[3::4] = np.column_stack([d, a, m])
    else:
        raise ConfigError(f"unknown mesh pattern {pattern!r}")
    k = np.arange(n)
    bottom = np.column_stack([k, k + 1])
    right = np.column_stack([k * (n + 1) + n, (k + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + k[::-1] + 1, n * (n + 1) + k[::-1]])
    left = np.column_stack([(k[::-1] + 1) * (n + 1), k[::-1] * (n + 1)])
    bedges = np.vstack([bottom, right, top, left])
    h = max(box.width, box.height) / n
    return Mesh(np.vstack(verts), tris, box, h=h, boundary_edges=bedges)


class FiniteElementSpace:
    """Continuous Lagrange space of degree 1 or 2 on a mesh."""

    def __init__(self, mesh: Mesh, degree: int = 2):
        if degree not in (1, 2):
            raise ConfigError("only Lagrange degrees 1 and 2 are supported")
        self.mesh = mesh
        self.degree = degree
        nv = mesh.n_vertices
        if degree == 1:
            self.cell_dofs = mesh.triangles.copy()
            self.dof_coords = mesh.vertices.copy()
        else:
            uniq, tri_edges = mesh.edges
            self.cell_dofs = np.hstack([mesh.triangles, nv + tri_edges])
            mid = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
            self.dof_coords = np.vstack([mesh.vertices, mid])
        self.n = len(self.dof_coords)
        self.nloc = self.cell_dofs.shape[1]
        self.cell_dofs.flags.writeable = False
        self.dof_coords.flags.writeable = False
        self.boundary_dofs = self._boundary_dofs()
        mask = np.ones(self.n, dtype=bool)
        mask[self.boundary_dofs] = False
        self.interior_dofs = np.nonzero(mask)[0]

    def _boundary_dofs(self):
        be = self.mesh.boundary_edges
        dofs = set(be.ravel().tolist())
        if self.degree == 2:
            uniq, _ = self.mesh.edges
            lookup = {tuple(e): k for k, e in enumerate(uniq.tolist())}
            nv = self.mesh.n_vertices
            for p, q in be.tolist():
                dofs.add(nv + lookup[(min(p, q), max(p, q))])
        return np.array(sorted(dofs), dtype=np.int64)

    @property
    def local_nodes(self):
        return _P1_NODES if self.degree == 1 else _P2_NODES

    # -- quadrature data -------------------------------------------------
    @cached_property
    def quadrature(self):
        """Physical points (nt, nq, 2), weights (nt, nq), basis (nq, nloc),
        physical basis gradients (nt, nq, nloc, 2)."""
        v0, jac, inv, det = self.mesh._affine
        qp = TRI_QUAD_POINTS
        pts = v0[:, None, :] + np.einsum("nij,qj->nqi", jac, qp)
        wts = np.abs(det)[:, None] * 0.5 * TRI_QUAD_WEIGHTS[None, :]
        phi = reference_basis(self.degree, qp)
        dphi_ref = reference_basis_grad(self.degree, qp)
        dphi = np.einsum("nji,qaj->nqai", inv, dphi_ref)
        return pts, wts, phi, dphi

    @property
    def quadrature_points(self):
        return self.quadrature[0]

    def quad_values(self, coeffs):
        """FE function values at all quadrature points (nt, nq)."""
        _, _, phi, _ = self.quadrature
        return np.asarray(coeffs)[self.cell_dofs] @ phi.T

    def load(self, values):
        """Load vector for the source sampled at quadrature points (nt, nq)."""
        _, wts, phi, _ = self.quadrature
        local = (values * wts) @ phi
        return np.bincount(self.cell_dofs.ravel(), weights=local.ravel(), minlength=self.n)

    def integrate(self, values):
        return float(np.sum(values * self.quadrature[1]))

    # -- matrices --------------------------------------------------------
    def _assemble(self, local):
        rows = np.repeat(self.cell_dofs, self.nloc, axis=1).ravel()
        cols = np.tile(self.cell_dofs, (1, self.nloc)).ravel()
        return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def stiffness(self):
        _, wts, _, dphi = self.quadrature
        local = np.einsum("nq,nqai,nqbi->nab", wts, dphi, dphi)
        return self._assemble(local)

    @cached_property
    def mass(self):
        _, wts, phi, _ = self.quadrature
        local = np.einsum("nq,qa,qb->nab", wts, phi, phi)
        return self._assemble(local)

    @cached_property
    def operator(self):
        """Matrix of the bilinear form  int grad u . grad v + u v."""
        return (self.stiffness + self.mass).tocsr()

    @cached_property
    def _dirichlet_factor(self):
        I = self.interior_dofs
        return spla.splu(self.operator[I][:, I].tocsc())

    @cached_property
    def _neumann_factor(self):
        return spla.splu(self.operator.tocsc())

    def solve_dirichlet(self, rhs, rtol=1e-10):
        """Solve with homogeneous Dirichlet data on all boundary dofs."""
        I = self.interior_dofs
        A = self.operator[I][:, I]
        b = rhs[I]
        x = _solve_checked(self._dirichlet_factor, A, b, rtol)
        out = np.zeros(self.n)
        out[I] = x
        return out

    def solve_natural(self, rhs, rtol=1e-10):
        return _solve_checked(self._neumann_factor, self.operator, rhs, rtol)

    # -- recovery --------------------------------------------------------
    @cached_property
    def recovery(self):
        """Sparse (Rx, Ry): nodal area-weighted averages of element gradients."""
        _, _, inv, det = self.mesh._affine
        area = 0.5 * np.abs(det)
        dref = reference_basis_grad(self.degree, self.local_nodes)  # (a, b, 2)
        grads = np.einsum("nji,abj->nabi", inv, dref)  # at node a, of basis b
        rows = np.repeat(self.cell_dofs, self.nloc, axis=1).ravel()
        cols = np.tile(self.cell_dofs, (1, self.nloc)).ravel()
        wsum = np.bincount(self.cell_dofs.ravel(), weights=np.repeat(area, self.nloc), minlength=self.n)
        scale = sp.diags(1.0 / wsum)
        out = []
        for d in range(2):
            vals = (area[:, None, None] * grads[..., d]).ravel()
            m = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsr()
            out.append((scale @ m).tocsr())
        return tuple(out)

    # -- point evaluation --------------------------------------------------
    def point_matrices(self, pts, derivatives=0, extrapolate=False):
        """Sparse evaluation operators at points.

        Returns ``B`` (values), and with ``derivatives >= 1`` also
        ``(Gx, Gy)`` elementwise gradients, and with ``derivatives >= 2``
        ``(Hxx, Hxy, Hyy)`` elementwise second derivatives.
        """
        pts = np.atleast_2d(pts)
        tri, ref = self.mesh.locate(pts, extrapolate=extrapolate)
        m = len(pts)
        rows = np.repeat(np.arange(m), self.nloc)
        cols = self.cell_dofs[tri].ravel()
        shape = (m, self.n)
        B = sp.csr_matrix((reference_basis(self.degree, ref).ravel(), (rows, cols)), shape=shape)
        if derivatives == 0:
            return B
        _, _, inv, _ = self.mesh._affine
        dref = reference_basis_grad(self.degree, ref)
        d = np.einsum("mji,maj->mai", inv[tri], dref)
        G = tuple(sp.csr_matrix((d[..., k].ravel(), (rows, cols)), shape=shape) for k in range(2))
        if derivatives == 1:
            return B, G
        href = reference_basis_hessian(self.degree)
        Hp = np.einsum("mki,akl,mlj->maij", inv[tri], href, inv[tri])
        H = tuple(
            sp.csr_matrix((Hp[:, :, i, j].ravel(), (rows, cols)), shape=shape)
            for i, j in ((0, 0), (0, 1), (1, 1))
        )
        return B, G, H

    def interpolate(self, fn):
        """Nodal interpolant of a callable ``fn(points) -> values``."""
        return ScalarField(self, np.asarray(fn(self.dof_coords), dtype=float).copy())

    def zero(self, constrained=False):
        return ScalarField(self, np.zeros(self.n), constrained=constrained)

    def constant(self, c):
        return ScalarField(self, np.full(self.n, float(c)))

    def basis_sum(self, pts):
        """Sum of all basis functions at points (partition of unity check)."""
        return np.asarray(self.point_matrices(pts).sum(axis=1)).ravel()


def _solve_checked(factor, A, b, rtol):
    x = factor.solve(b)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return x
    res = np.linalg.norm(A @ x - b) / nb
    if res > rtol:
        x = x + factor.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / nb
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"linear solve residual {res:.3e} exceeds {rtol:.1e}")
    return x


@dataclass
class ScalarField:
    space: FiniteElementSpace
    coeffs: np.ndarray
    constrained: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.n,):
            raise ValueError("coefficient vector length does not match the space")
        if self.constrained and np.any(self.coeffs[self.space.boundary_dofs] != 0.0):
            raise ValueError("constrained field has nonzero boundary coefficients")

    def __call__(self, pts):
        return evaluate(self, pts)

    def __add__(self, other):
        return ScalarField(self.space, self.coeffs + other.coeffs,
                           self.constrained and other.constrained)

    def __sub__(self, other):
        return ScalarField(self.space, self.coeffs - other.coeffs,
                           self.constrained and other.constrained)

    def __mul__(self, c):
        return ScalarField(self.space, self.coeffs * float(c), self.constrained)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.space, -self.coeffs, self.constrained)

    def quad_values(self):
        return self.space.quad_values(self.coeffs)

    def export_csv(self, path):
        """Write ``dof_id,x,y,value``."""
        xy = self.space.dof_coords
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dof_id", "x", "y", "value"])
            for i in range(self.space.n):
                w.writerow([i, repr(float(xy[i, 0])), repr(float(xy[i, 1])), repr(float(self.coeffs[i]))])

    @classmethod
    def from_csv(cls, space, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        if len(data) != space.n:
            raise ValueError(f"{path}: expected {space.n} dofs, found {len(data)}")
        return cls(space, data[:, 3].copy())


@dataclass
class VectorField:
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.space is not self.y.space:
            raise ValueError("vector components must share a space")

    def __call__(self, pts):
        return np.column_stack([evaluate(self.x, pts), evaluate(self.y, pts)])


def evaluate(field_: ScalarField, pts):
    """Value of the piecewise-polynomial field at a point or array of points."""
    arr = np.asarray(pts, dtype=float)
    single = arr.ndim == 1
    B = field_.space.point_matrices(np.atleast_2d(arr))
    out = B @ field_.coeffs
    return float(out[0]) if single else out


def recover_gradient(field_: ScalarField) -> VectorField:
    """Continuous gradient by area-weighted nodal averaging of element gradients."""
    Rx, Ry = field_.space.recovery
    return VectorField(ScalarField(field_.space, Rx @ field_.coeffs),
                       ScalarField(field_.space, Ry @ field_.coeffs))
