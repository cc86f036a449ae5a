"""Design functions g, the observation region E and the operations on the
admissible domain {g < 0}."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    AdmissibilityError,
    EmptyDomainError,
    GradientDegeneracyError,
    NoZeroSetError,
    NumericalError,
)
from .expressions import Expression
from .geometry import FiniteElementSpace, Mesh, ScalarField
from .hamiltonian import TracerOptions, trace_component


class AnalyticLevelSet:
    """Level set given by an :class:`Expression` (exact derivatives)."""

    has_hessian = True
    exact_flow = True

    def __init__(self, expr):
        self.expr = expr if isinstance(expr, Expression) else Expression(expr)
        self.value_at = self.expr.value_at
        self.grad_at = self.expr.grad_at
        self.hess_at = self.expr.hess_at

    def __repr__(self):
        return f"AnalyticLevelSet({self.expr.text!r})"

    def value(self, pts):
        return self.expr.value(pts)

    __call__ = value

    def gradient(self, pts):
        return self.expr.gradient(pts)

    def hessian(self, pts):
        return self.expr.hessian(pts)

    def nodal(self, space):
        return self.expr.value(space.dof_coords)

    def quad_values(self, space):
        q = space.quadrature_points
        return self.expr.value(q.reshape(-1, 2)).reshape(q.shape[:2])


class FELevelSet:
    """Level set backed by a finite element field.

    Values come from the field itself; gradients are the recovered
    (continuous) nodal gradient, Hessians the recovered gradient of the
    recovered gradient. Traces are kept on the level curve of the field by a
    Newton projection after each step since the recovered-gradient flow does
    not conserve the field exactly.
    """

    has_hessian = True
    exact_flow = False

    def __init__(self, field_: ScalarField):
        self.field = field_
        space = field_.space
        self.space = space
        Rx, Ry = space.recovery
        c = field_.coeffs
        gx, gy = Rx @ c, Ry @ c
        hxx, hyy = Rx @ gx, Ry @ gy
        hxy = 0.5 * (Ry @ gx + Rx @ gy)
        self._coef = np.column_stack([c, gx, gy, hxx, hxy, hyy])
        self._cells = [tuple(r) for r in space.cell_dofs.tolist()]
        self._c = c.tolist()
        self._g = list(zip(gx.tolist(), gy.tolist()))
        self._h = list(zip(hxx.tolist(), hxy.tolist(), hyy.tolist()))
        self._hint = -1

    @classmethod
    def from_function(cls, space, fn):
        return cls(space.interpolate(fn))

    @property
    def coeffs(self):
        return self.field.coeffs

    # -- array API ---------------------------------------------------------
    def _eval(self, pts, cols):
        B = self.space.point_matrices(np.atleast_2d(pts))
        return B @ self._coef[:, cols]

    def value(self, pts):
        return self._eval(pts, 0)

    __call__ = value

    def gradient(self, pts):
        return self._eval(pts, [1, 2])

    def hessian(self, pts):
        v = self._eval(pts, [3, 4, 5])
        return np.stack([np.stack([v[:, 0], v[:, 1]], -1), np.stack([v[:, 1], v[:, 2]], -1)], -2)

    def exact_gradient(self, pts):
        _, (Gx, Gy) = self.space.point_matrices(np.atleast_2d(pts), derivatives=1)
        c = self.field.coeffs
        return np.column_stack([Gx @ c, Gy @ c])

    def nodal(self, space):
        if space is self.space:
            return self.field.coeffs.copy()
        return self.value(space.dof_coords)

    def quad_values(self, space):
        if space is self.space:
            return self.field.quad_values()
        q = space.quadrature_points
        return self.value(q.reshape(-1, 2)).reshape(q.shape[:2])

    # -- scalar API --------------------------------------------------------
    def _basis(self, x, y):
        t, xi, eta = self.space.mesh.locate_one(x, y, self._hint)
        self._hint = t
        l0 = 1.0 - xi - eta
        if self.space.degree == 1:
            return t, (l0, xi, eta)
        return t, (l0 * (2 * l0 - 1), xi * (2 * xi - 1), eta * (2 * eta - 1),
                   4 * l0 * xi, 4 * xi * eta, 4 * eta * l0)

    def value_at(self, x, y):
        t, phi = self._basis(x, y)
        c = self._c
        return sum(p * c[d] for p, d in zip(phi, self._cells[t]))

    def grad_at(self, x, y):
        t, phi = self._basis(x, y)
        gx = gy = 0.0
        g = self._g
        for p, d in zip(phi, self._cells[t]):
            a, b = g[d]
            gx += p * a
            gy += p * b
        return gx, gy

    def hess_at(self, x, y):
        t, phi = self._basis(x, y)
        hxx = hxy = hyy = 0.0
        h = self._h
        for p, d in zip(phi, self._cells[t]):
            a, b, c = h[d]
            hxx += p * a
            hxy += p * b
            hyy += p * c
        return hxx, hxy, hyy

    def _value_and_exact_grad(self, x, y):
        mesh = self.space.mesh
        t, xi, eta = mesh.locate_one(x, y, self._hint)
        self._hint = t
        _, _, a, b, c, d = mesh._scalar_affine[t]
        l0 = 1.0 - xi - eta
        if self.space.degree == 1:
            phi = (l0, xi, eta)
            dxi = (-1.0, 1.0, 0.0)
            deta = (-1.0, 0.0, 1.0)
        else:
            phi = (l0 * (2 * l0 - 1), xi * (2 * xi - 1), eta * (2 * eta - 1),
                   4 * l0 * xi, 4 * xi * eta, 4 * eta * l0)
            dxi = (1 - 4 * l0, 4 * xi - 1, 0.0, 4 * (l0 - xi), 4 * eta, -4 * eta)
            deta = (1 - 4 * l0, 0.0, 4 * eta - 1, -4 * xi, 4 * xi, 4 * (l0 - eta))
        v = sx = se = 0.0
        coef = self._c
        for p, q, r, k in zip(phi, dxi, deta, self._cells[t]):
            ck = coef[k]
            v += p * ck
            sx += q * ck
            se += r * ck
        return v, a * sx + c * se, b * sx + d * se

    def project_to_level(self, x, y, level, tol=1e-13, max_iter=8):
        """Newton projection onto {g = level} along the element gradient."""
        for _ in range(max_iter):
            v, gx, gy = self._value_and_exact_grad(x, y)
            r = v - level
            if abs(r) <= tol * (1.0 + abs(level)):
                break
            n2 = gx * gx + gy * gy
            if n2 == 0.0:
                raise GradientDegeneracyError("zero gradient during level projection")
            x -= r * gx / n2
            y -= r * gy / n2
        return x, y


class CombinedLevelSet:
    """Linear combination  sum_k c_k g_k  of level sets."""

    def __init__(self, terms):
        self.terms = [(float(c), ls) for c, ls in terms]
        self.has_hessian = all(getattr(ls, "has_hessian", False) for _, ls in self.terms)
        self.exact_flow = all(getattr(ls, "exact_flow", True) for _, ls in self.terms)

    def value(self, pts):
        return sum(c * ls.value(pts) for c, ls in self.terms)

    __call__ = value

    def gradient(self, pts):
        return sum(c * ls.gradient(pts) for c, ls in self.terms)

    def hessian(self, pts):
        return sum(c * ls.hessian(pts) for c, ls in self.terms)

    def value_at(self, x, y):
        return sum(c * ls.value_at(x, y) for c, ls in self.terms)

    def grad_at(self, x, y):
        gx = gy = 0.0
        for c, ls in self.terms:
            a, b = ls.grad_at(x, y)
            gx += c * a
            gy += c * b
        return gx, gy

    def hess_at(self, x, y):
        out = [0.0, 0.0, 0.0]
        for c, ls in self.terms:
            for k, v in enumerate(ls.hess_at(x, y)):
                out[k] += c * v
        return tuple(out)

    def nodal(self, space):
        return sum(c * ls.nodal(space) for c, ls in self.terms)

    def quad_values(self, space):
        return sum(c * ls.quad_values(space) for c, ls in self.terms)

    def project_to_level(self, x, y, level, tol=1e-13, max_iter=8):
        for _ in range(max_iter):
            v = self.value_at(x, y) - level
            if abs(v) <= tol * (1.0 + abs(level)):
                break
            gx, gy = self.grad_at(x, y)
            n2 = gx * gx + gy * gy
            x -= v * gx / n2
            y -= v * gy / n2
        return x, y


def perturb(g, r, lam):
    """The level set g + lam * r."""
    return CombinedLevelSet([(1.0, g), (lam, r)])


def as_levelset(obj):
    if isinstance(obj, (AnalyticLevelSet, FELevelSet, CombinedLevelSet)):
        return obj
    if isinstance(obj, ScalarField):
        return FELevelSet(obj)
    return AnalyticLevelSet(obj)


# -- observation region ------------------------------------------------------

@dataclass
class ObservationRegion:
    """Disk-shaped observation region with a polar Gauss product rule."""

    center: tuple
    radius: float
    n_radial: int = 16
    n_angular: int = 64
    n_boundary: int = 256

    def __post_init__(self):
        self.center = (float(self.center[0]), float(self.center[1]))
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        xg, wg = np.polynomial.legendre.leggauss(self.n_radial)
        r = 0.5 * self.radius * (xg + 1.0)
        wr = 0.5 * self.radius * wg * r
        th = 2 * np.pi * (np.arange(self.n_angular) + 0.5) / self.n_angular
        R, TH = np.meshgrid(r, th, indexing="ij")
        self.quad_points = np.column_stack([
            self.center[0] + (R * np.cos(TH)).ravel(),
            self.center[1] + (R * np.sin(TH)).ravel(),
        ])
        self.quad_weights = np.repeat(wr, self.n_angular) * (2 * np.pi / self.n_angular)
        tb = 2 * np.pi * np.arange(self.n_boundary) / self.n_boundary
        self.boundary_points = np.column_stack([
            self.center[0] + self.radius * np.cos(tb),
            self.center[1] + self.radius * np.sin(tb),
        ])

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) < self.radius

    def indicator(self, pts):
        """Signed indicator: negative inside."""
        pts = np.atleast_2d(pts)
        return np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) - self.radius

    @property
    def sample_points(self):
        return np.vstack([self.quad_points, self.boundary_points])

    def integrate(self, values):
        return float(np.dot(self.quad_weights, values))


# -- seeds and tracing -------------------------------------------------------

def _vertex_values(ls, mesh):
    if isinstance(ls, FELevelSet) and ls.space.mesh is mesh:
        return ls.coeffs[: mesh.n_vertices]
    return ls.value(mesh.vertices)


def edge_roots(ls, mesh, tol=1e-10):
    """Zeros of g on mesh edges with a sign change, refined by bisection."""
    edges, _ = mesh.edges
    gv = _vertex_values(ls, mesh)
    ga, gb = gv[edges[:, 0]], gv[edges[:, 1]]
    cross = ((ga < 0) & (gb >= 0)) | ((ga >= 0) & (gb < 0))
    idx = np.nonzero(cross)[0]
    if not len(idx):
        return np.zeros((0, 2))
    a = mesh.vertices[edges[idx, 0]].copy()
    b = mesh.vertices[edges[idx, 1]].copy()
    fa = ga[idx].copy()
    fb = gb[idx].copy()
    # keep fa < 0 <= fb
    swap = fa >= 0
    a[swap], b[swap] = b[swap].copy(), a[swap].copy()
    fa[swap], fb[swap] = fb[swap].copy(), fa[swap].copy()
    mid = 0.5 * (a + b)
    for _ in range(80):
        mid = 0.5 * (a + b)
        fm = ls.value(mid)
        if np.all(np.abs(fm) <= tol):
            break
        neg = fm < 0
        a[neg] = mid[neg]
        b[~neg] = mid[~neg]
        if np.max(np.hypot(*(b - a).T)) < 1e-15:
            break
    return mid


def find_boundary_seeds(ls, mesh, opts: TracerOptions | None = None, m=1e-3,
                        return_components=False):
    """One start point per connected component of {g = 0}.

    Every sign-changing mesh edge yields a root; roots are claimed greedily
    by tracing from the first unclaimed one and discarding all roots within
    a tube of radius 2h around the traced curve.
    """
    roots = edge_roots(ls, mesh)
    if not len(roots):
        raise NoZeroSetError("g has no sign change on the mesh")
    grads = ls.gradient(roots)
    gn = np.hypot(grads[:, 0], grads[:, 1])
    if gn.min() < m:
        raise AdmissibilityError(f"|grad g| = {gn.min():.3e} < m = {m:g} at a zero of g")
    opts = replace(opts) if opts is not None else TracerOptions(h=mesh.h)
    if opts.grad_scale is None:
        opts.grad_scale = float(gn.max())
    if opts.bounds is None:
        opts.bounds = mesh.bounds
    if opts.max_length is None:
        # a resolved closed curve meets each crossed edge about once
        opts.max_length = 2.0 * mesh.h * (len(roots) + 10)
    opts.m = m
    tube = 2.0 * mesh.h
    claimed = np.zeros(len(roots), dtype=bool)
    seeds, comps = [], []
    while not claimed.all():
        i = int(np.argmin(claimed))
        comp = trace_component(ls, roots[i], opts)
        d, _ = cKDTree(comp.z).query(roots, k=1)
        near = d <= tube
        near[i] = True
        claimed |= near
        seeds.append(roots[i].copy())
        comps.append(comp)
    if return_components:
        return seeds, comps
    return seeds


def trace_boundary(ls, mesh, opts=None, m=1e-3):
    """Detect and trace every component of {g = 0}."""
    return find_boundary_seeds(ls, mesh, opts, m=m, return_components=True)[1]


# -- domain classification ---------------------------------------------------

def classify_domain(ls, mesh: Mesh, anchor=None):
    """Connected set of triangles with all vertices in {g < 0} that contains
    the anchor (an :class:`ObservationRegion` or a point). Without an anchor
    the component of largest area is returned."""
    gv = _vertex_values(ls, mesh)
    inside = np.all(gv[mesh.triangles] < 0, axis=1)
    if anchor is None:
        seeds = np.nonzero(inside)[0]
    elif isinstance(anchor, ObservationRegion):
        pts = np.vstack([anchor.quad_points, [anchor.center]])
        tri, _ = mesh.locate(pts)
        seeds = np.unique(tri[inside[tri]])
    else:
        p = np.asarray(anchor, dtype=float)
        tri, _ = mesh.locate(p[None, :])
        if inside[tri[0]]:
            seeds = tri
        else:
            cent = mesh.vertices[mesh.triangles].mean(axis=1)
            d = np.hypot(*(cent - p).T)
            cand = np.nonzero(inside & (d <= 1.5 * mesh.h))[0]
            seeds = cand[np.argsort(d[cand], kind="stable")[:1]]
    if not len(seeds):
        raise EmptyDomainError("the anchor does not meet {g < 0}")
    nb = mesh.neighbours
    rows = np.repeat(np.arange(mesh.n_triangles), 3)
    cols = nb.ravel()
    ok = (cols >= 0) & inside[rows] & inside[np.maximum(cols, 0)]
    adj = sp.csr_matrix((np.ones(ok.sum()), (rows[ok], cols[ok])),
                        shape=(mesh.n_triangles, mesh.n_triangles))
    _, labels = connected_components(adj, directed=False)
    if anchor is None:
        area = np.bincount(labels[inside], weights=mesh.areas[inside])
        keep = [int(np.argmax(area))]
    else:
        keep = np.unique(labels[seeds])
    return inside & np.isin(labels, keep)


# -- projection --------------------------------------------------------------

def project_constraint(g, E: ObservationRegion, g_E, space: FiniteElementSpace) -> FELevelSet:
    """Nodal projection: coefficients inside E are replaced by g_E."""
    coeffs = g.nodal(space).astype(float).copy()
    inE = E.contains(space.dof_coords)
    coeffs[inE] = as_levelset(g_E).nodal(space)[inE]
    return FELevelSet(ScalarField(space, coeffs))


# -- admissibility -----------------------------------------------------------

@dataclass
class AdmissibilityReport:
    min_grad_on_zero_set: float
    min_g_on_boundary: float
    max_g_on_E: float | None
    component_count: int
    m: float
    n_zero_set_samples: int = 0
    n_boundary_samples: int = 0
    n_E_samples: int = 0
    notes: list = field(default_factory=list)

    @property
    def gradient_ok(self):
        return self.component_count > 0 and self.min_grad_on_zero_set >= self.m

    @property
    def boundary_ok(self):
        return self.min_g_on_boundary > 0.0

    @property
    def E_ok(self):
        return self.max_g_on_E is None or self.max_g_on_E <= 0.0

    @property
    def passed(self):
        return self.gradient_ok and self.boundary_ok and self.E_ok

    def to_dict(self):
        return {
            "min_grad_on_zero_set": self.min_grad_on_zero_set,
            "min_g_on_boundary": self.min_g_on_boundary,
            "max_g_on_E": self.max_g_on_E,
            "component_count": self.component_count,
            "m": self.m,
            "gradient_ok": self.gradient_ok,
            "boundary_ok": self.boundary_ok,
            "E_ok": self.E_ok,
            "passed": self.passed,
            "samples": {"zero_set": self.n_zero_set_samples, "boundary": self.n_boundary_samples,
                        "E": self.n_E_samples},
            "notes": list(self.notes),
        }


def check_admissibility(ls, mesh: Mesh, E: ObservationRegion | None = None, m=1e-3,
                        components=None, opts=None) -> AdmissibilityReport:
    notes = []
    if components is None:
        try:
            components = trace_boundary(ls, mesh, opts, m=m)
        except (NumericalError, AdmissibilityError) as exc:
            notes.append(f"tracing failed: {exc}")
            components = []
    if components:
        z = np.vstack([c.z for c in components])
        gz = ls.gradient(z)
        min_grad = float(np.min(np.hypot(gz[:, 0], gz[:, 1])))
    else:
        z = np.zeros((0, 2))
        min_grad = 0.0
    be = mesh.boundary_edges
    bpts = np.vstack([mesh.vertices[np.unique(be)],
                      0.5 * (mesh.vertices[be[:, 0]] + mesh.vertices[be[:, 1]])])
    min_b = float(np.min(ls.value(bpts)))
    if E is not None and isinstance(ls, FELevelSet):
        # the constraint is nodal; the P2 interpolant may bulge between dofs
        inE = E.contains(ls.space.dof_coords)
        max_e = float(np.max(ls.coeffs[inE])) if inE.any() else None
        ne = int(inE.sum())
        notes.append("E checked at the dofs inside E")
    elif E is not None:
        epts = E.sample_points
        max_e = float(np.max(ls.value(epts)))
        ne = len(epts)
    else:
        max_e, ne = None, 0
    return AdmissibilityReport(
        min_grad_on_zero_set=min_grad, min_g_on_boundary=min_b, max_g_on_E=max_e,
        component_count=len(components), m=m, n_zero_set_samples=len(z),
        n_boundary_samples=len(bpts), n_E_samples=ne, notes=notes,
    )


def circle_levelset(cx=0.0, cy=0.0, r=1.0):
    return AnalyticLevelSet(f"(x1 - ({cx!r}))^2 + (x2 - ({cy!r}))^2 - {r * r!r}")

