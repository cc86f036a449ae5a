"""Penalized objective, boundary quadrature and the full directional
derivative.

Gradients of FE fields on the traced boundary are taken from the recovered
(continuous) gradient; second derivatives are the element derivatives of
that recovered gradient. The same operators are used by the adjoint load, so
the discrete adjoint identity holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import GradientDegeneracyError, MissingHessianError
from .expressions import Expression


def _zero2(x, y):
    return np.zeros(len(np.atleast_1d(y)))


def _zero_grad(x, y):
    return np.zeros((len(np.atleast_1d(y)), 2))


@dataclass
class CostFunctions:
    """Integrands J(x, y) over E and j(x, y) on the boundary with their
    derivatives in y (``dJ``, ``dj``) and in x (``grad_j``)."""

    J: Callable = _zero2
    dJ: Callable = _zero2
    j: Callable = _zero2
    dj: Callable = _zero2
    grad_j: Callable = _zero_grad
    has_J: bool = False
    has_j: bool = False

    @classmethod
    def tracking(cls, y_d, distributed=False, boundary=False):
        """Quadratic tracking 1/2 (y - y_d)^2 on E and/or on the boundary."""
        yd = y_d if isinstance(y_d, Expression) else Expression(y_d)

        def val(x, y):
            return 0.5 * (y - yd.value(x)) ** 2

        def dval(x, y):
            return y - yd.value(x)

        def gval(x, y):
            return -(y - yd.value(x))[:, None] * yd.gradient(x)

        kw = {}
        if distributed:
            kw.update(J=val, dJ=dval, has_J=True)
        if boundary:
            kw.update(j=val, dj=dval, grad_j=gval, has_j=True)
        return cls(**kw)


@dataclass
class CostBreakdown:
    t1: float
    t2: float
    t3: float
    total: float
    epsilon: float

    @classmethod
    def from_terms(cls, t1, t2, t3, epsilon):
        return cls(float(t1), float(t2), float(t3), float(t1 + t2 + t3 / epsilon), float(epsilon))

    def as_dict(self):
        return {"t1": self.t1, "t2": self.t2, "t3": self.t3, "J": self.total, "epsilon": self.epsilon}


def constant_or_expression(obj):
    if obj is None:
        return Expression("0")
    if isinstance(obj, Expression):
        return obj
    return Expression(obj)


class TraceSampler:
    """Sparse evaluation operators on all samples of a list of traced
    components, for fields of one FE space."""

    def __init__(self, space, components):
        self.space = space
        self.components = list(components)
        if self.components:
            self.z = np.vstack([c.z for c in self.components])
            self.dz = np.vstack([c.dz for c in self.components])
            self.weights = np.concatenate([c.weights for c in self.components])
        else:
            self.z = np.zeros((0, 2))
            self.dz = np.zeros((0, 2))
            self.weights = np.zeros(0)
        sizes = [len(c.t) for c in self.components]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.speed = np.hypot(self.dz[:, 0], self.dz[:, 1])
        self.ds = self.weights * self.speed
        if len(self.z):
            self.B, (self.Gx, self.Gy) = space.point_matrices(self.z, derivatives=1)
        else:
            import scipy.sparse as sp

            self.B = self.Gx = self.Gy = sp.csr_matrix((0, space.n))

    def last_index(self, k):
        return self.offsets[k + 1] - 1

    def values(self, coeffs):
        return self.B @ coeffs

    def grad(self, coeffs):
        Rx, Ry = self.space.recovery
        return np.column_stack([self.B @ (Rx @ coeffs), self.B @ (Ry @ coeffs)])

    def grad_jacobian(self, coeffs):
        """(N, 2, 2) derivative of the recovered gradient; row i = d(grad_i)."""
        Rx, Ry = self.space.recovery
        gx, gy = Rx @ coeffs, Ry @ coeffs
        out = np.empty((len(self.z), 2, 2))
        out[:, 0, 0] = self.Gx @ gx
        out[:, 0, 1] = self.Gy @ gx
        out[:, 1, 0] = self.Gx @ gy
        out[:, 1, 1] = self.Gy @ gy
        return out

    def load(self, value_weights=None, grad_weights=None):
        """Vector b_i = sum_s vw_s phi_i(z_s) + gw_s . grad_rec(phi_i)(z_s)."""
        b = np.zeros(self.space.n)
        if value_weights is not None:
            b += self.B.T @ value_weights
        if grad_weights is not None:
            Rx, Ry = self.space.recovery
            b += Rx.T @ (self.B.T @ grad_weights[:, 0]) + Ry.T @ (self.B.T @ grad_weights[:, 1])
        return b


def boundary_integral(trace, integrand) -> float:
    """Sum over components of the trapezoid rule for
    ``integral_0^T integrand(z, z') |z'| dt``."""
    total = 0.0
    for comp in trace:
        vals = np.asarray(integrand(comp.z, comp.dz), dtype=float)
        vals = np.broadcast_to(vals, (len(comp.t),))
        total += float(np.sum(comp.weights * comp.speed * vals))
    return total


def unit_normals(g, z, m=1e-3):
    grad = g.gradient(z)
    n = np.hypot(grad[:, 0], grad[:, 1])
    if len(n) and n.min() < m:
        raise GradientDegeneracyError(f"|grad g| = {n.min():.3e} < m on the boundary")
    return grad, n


def neumann_residual(y, g, sampler, delta, m=1e-3):
    """s = grad y . grad g / |grad g| - delta at every trace sample."""
    grad_g, ngrad = unit_normals(g, sampler.z, m)
    nrm = grad_g / ngrad[:, None] if len(ngrad) else grad_g
    gy = sampler.grad(y.coeffs)
    dv = constant_or_expression(delta).value(sampler.z) if len(sampler.z) else np.zeros(0)
    return np.sum(gy * nrm, axis=1) - dv, nrm, grad_g, ngrad, gy


def evaluate_cost(y, g, trace, E, cf: CostFunctions, delta, epsilon, m=1e-3,
                  sampler: Optional[TraceSampler] = None) -> CostBreakdown:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    space = y.space
    sampler = sampler or TraceSampler(space, trace)
    t1 = 0.0
    if E is not None and cf.has_J:
        yE = space.point_matrices(E.quad_points) @ y.coeffs
        t1 = E.integrate(cf.J(E.quad_points, yE))
    t2 = 0.0
    if cf.has_j and len(sampler.z):
        t2 = float(sampler.ds @ cf.j(sampler.z, sampler.values(y.coeffs)))
    s, *_ = neumann_residual(y, g, sampler, delta, m)
    t3 = float(sampler.ds @ (s * s))
    return CostBreakdown.from_terms(t1, t2, t3, epsilon)


def adjoint_load(y, g, sampler: TraceSampler, E, cf: CostFunctions, delta, epsilon, m=1e-3):
    """Right-hand side of the simplified adjoint problem (all dofs)."""
    space = y.space
    b = np.zeros(space.n)
    if E is not None and cf.has_J:
        BE = space.point_matrices(E.quad_points)
        yE = BE @ y.coeffs
        b += BE.T @ (E.quad_weights * cf.dJ(E.quad_points, yE))
    if not len(sampler.z):
        return b
    vw = None
    if cf.has_j:
        vw = sampler.ds * cf.dj(sampler.z, sampler.values(y.coeffs))
    s, nrm, *_ = neumann_residual(y, g, sampler, delta, m)
    gw = (2.0 / epsilon) * (sampler.ds * s)[:, None] * nrm
    return b + sampler.load(vw, gw)


def descent_lhs(y, q, g, sampler, E, cf, delta, epsilon, m=1e-3):
    """Terms of the directional derivative that multiply q (the left-hand
    side of the descent inequality)."""
    return float(q.coeffs @ adjoint_load(y, g, sampler, E, cf, delta, epsilon, m))


def directional_derivative(g, u, r, v, y, q, trace, ws, thetas, cf: CostFunctions, delta,
                           epsilon, E=None, m=1e-3) -> float:
    """Derivative of the penalized cost along (r, v), with the trajectories
    started from the fixed points ``comp.x0``.

    Parameters follow the pipeline: ``q`` solves the linearized state
    equation, ``ws[k]`` is the variation trajectory and ``thetas[k]`` the
    period derivative of component ``k``. ``u`` and ``v`` enter only
    through ``q`` and are accepted for symmetry with the state solver.
    """
    if not getattr(g, "has_hessian", False):
        raise MissingHessianError("directional derivative needs the Hessian of g")
    space = y.space
    delta_e = constant_or_expression(delta)
    total = 0.0
    if E is not None and cf.has_J:
        BE = space.point_matrices(E.quad_points)
        yE = BE @ y.coeffs
        total += E.integrate(cf.dJ(E.quad_points, yE) * (BE @ q.coeffs))
    for comp, var, theta in zip(trace, ws, thetas):
        smp = TraceSampler(space, [comp])
        z, dz = comp.z, comp.dz
        w, dw = var.w, var.dw
        speed = smp.speed
        wt = comp.weights
        s, nrm, grad_g, ngrad, grad_y = neumann_residual(y, g, smp, delta_e, m)
        yv = smp.values(y.coeffs)
        qv = smp.values(q.coeffs)
        grad_q = smp.grad(q.coeffs)
        Hy = smp.grad_jacobian(y.coeffs)
        Hg = g.hessian(z)
        grad_r = r.gradient(z)
        grad_delta = delta_e.gradient(z)
        Hg_w = np.einsum("nij,nj->ni", Hg, w)
        Hy_w = np.einsum("nij,nj->ni", Hy, w)
        a = grad_r + Hg_w
        dN = a / ngrad[:, None] - grad_g * (np.sum(grad_g * a, axis=1) / ngrad ** 3)[:, None]
        ds_dlam = (np.sum(grad_q * nrm, axis=1) + np.sum(Hy_w * nrm, axis=1)
                   + np.sum(grad_y * dN, axis=1) - np.sum(grad_delta * w, axis=1))
        dspeed = np.sum(dz * dw, axis=1) / speed
        # endpoint term from the moving period
        F_end = s[-1] ** 2 / epsilon
        if cf.has_j:
            F_end += cf.j(z[-1:], yv[-1:])[0]
        total += theta * F_end * speed[-1]
        integrand = (2.0 / epsilon) * s * ds_dlam * speed + (1.0 / epsilon) * s * s * dspeed
        if cf.has_j:
            jv = cf.j(z, yv)
            djv = cf.dj(z, yv)
            gj = cf.grad_j(z, yv)
            integrand += (np.sum(gj * w, axis=1) + djv * (np.sum(grad_y * w, axis=1) + qv)) * speed
            integrand += jv * dspeed
        total += float(wt @ integrand)
    return float(total)
