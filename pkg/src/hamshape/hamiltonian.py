"""Periodic trajectories of  z' = (-dg/dx2, dg/dx1)  and their sensitivities.

Each closed component of {g = 0} is traversed by fixed-step classical RK4.
The period is the first return to the Poincare section through the start
point, normal to the initial velocity, crossed in the initial direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .errors import (
    GradientDegeneracyError,
    MissingHessianError,
    NoReturnError,
    NumericalError,
)


@dataclass
class TracerOptions:
    h: float = 0.0625            # mesh size used to scale the step
    c_step: float = 0.25
    dt: float | None = None      # explicit step, overrides c_step * h / grad_scale
    grad_scale: float | None = None
    m: float = 1e-3              # lower bound for |grad g| along the path
    max_steps: int = 1_000_000
    max_length: float | None = None  # arc-length cap; exceeding it means no return
    r_cap_factor: float = 0.1
    t_min_factor: float = 10.0
    bounds: object = None        # Box; leaving it aborts the trace

    def step_for(self, grad_norm):
        if self.dt is not None:
            return float(self.dt)
        scale = self.grad_scale if self.grad_scale else grad_norm
        return self.c_step * self.h / scale


@dataclass
class TracedComponent:
    x0: np.ndarray
    t: np.ndarray        # (N,) sample times, t[0] = 0, t[-1] = T
    z: np.ndarray        # (N, 2)
    dz: np.ndarray       # (N, 2) velocity at the samples
    dt: float
    level: float = 0.0   # value of g conserved along the path

    @property
    def period(self):
        return float(self.t[-1])

    @cached_property
    def weights(self):
        """Composite trapezoid weights on the (non-uniform at the end) grid."""
        d = np.diff(self.t)
        w = np.zeros(len(self.t))
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w

    @cached_property
    def speed(self):
        return np.hypot(self.dz[:, 0], self.dz[:, 1])

    @property
    def length(self):
        return float(self.weights @ self.speed)

    @property
    def return_error(self):
        return float(np.hypot(*(self.z[-1] - self.x0)))

    def signed_area(self):
        z = self.z
        return 0.5 * float(np.sum(z[:-1, 0] * z[1:, 1] - z[1:, 0] * z[:-1, 1]))

    def to_rows(self):
        return np.column_stack([self.t, self.z, self.dz])


@dataclass
class VariationTrajectory:
    component: TracedComponent
    w: np.ndarray        # (N, 2)
    dw: np.ndarray       # (N, 2)
    r: object = field(default=None, repr=False)


def _rk4(f, x, y, h):
    k1x, k1y = f(x, y)
    k2x, k2y = f(x + 0.5 * h * k1x, y + 0.5 * h * k1y)
    k3x, k3y = f(x + 0.5 * h * k2x, y + 0.5 * h * k2y)
    k4x, k4y = f(x + h * k3x, y + h * k3y)
    return (x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
            y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y))


def trace_component(ls, x0, opts: TracerOptions | None = None) -> TracedComponent:
    """Trace the closed component of the zero set through ``x0``."""
    opts = opts or TracerOptions()
    x0 = np.asarray(x0, dtype=float)
    sx, sy = float(x0[0]), float(x0[1])
    level = float(ls.value_at(sx, sy))
    gx, gy = ls.grad_at(sx, sy)
    gnorm = math.hypot(gx, gy)
    if gnorm < opts.m:
        raise GradientDegeneracyError(f"|grad g| = {gnorm:.3e} < m at the start point")
    dt = opts.step_for(gnorm)
    grad_at = ls.grad_at

    def rhs(x, y):
        a, b = grad_at(x, y)
        return -b, a

    project = None if getattr(ls, "exact_flow", True) else ls.project_to_level
    box = opts.bounds
    v0x, v0y = -gy, gx
    t_min = opts.t_min_factor * dt

    def step(x, y, h):
        nx, ny = _rk4(rhs, x, y, h)
        if project is not None:
            nx, ny = project(nx, ny, level)
        return nx, ny

    ts, zs, dzs = [0.0], [(sx, sy)], [(v0x, v0y)]
    x, y, t = sx, sy, 0.0
    s_prev = 0.0
    vmax = gnorm
    arc = 0.0
    max_length = math.inf if opts.max_length is None else opts.max_length
    for _ in range(opts.max_steps):
        nx, ny = step(x, y, dt)
        if box is not None and not (box.xmin <= nx <= box.xmax and box.ymin <= ny <= box.ymax):
            raise NoReturnError("trajectory left the domain before returning")
        s_new = (nx - sx) * v0x + (ny - sy) * v0y
        if t + dt > t_min and s_prev < 0.0 <= s_new:
            def section(tau):
                px, py = step(x, y, tau)
                return (px - sx) * v0x + (py - sy) * v0y

            if s_new == 0.0:
                tau = dt
            else:
                tau = brentq(section, 0.0, dt, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            px, py = step(x, y, tau) if tau < dt else (nx, ny)
            r_cap = opts.r_cap_factor * dt * vmax
            if math.hypot(px - sx, py - sy) <= r_cap:
                ts.append(t + tau)
                zs.append((px, py))
                dzs.append(rhs(px, py))
                return TracedComponent(
                    x0=x0.copy(), t=np.array(ts), z=np.array(zs), dz=np.array(dzs),
                    dt=dt, level=level,
                )
        x, y, t = nx, ny, t + dt
        vx, vy = rhs(x, y)
        speed = math.hypot(vx, vy)
        if speed < opts.m:
            raise GradientDegeneracyError(f"|grad g| = {speed:.3e} < m at ({x:.4g}, {y:.4g})")
        vmax = max(vmax, speed)
        arc += dt * speed
        if arc > max_length:
            raise NoReturnError(f"no return within the arc-length cap {max_length:.4g}")
        ts.append(t)
        zs.append((x, y))
        dzs.append((vx, vy))
        s_prev = s_new
    raise NoReturnError(f"no return to the start point after {opts.max_steps} steps")


def trace_all(ls, seeds, opts: TracerOptions | None = None, tube=None):
    """Trace one component per seed and check they are pairwise disjoint."""
    opts = opts or TracerOptions()
    comps = []
    for i, s in enumerate(seeds):
        try:
            comps.append(trace_component(ls, s, opts))
        except NumericalError as exc:
            raise type(exc)(f"seed {i}: {exc}") from exc
    tube = 2.0 * opts.h if tube is None else tube
    for i in range(len(comps)):
        tree = cKDTree(comps[i].z)
        for j in range(i + 1, len(comps)):
            d, _ = tree.query(comps[j].z, k=1)
            if d.min() <= tube:
                raise NumericalError(f"components {i} and {j} are not disjoint")
    return comps


def solve_variation(ls, r, comp: TracedComponent) -> VariationTrajectory:
    """Linearized trajectory w for the perturbation g + lambda r, w(0) = 0.

    z and w are advanced together by RK4 on the stored time grid, so w is
    the exact derivative of the discrete trajectory with respect to lambda.
    """
    if not getattr(ls, "has_hessian", False):
        raise MissingHessianError("level set has no second derivatives")
    grad_at, hess_at, rgrad_at = ls.grad_at, ls.hess_at, r.grad_at

    def f(x, y, w1, w2):
        gx, gy = grad_at(x, y)
        hxx, hxy, hyy = hess_at(x, y)
        rx, ry = rgrad_at(x, y)
        ax = hxx * w1 + hxy * w2 + rx
        ay = hxy * w1 + hyy * w2 + ry
        return -gy, gx, -ay, ax

    n = len(comp.t)
    w = np.zeros((n, 2))
    dw = np.zeros((n, 2))
    w1 = w2 = 0.0
    for i in range(n):
        x, y = comp.z[i]
        k1 = f(x, y, w1, w2)
        dw[i] = k1[2], k1[3]
        w[i] = w1, w2
        if i == n - 1:
            break
        h = comp.t[i + 1] - comp.t[i]
        k2 = f(x + 0.5 * h * k1[0], y + 0.5 * h * k1[1], w1 + 0.5 * h * k1[2], w2 + 0.5 * h * k1[3])
        k3 = f(x + 0.5 * h * k2[0], y + 0.5 * h * k2[1], w1 + 0.5 * h * k2[2], w2 + 0.5 * h * k2[3])
        k4 = f(x + h * k3[0], y + h * k3[1], w1 + h * k3[2], w2 + h * k3[3])
        w1 += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        w2 += h / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
    return VariationTrajectory(component=comp, w=w, dw=dw, r=r)


def period_derivative(comp: TracedComponent, var: VariationTrajectory, m: float = 1e-3) -> float:
    """Derivative of the period along the perturbation: -w_i(T) / z_i'(T),
    using the velocity component of larger magnitude (ties pick i = 2)."""
    vT = comp.dz[-1]
    if math.hypot(*vT) < m:
        raise GradientDegeneracyError("degenerate velocity at the return point")
    i = 0 if abs(vT[0]) > abs(vT[1]) else 1
    return float(-var.w[-1, i] / vT[i])
