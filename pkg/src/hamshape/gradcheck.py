"""Finite-difference oracles for the period derivative and the directional
derivative of the penalized cost."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cost import CostFunctions, directional_derivative, evaluate_cost
from .expressions import Expression
from .hamiltonian import TracerOptions, period_derivative, solve_variation, trace_component
from .levelset import AnalyticLevelSet, ObservationRegion, find_boundary_seeds, perturb
from .pde import solve_linearized, solve_state

Y_D = "x^2 + y^2 - 1"


@dataclass
class GradConfig:
    g: AnalyticLevelSet
    r: AnalyticLevelSet
    u: Expression
    v: Expression
    f: Expression
    delta: Expression
    cf: CostFunctions
    epsilon: float
    E: ObservationRegion | None = None

    def scaled(self, c):
        """Same configuration with the direction (r, v) multiplied by c."""
        return replace(self, r=AnalyticLevelSet(f"({c!r}) * ({self.r.expr.text})"),
                       v=Expression(f"({c!r}) * ({self.v.text})"))


def circle_config(zero_direction=False):
    """Unit circle with boundary and distributed tracking; the default case
    of the grad-check command."""
    return GradConfig(
        g=AnalyticLevelSet("x^2 + y^2 - 1"),
        r=AnalyticLevelSet("0" if zero_direction else "0.2 + 0.3*x - 0.1*x*y"),
        u=Expression("1 + 0.5*sin(x + y)"),
        v=Expression("0" if zero_direction else "0.4*cos(x) - 0.2*y"),
        f=Expression(f"-4 + {Y_D}"),
        delta=Expression("2 + 0.1*x"),
        cf=_tracking(),
        epsilon=0.5,
        E=ObservationRegion((0.0, 0.0), 0.3),
    )


def _tracking():
    return CostFunctions.tracking(Y_D, distributed=True, boundary=True)


def random_config(rng: np.random.Generator) -> GradConfig:
    """Smooth analytic configuration from a perturbed-ellipse family."""
    cx, cy, a, b, s = (_num(t) for t in (*rng.uniform(-0.3, 0.3, 2), *rng.uniform(0.9, 1.4, 2),
                                          rng.uniform(0.6, 1.5)))
    c = [_num(t) for t in rng.uniform(-0.3, 0.3, 6)]
    d = [_num(t) for t in rng.uniform(-0.4, 0.4, 4)]
    g = AnalyticLevelSet(f"{s}*((x - {cx})^2/{a}^2 + (y - {cy})^2/{b}^2 - 1)")
    r = AnalyticLevelSet(f"{c[0]} + {c[1]}*x + {c[2]}*y + {c[3]}*x*y + {c[4]}*sin(x) + {c[5]}*y^2")
    u = Expression(f"1 + {d[0]}*sin(x + y) + {d[1]}*x")
    v = Expression(f"{d[2]}*cos(x) + {d[3]}*y")
    delta = Expression(f"2 + 0.1*{d[0]}*x - 0.1*{d[1]}*y")
    E = ObservationRegion((float(cx[1:-1]), float(cy[1:-1])), 0.3)
    return GradConfig(g, r, u, v, Expression(f"-4 + {Y_D}"), delta, _tracking(),
                      float(rng.uniform(0.3, 1.0)), E)


def _num(t):
    return f"({float(t)!r})"


def _traces(ls, seeds, opts):
    return [trace_component(ls, s, opts) for s in seeds]


def reference_trace(cfg: GradConfig, mesh, c_step=0.0625):
    """Seeds and tracer options frozen for the whole check (fixed step).

    The discrete cost is only piecewise smooth in lambda (trace samples
    cross element edges), so the check uses a finer step than the optimizer
    to keep the finite-difference noise well below the tolerance.
    """
    base = TracerOptions(h=mesh.h, c_step=c_step)
    seeds, comps = find_boundary_seeds(cfg.g, mesh, base, return_components=True)
    opts = TracerOptions(h=mesh.h, dt=comps[0].dt, bounds=mesh.bounds)
    return seeds, comps, opts


def pipeline_cost(cfg: GradConfig, space, seeds, opts, lam=0.0):
    g = perturb(cfg.g, cfg.r, lam) if lam else cfg.g
    u = Expression(f"({cfg.u.text}) + ({lam!r})*({cfg.v.text})") if lam else cfg.u
    trace = _traces(g, seeds, opts)
    y = solve_state(g, u, cfg.f, space)
    return evaluate_cost(y, g, trace, cfg.E, cfg.cf, cfg.delta, cfg.epsilon).total


def analytic_derivative(cfg: GradConfig, space, seeds, opts):
    trace = _traces(cfg.g, seeds, opts)
    y = solve_state(cfg.g, cfg.u, cfg.f, space)
    q = solve_linearized(cfg.g, cfg.u, cfg.r, cfg.v, cfg.f, space)
    ws = [solve_variation(cfg.g, cfg.r, c) for c in trace]
    thetas = [period_derivative(c, w) for c, w in zip(trace, ws)]
    return directional_derivative(cfg.g, cfg.u, cfg.r, cfg.v, y, q, trace, ws, thetas,
                                  cfg.cf, cfg.delta, cfg.epsilon, E=cfg.E)


def derivative_check(cfg: GradConfig, space, step=1e-4, c_step=0.0625):
    """(analytic, finite difference, relative error) for the cost derivative."""
    seeds, _, opts = reference_trace(cfg, space.mesh, c_step)
    exact = analytic_derivative(cfg, space, seeds, opts)
    fd = (pipeline_cost(cfg, space, seeds, opts, step)
          - pipeline_cost(cfg, space, seeds, opts, -step)) / (2 * step)
    rel = abs(exact - fd) / max(abs(fd), 1e-12) if fd or exact else 0.0
    return exact, fd, rel


def period_check(g, r, x0, opts, step=1e-5):
    """(theta, finite-difference period derivative) from the start point x0."""
    comp = trace_component(g, x0, opts)
    opts = replace(opts, dt=comp.dt)
    theta = period_derivative(comp, solve_variation(g, r, comp))
    tp = trace_component(perturb(g, r, step), x0, opts).period
    tm = trace_component(perturb(g, r, -step), x0, opts).period
    return theta, (tp - tm) / (2 * step)
