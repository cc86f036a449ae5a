"""Adjoint descent directions, projected backtracking line search and the
outer iteration loop."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import CostBreakdown, CostFunctions, TraceSampler, descent_lhs, evaluate_cost
from .errors import AdmissibilityError, HamshapeError
from .expressions import Expression
from .geometry import FiniteElementSpace, ScalarField
from .hamiltonian import TracerOptions
from .levelset import (
    FELevelSet,
    ObservationRegion,
    as_levelset,
    check_admissibility,
    find_boundary_seeds,
    project_constraint,
)
from .pde import solve_adjoint, solve_control_smoothing, solve_linearized, solve_state

log = logging.getLogger(__name__)


@dataclass
class Problem:
    """Fixed data of an optimization run."""

    space: FiniteElementSpace
    f: object
    delta: object
    cf: CostFunctions
    epsilon: float
    E: Optional[ObservationRegion] = None
    g_E: object = None
    m: float = 1e-3
    c_step: float = 0.25
    rho: float = 0.8
    max_pow: int = 30
    tol: float = 1e-6
    max_iter: int = 50
    variant: str = "ii"
    threads: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.variant not in ("i", "ii"):
            raise ValueError("variant must be 'i' or 'ii'")
        if self.E is not None and self.g_E is None:
            raise ValueError("an observation region needs g_E for the projection")
        self.f = _expr(self.f)
        self.delta = _expr(self.delta)

    @property
    def mesh(self):
        return self.space.mesh

    def tracer_options(self):
        return TracerOptions(h=self.mesh.h, c_step=self.c_step, m=self.m)

    def project(self, coeffs):
        """Nodal projection onto the constraint set (identity without E)."""
        if self.E is None:
            return FELevelSet(ScalarField(self.space, coeffs))
        return project_constraint(FELevelSet(ScalarField(self.space, coeffs)), self.E, self.g_E, self.space)


def _expr(obj):
    if obj is None:
        return Expression("0")
    if isinstance(obj, (str, int, float)):
        return Expression(obj)
    return obj


@dataclass
class OptimizerState:
    g: FELevelSet
    u: ScalarField
    y: ScalarField
    trace: list
    cost: CostBreakdown
    k: int = 0
    lam: Optional[float] = None
    sampler: Optional[TraceSampler] = field(default=None, repr=False)

    @property
    def n_components(self):
        return len(self.trace)


@dataclass
class DescentDirection:
    r: ScalarField
    v: ScalarField
    variant: str
    predicted: float
    p: ScalarField

    @property
    def is_zero(self):
        return not (np.any(self.r.coeffs) or np.any(self.v.coeffs))


@dataclass
class Candidate:
    k: int
    sub_step: int
    lam: float
    cost: Optional[CostBreakdown]
    state: Optional[OptimizerState] = field(default=None, repr=False)
    error: Optional[str] = None
    accepted: bool = False


@dataclass
class RunHistory:
    states: list
    candidates: list
    stop_reason: str
    improving: list = field(default_factory=list)   # (k, sub_step, lam, g coeffs)

    @property
    def costs(self):
        return [s.cost.total for s in self.states]

    @property
    def component_counts(self):
        return [s.n_components for s in self.states]

    def summary(self):
        return {
            "iterations": len(self.states) - 1,
            "final_cost": self.states[-1].cost.total,
            "stop_reason": self.stop_reason,
            "per_iteration": [
                {"k": s.k, "lambda": s.lam, "components": s.n_components, **s.cost.as_dict()}
                for s in self.states
            ],
        }


def evaluate_state(problem: Problem, g: FELevelSet, u: ScalarField, k: int = 0, lam=None) -> OptimizerState:
    """Trace, solve and evaluate the cost for one configuration."""
    mesh = problem.mesh
    nb = problem.space.boundary_dofs
    if np.min(g.coeffs[nb]) <= 0.0:
        raise AdmissibilityError("g is not positive on the boundary of D")
    _, trace = find_boundary_seeds(g, mesh, problem.tracer_options(), m=problem.m, return_components=True)
    y = solve_state(g, u, problem.f, problem.space)
    sampler = TraceSampler(problem.space, trace)
    cost = evaluate_cost(y, g, trace, problem.E, problem.cf, problem.delta, problem.epsilon,
                         problem.m, sampler=sampler)
    return OptimizerState(g=g, u=u, y=y, trace=trace, cost=cost, k=k, lam=lam, sampler=sampler)


def initial_state(problem: Problem, g0, u0) -> OptimizerState:
    space = problem.space
    g = problem.project(as_levelset(g0).nodal(space))
    if isinstance(u0, ScalarField):
        u = u0
    else:
        u = space.interpolate(_expr(u0).value)
    report = check_admissibility(g, problem.mesh, problem.E, problem.m)
    if not report.passed:
        raise AdmissibilityError("initial design is not admissible", report=report)
    return evaluate_state(problem, g, u)


def descent_direction(problem: Problem, state: OptimizerState, variant=None) -> DescentDirection:
    variant = variant or problem.variant
    space = problem.space
    p = solve_adjoint(state.g, state.y, state.trace, problem.E, problem.cf, problem.delta,
                      problem.epsilon, problem.m, sampler=state.sampler)
    if variant == "i":
        r = ScalarField(space, -p.coeffs * state.u.coeffs, name="r")
    elif variant == "ii":
        d = solve_control_smoothing(state.g, state.u, p, space)
        r = ScalarField(space, -d.coeffs, name="r")
    else:
        raise ValueError("variant must be 'i' or 'ii'")
    v = ScalarField(space, -p.coeffs, name="v")
    if not np.any(p.coeffs):
        predicted = 0.0
    else:
        q = solve_linearized(state.g, state.u, r, v, problem.f, space)
        predicted = descent_lhs(state.y, q, state.g, state.sampler, problem.E, problem.cf,
                                problem.delta, problem.epsilon, problem.m)
    return DescentDirection(r=r, v=v, variant=variant, predicted=predicted, p=p)


def _thread_count(problem):
    """Worker count for the line search; HAMSHAPE_THREADS caps it."""
    n = max(1, problem.threads)
    env = os.environ.get("HAMSHAPE_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            log.warning("ignoring HAMSHAPE_THREADS=%r", env)
    return n


def line_search(problem: Problem, state: OptimizerState, direction: DescentDirection):
    """Evaluate every step rho^i, i < max_pow; return (best candidate or None,
    all candidates). The best is the lowest cost strictly below the current
    one, ties going to the larger step."""
    space = problem.space
    G, U = state.g.coeffs, state.u.coeffs
    R, V = direction.r.coeffs, direction.v.coeffs
    lams = [problem.rho ** i for i in range(problem.max_pow)]

    def run(i):
        lam = lams[i]
        try:
            g = problem.project(G + lam * R)
            u = ScalarField(space, U + lam * V)
            st = evaluate_state(problem, g, u, k=state.k + 1, lam=lam)
            return Candidate(state.k, i, lam, st.cost, st)
        except (HamshapeError, ValueError) as exc:
            log.warning("k=%d step %d (lambda=%.6g) skipped: %s", state.k, i, lam, exc)
            return Candidate(state.k, i, lam, None, error=f"{type(exc).__name__}: {exc}")

    n = _thread_count(problem)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            cands = list(pool.map(run, range(len(lams))))
    else:
        cands = [run(i) for i in range(len(lams))]
    best = None
    for c in cands:
        if c.cost is None or not c.cost.total < state.cost.total:
            continue
        if best is None or c.cost.total < best.cost.total:
            best = c
    if best is not None:
        best.accepted = True
    return best, cands


def optimize(problem: Problem, g0, u0, callback=None) -> RunHistory:
    """Outer loop; stops on |delta J| < tol, an unsuccessful line search, a
    vanishing adjoint or the iteration cap."""
    state = initial_state(problem, g0, u0)
    states, cands_all, improving = [state], [], []
    if callback:
        callback("state", state)
    reason = "max_iter"
    for k in range(problem.max_iter):
        direction = descent_direction(problem, state)
        if direction.is_zero:
            reason = "stationary"
            break
        best, cands = line_search(problem, state, direction)
        cands_all.extend(cands)
        for c in cands:
            if c.cost is not None and c.cost.total < state.cost.total:
                improving.append((k, c.sub_step, c.lam, c.state.g.coeffs.copy()))
            elif not c.accepted:
                c.state = None
        if callback:
            callback("candidates", cands)
        for c in cands:
            if not c.accepted:
                c.state = None
        if best is None:
            reason = "no_decrease"
            break
        new = best.state
        if problem.E is not None:
            inE = problem.E.contains(problem.space.dof_coords)
            if np.any(new.g.coeffs[inE] > 0.0):
                raise AdmissibilityError("projection failed to keep g <= 0 on E")
        states.append(new)
        if callback:
            callback("state", new)
        done = abs(new.cost.total - state.cost.total) < problem.tol
        state = new
        if done:
            reason = "tol"
            break
    return RunHistory(states=states, candidates=cands_all, stop_reason=reason, improving=improving)
