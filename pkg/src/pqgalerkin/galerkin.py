"""Level-by-level Galerkin solves and the cross-level diagnostics.

Each level's nonlinear system is solved by damped Newton on the
eps-regularized residual (eps continuation), iterates are kept inside the
a-priori ball by radial rescaling, and pseudo-transient continuation is the
fallback when Newton stalls. :func:`run_hierarchy` chains the levels by
prolongation and measures how the sequence behaves: boundedness by R,
residual pairings against a fixed battery, the energy pairing against the
finest solution, and the distance to it.

Every cross-level quantity is evaluated on the finest solved level, where the
coarser iterates are represented exactly through prolongation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .femspace import FemFunction, FemSpace, gradient_power_integral, seminorm_W1p, space_of
from .hypotheses import (CheckReport, HypothesisConstants, SamplingPlan, apriori_radius,
                         check_H1, check_H1prime, check_H2)
from .mesh import RefinementHierarchy, prolongate
from .nonlinear import SolverError, damped_newton, epsilon_schedule, pseudo_transient
from .operators import (PairState, competing_vector, jacobian_matrix, reaction_arguments,
                        residual_vector)
from .problem import ProblemSpec
from .reactions import Reaction, source_reaction

log = logging.getLogger(__name__)


class HypothesisFailure(ValueError):
    """A solve was requested without passing hypothesis reports and without override."""


@dataclass(frozen=True)
class LevelSolution:
    state: PairState
    residual_linf: float
    pair_norm: float
    newton_iterations: int
    epsilon_final: float
    inside_ball: bool
    R: float
    tol: float
    history: tuple = ()

    @property
    def level(self) -> int:
        return self.state.level


@dataclass
class SolveReport:
    levels: list = field(default_factory=list)           # LevelSolution per solved level
    R: float = np.inf
    condition_a: list = field(default_factory=list)
    condition_b: list = field(default_factory=list)
    condition_c: list = field(default_factory=list)
    condition_c_prime: list = field(default_factory=list)
    strong_convergence: list = field(default_factory=list)
    energy_gaps: list = field(default_factory=list)
    lambda_estimates: dict = field(default_factory=dict)
    hypothesis_reports: list = field(default_factory=list)
    failed_level: Optional[int] = None
    failure: str = ""

    CSV_HEADER = ("level", "dofs", "pair_norm", "R", "residual_linf", "condition_b_max",
                  "condition_c", "condition_c_prime", "strong_convergence")

    @property
    def succeeded(self) -> bool:
        return self.failed_level is None

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_HEADER)]
        for j, sol in enumerate(self.levels):
            row = (sol.level, 2 * sol.state.space.dim, repr(sol.pair_norm), repr(self.R),
                   repr(sol.residual_linf), repr(self.condition_b[j]), repr(self.condition_c[j]),
                   repr(self.condition_c_prime[j]), repr(self.strong_convergence[j]))
            lines.append(",".join(str(v) for v in row))
        if self.failed_level is not None:
            lines.append(f"# failed at level {self.failed_level}: {self.failure}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- helpers

def hat_seminorms(space: FemSpace, p: float) -> np.ndarray:
    """||phi_k||_{1,p} for every interior hat function."""
    G2 = (space.Gx.multiply(space.Gx) + space.Gy.multiply(space.Gy)).tocsc()
    G2.data = G2.data ** (p / 2.0)
    return (G2.T @ space.mesh.areas) ** (1.0 / p)


def _scales(spec: ProblemSpec, space: FemSpace) -> np.ndarray:
    return np.concatenate([hat_seminorms(space, spec.p1), hat_seminorms(space, spec.p2)])


def residual_linf(spec: ProblemSpec, state: PairState) -> float:
    """max_k |<residual, phi_k>| / ||phi_k||_{1,p_i} over both equations."""
    r = residual_vector(spec, state.space, state.vector)
    return float(np.max(np.abs(r) / _scales(spec, state.space), initial=0.0))


def _pair_norm_vec(spec, space, y):
    n = space.dim
    return (seminorm_W1p(FemFunction(space, y[:n]), spec.p1)
            + seminorm_W1p(FemFunction(space, y[n:]), spec.p2))


def energy_identity(spec: ProblemSpec, state: PairState):
    """Both sides of ||u||_{1,p1}^p1 = mu1 ||u||_{1,q1}^q1 + int N_f1(u,v) u and
    the analogous identity for v, computed from norms and quadrature."""
    space = state.space
    u, v = state.u, state.v
    out = []
    for f, w, p, q, mu in ((spec.f1, u, spec.p1, spec.q1, spec.mu1),
                           (spec.f2, v, spec.p2, spec.q2, spec.mu2)):
        lhs = gradient_power_integral(w, p)
        rhs = mu * gradient_power_integral(w, q)
        if f is not None:
            vals = f(*reaction_arguments(space, u.coeffs, v.coeffs))
            rhs += float(space.quad_weights @ (np.asarray(vals) * w.quadrature_values()))
        out.append((lhs, rhs))
    return out


def energy_gap(spec: ProblemSpec, state: PairState) -> float:
    return max(abs(lhs - rhs) for lhs, rhs in energy_identity(spec, state))


def _require_hypotheses(hypotheses, override: bool):
    if override:
        return
    if hypotheses is None:
        raise HypothesisFailure("no hypothesis reports supplied; pass reports or set override")
    failed = [r.hypothesis for r in hypotheses if not r.passed]
    if failed:
        raise HypothesisFailure(f"hypothesis checks failed: {', '.join(failed)}")


def project_to_ball(spec: ProblemSpec, space: FemSpace, R: float):
    """Radial rescaling onto {pair_norm <= R}; the pair norm is 1-homogeneous."""
    if not np.isfinite(R):
        return None

    def project(y):
        nrm = _pair_norm_vec(spec, space, y)
        return y * (R / nrm) if nrm > R else y

    return project


# ---------------------------------------------------------------- one level

def solve_level(spec: ProblemSpec, hierarchy: RefinementHierarchy, level: int,
                init: Optional[PairState] = None, R: float = np.inf, tol: float = 1e-8, *,
                hypotheses: Optional[Sequence[CheckReport]] = None, override: bool = False,
                stages=None, max_iter: int = 50, polish: int = 3) -> LevelSolution:
    """Solve the level's Galerkin system to residual_linf <= tol inside the ball of radius R."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not R > 0:
        raise ValueError("R must be positive")
    _require_hypotheses(hypotheses, override)
    space = space_of(hierarchy.mesh(level))
    if init is None:
        y = np.zeros(2 * space.dim)
    else:
        if init.level != level:
            raise ValueError(f"initial state lives on level {init.level}, not {level}")
        y = init.vector.copy()
    if stages is None:
        stages = epsilon_schedule()
    scales = _scales(spec, space)
    lumped = np.concatenate([space.hat_integrals, space.hat_integrals])
    project = project_to_ball(spec, space, R)
    if project is not None:
        y = project(y)

    def measure(r):
        return float(np.max(np.abs(r) / scales, initial=0.0))

    history = []
    iterations = 0

    def attempt(res, jac, y0, stage_tol):
        nonlocal iterations
        out = damped_newton(res, jac, y0, measure=measure, tol=stage_tol,
                            max_iter=max_iter, project=project)
        iterations += out.iterations
        history.extend(out.history)
        if out.converged:
            return out
        log.info("level %d: Newton stopped (%s) at %.3e; pseudo-transient fallback",
                 level, out.reason, out.measure)
        pt = pseudo_transient(res, jac, out.x, measure=measure, tol=stage_tol,
                              scale=lumped, project=project)
        history.extend(pt.history)
        if pt.converged:
            return pt
        again = damped_newton(res, jac, pt.x, measure=measure, tol=stage_tol,
                              max_iter=max_iter, project=project)
        iterations += again.iterations
        history.extend(again.history)
        return again if again.measure <= min(out.measure, pt.measure) else (
            pt if pt.measure <= out.measure else out)

    for eps in stages:
        out = attempt(lambda x, e=eps: residual_vector(spec, space, x, e),
                      lambda x, e=eps: jacobian_matrix(spec, space, x, e),
                      y, max(tol, float(eps)))
        y = out.x
    eps_final = float(stages[-1])

    def res0(x):
        return residual_vector(spec, space, x, 0.0)

    def jac_final(x):
        return jacobian_matrix(spec, space, x, eps_final)

    out = attempt(res0, jac_final, y, tol)
    y = out.x
    if out.measure > tol:
        raise SolverError(f"level {level}: Newton and pseudo-transient continuation stagnated "
                          f"at residual {out.measure:.3e} (tol {tol:g})",
                          best=PairState.from_vector(space, y), history=history)
    if polish > 0:
        extra = damped_newton(res0, jac_final, y, measure=measure, tol=0.0,
                              max_iter=polish, project=project)
        if extra.measure <= out.measure:
            y = extra.x
            iterations += extra.iterations
    state = PairState.from_vector(space, y)
    norm = state.pair_norm(spec)
    return LevelSolution(state=state, residual_linf=measure(res0(y)), pair_norm=norm,
                         newton_iterations=iterations, epsilon_final=eps_final,
                         inside_ball=bool(norm <= R), R=float(R), tol=tol,
                         history=tuple(history))


# ---------------------------------------------------------------- diagnostics

def prolong_state(hierarchy: RefinementHierarchy, state: PairState, level: int) -> PairState:
    if level == state.level:
        return state
    space = space_of(hierarchy.mesh(level))
    u = prolongate(hierarchy, state.u.coeffs, state.level, level)
    v = prolongate(hierarchy, state.v.coeffs, state.level, level)
    return PairState(FemFunction(space, u), FemFunction(space, v))


def default_battery(hierarchy: RefinementHierarchy, level: int, modes: int = 3):
    """Fixed test functions: the level-0 hats and the interpolants of
    sin(j pi x) sin(k pi y), 1 <= j, k <= modes, all on ``level``."""
    space = space_of(hierarchy.mesh(level))
    out = []
    coarse = space_of(hierarchy.mesh(0))
    for k in range(coarse.dim):
        c = prolongate(hierarchy, coarse.basis_function(k).coeffs, 0, level)
        out.append(FemFunction(space, c))
    for j in range(1, modes + 1):
        for k in range(1, modes + 1):
            out.append(space.interpolate(
                lambda x, y, j=j, k=k: np.sin(j * np.pi * x) * np.sin(k * np.pi * y)))
    return out


def _battery_max(r: np.ndarray, n: int, battery) -> float:
    B = np.column_stack([f.coeffs for f in battery]) if battery else np.zeros((n, 0))
    return float(max(np.max(np.abs(r[:n] @ B), initial=0.0), np.max(np.abs(r[n:] @ B), initial=0.0)))


def check_weak_solution(solution, spec: ProblemSpec, test_battery,
                        hierarchy: Optional[RefinementHierarchy] = None) -> float:
    """max over the battery of |<residual, (phi, 0)>| and |<residual, (0, phi)>|.

    Battery functions on a coarser level are prolonged to the solution's
    level; on a finer level the solution is prolonged to theirs (which then
    requires ``hierarchy``).
    """
    state = solution.state if isinstance(solution, LevelSolution) else solution
    if not test_battery:
        return 0.0
    target = max(max(f.level for f in test_battery), state.level)
    if target != state.level or any(f.level != target for f in test_battery):
        if hierarchy is None:
            raise ValueError("battery on other levels needs the refinement hierarchy")
        state = prolong_state(hierarchy, state, target)
        test_battery = [f if f.level == target else FemFunction(
            state.space, prolongate(hierarchy, f.coeffs, f.level, target)) for f in test_battery]
    r = residual_vector(spec, state.space, state.vector)
    return _battery_max(r, state.space.dim, test_battery)


def level_basis(hierarchy: RefinementHierarchy, level: int):
    space = space_of(hierarchy.mesh(level))
    return [space.basis_function(k) for k in range(space.dim)]


def cross_level_weak_residual(hierarchy: RefinementHierarchy, solution: LevelSolution,
                              spec: ProblemSpec) -> float:
    """Residual of the solution against every hat function of the next finer level."""
    fine = solution.level + 1
    state = prolong_state(hierarchy, solution.state, fine)
    r = residual_vector(spec, state.space, state.vector)
    return float(np.max(np.abs(r), initial=0.0))


def _diagnostics(report: SolveReport, spec: ProblemSpec, hierarchy: RefinementHierarchy,
                 battery_modes: int):
    sols = report.levels
    if not sols:
        return
    L = sols[-1].level
    ref = sols[-1].state
    space = ref.space
    n = space.dim
    battery = default_battery(hierarchy, L, battery_modes)
    for sol in sols:
        st = prolong_state(hierarchy, sol.state, L)
        y = st.vector
        d = y - ref.vector
        r = residual_vector(spec, space, y)
        a = np.concatenate([competing_vector(space, y[:n], spec.p1, spec.q1, spec.mu1),
                            competing_vector(space, y[n:], spec.p2, spec.q2, spec.mu2)])
        report.condition_a.append(sol.pair_norm)
        report.condition_b.append(_battery_max(r, n, battery))
        report.condition_c.append(float(r @ d))
        report.condition_c_prime.append(float(a @ d))
        report.strong_convergence.append(
            seminorm_W1p(FemFunction(space, d[:n]), spec.p1)
            + seminorm_W1p(FemFunction(space, d[n:]), spec.p2))
        report.energy_gaps.append(energy_gap(spec, sol.state))


# ---------------------------------------------------------------- certification

def certify(spec: ProblemSpec, constants: HypothesisConstants, hierarchy: RefinementHierarchy,
            level: int, sampler: Optional[SamplingPlan] = None, eigen_levels=None,
            eigen_tol: float = 1e-10):
    """Hypothesis reports, eigenvalue sequences and the a-priori radius.

    Returns ``(reports, lambdas, R)``; R is None when a report fails.
    """
    from .eigen import eigen_sequence
    from .hypotheses import CoercivityError
    mesh = hierarchy.mesh(level)
    if sampler is None:
        sampler = SamplingPlan.for_mesh(mesh)
    if eigen_levels is None:
        eigen_levels = list(range(max(0, level - 1), level + 1))
    lam = {spec.p1: eigen_sequence(spec.p1, hierarchy, eigen_levels, eigen_tol)}
    if spec.p2 not in lam:
        lam[spec.p2] = eigen_sequence(spec.p2, hierarchy, eigen_levels, eigen_tol)
    reactions = (spec.f1, spec.f2)
    reports = [check_H1(reactions, spec, constants, sampler)]
    if constants.has_strong_growth:
        reports.append(check_H1prime(reactions, spec, constants, sampler))
    reports.append(check_H2(reactions, spec, constants, (lam[spec.p1], lam[spec.p2]), sampler))
    R = None
    if all(r.passed for r in reports):
        constants = constants.with_gamma_norms(mesh)
        try:
            R = apriori_radius(spec, constants, (lam[spec.p1][-1], lam[spec.p2][-1]),
                               mesh.domain_measure)
        except CoercivityError:
            R = None
    return reports, lam, R


# ---------------------------------------------------------------- hierarchy

def _level_list(levels, hierarchy: RefinementHierarchy):
    if isinstance(levels, (int, np.integer)):
        if levels < 2:
            raise ValueError("need at least 2 levels")
        first = hierarchy.max_level - int(levels) + 1
        if first < 0:
            raise ValueError(f"hierarchy has only {hierarchy.max_level + 1} levels")
        return list(range(first, hierarchy.max_level + 1))
    out = [int(v) for v in levels]
    if len(out) < 2:
        raise ValueError("need at least 2 levels")
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError("levels must be strictly increasing")
    for v in out:
        hierarchy.mesh(v)
    return out


def bump_state(space: FemSpace, amplitude: float = 1.0) -> PairState:
    """amplitude * sin(pi x) sin(pi y) in both components."""
    f = space.interpolate(lambda x, y: amplitude * np.sin(np.pi * x) * np.sin(np.pi * y))
    return PairState(f, f)


def run_hierarchy(spec: ProblemSpec, hierarchy: RefinementHierarchy, levels, tol: float = 1e-8, *,
                  constants: Optional[HypothesisConstants] = None, R: Optional[float] = None,
                  hypotheses: Optional[Sequence[CheckReport]] = None, override: bool = False,
                  init: Optional[PairState] = None, sampler: Optional[SamplingPlan] = None,
                  battery_modes: int = 3, **solve_kwargs) -> SolveReport:
    """Solve ``levels`` (a count of finest levels, or explicit indices) in
    sequence, warm-starting each from the prolonged previous solution.

    When ``constants`` are given, the hypotheses are checked on the finest
    level, the eigenvalues estimated and R computed from them.
    """
    lv = _level_list(levels, hierarchy)
    report = SolveReport()
    if constants is not None:
        reports, lam, R_cert = certify(spec, constants, hierarchy, lv[-1], sampler)
        report.hypothesis_reports = list(reports)
        report.lambda_estimates = lam
        hypotheses = list(reports) if hypotheses is None else hypotheses
        if R is None and R_cert is not None:
            R = R_cert
    _require_hypotheses(hypotheses, override)
    report.R = float(np.inf if R is None else R)
    state = init
    for level in lv:
        if state is not None and state.level != level:
            state = prolong_state(hierarchy, state, level)
        try:
            sol = solve_level(spec, hierarchy, level, state, report.R, tol,
                              hypotheses=hypotheses, override=override, **solve_kwargs)
        except SolverError as exc:
            report.failed_level = level
            report.failure = str(exc)
            break
        log.info("level %d: dofs %d, pair_norm %.6g, residual %.3e, %d Newton steps",
                 level, 2 * sol.state.space.dim, sol.pair_norm, sol.residual_linf,
                 sol.newton_iterations)
        report.levels.append(sol)
        state = sol.state
    _diagnostics(report, spec, hierarchy, battery_modes)
    return report


# ---------------------------------------------------------------- manufactured data

def manufactured_source(p: float, mu: float = 0.0, q: Optional[float] = None,
                        k: float = np.pi) -> Reaction:
    """Reaction g(x) with -div((|grad w|^{p-2} - mu |grad w|^{q-2}) grad w) = g for
    w = sin(k x) sin(k y).

    With m = |grad w| and a(m) the flux coefficient, the divergence equals
    a(m) lap w + (a'(m)/m) grad w . H grad w, H the Hessian of w.
    """
    if q is None:
        q = p

    def g(points):
        x, y = points[:, 0], points[:, 1]
        sx, cx, sy, cy = np.sin(k * x), np.cos(k * x), np.sin(k * y), np.cos(k * y)
        wx, wy = k * cx * sy, k * sx * cy
        wxx = wyy = -k * k * sx * sy
        wxy = k * k * cx * cy
        m = np.hypot(wx, wy)
        with np.errstate(divide="ignore", invalid="ignore"):
            a = m ** (p - 2.0) - mu * m ** (q - 2.0)
            da_over_m = (p - 2.0) * m ** (p - 4.0) - mu * (q - 2.0) * m ** (q - 4.0)
            quad = wx * wx * wxx + 2.0 * wx * wy * wxy + wy * wy * wyy
            out = -(a * (wxx + wyy) + da_over_m * quad)
        return np.where(m > 0, out, 0.0)

    return source_reaction(g, name=f"manufactured p={p:g}")
