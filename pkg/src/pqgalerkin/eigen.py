"""First eigenvalue of the r-Laplacian on the discrete space, by inverse
power iteration on the Rayleigh quotient ||grad u||_r^r / ||u||_r^r.

The value computed on a mesh level is the minimum of the quotient over that
level's P1 space (with the space's quadrature for ||u||_r), hence an upper
bound for the continuous eigenvalue that decreases under refinement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .femspace import FemFunction, FemSpace, gradient_power_integral, norm_Lp, space_of
from .mesh import RefinementHierarchy
from .nonlinear import SolverError, damped_newton, epsilon_schedule
from .operators import competing_block, competing_vector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EigenEstimate:
    r: float
    level: int
    lam: float
    minimizer: FemFunction
    iterations: int
    residual: float

    CSV_HEADER = ("r", "level", "lambda", "iterations", "residual")

    def csv_row(self) -> tuple:
        return (repr(self.r), self.level, repr(self.lam), self.iterations, repr(self.residual))


class EigenConvergenceError(SolverError):
    pass


def rayleigh_quotient(f: FemFunction, r: float) -> float:
    den = norm_Lp(f, r) ** r
    if den == 0.0:
        raise ValueError("Rayleigh quotient of the zero function")
    return gradient_power_integral(f, r) / den


def _signed_power(a, e):
    return np.sign(a) * np.abs(a) ** e


def _r_energy(space: FemSpace, r: float, b: np.ndarray, eps: float):
    areas = space.mesh.areas

    def energy(w, _grad=None):
        gx, gy = space.Gx @ w, space.Gy @ w
        return float(areas @ (eps * eps + gx * gx + gy * gy) ** (r / 2.0)) / r - float(b @ w)

    return energy


def solve_r_poisson(space: FemSpace, b: np.ndarray, r: float, w0: np.ndarray, *,
                    tol: float = 1e-12, stages=None, max_iter: int = 50) -> np.ndarray:
    """Discrete solution of -Delta_r w = b (b given as pairings with hat functions).

    The problem is the minimization of a convex energy; each regularization
    stage runs Newton with an energy line search, and a last stage polishes
    the unregularized equation with the finest-stage Hessian.
    """
    if stages is None:
        stages = epsilon_schedule()
    bnorm = max(float(np.max(np.abs(b))), 1e-300)

    def measure(res):
        return float(np.max(np.abs(res))) / bnorm

    w = np.array(w0, dtype=float)
    for eps in stages:
        out = damped_newton(
            lambda x, e=eps: competing_vector(space, x, r, r, 0.0, e) - b,
            lambda x, e=eps: competing_block(space, x, r, r, 0.0, e),
            w, measure=measure, tol=max(tol, 1e-3 * eps), max_iter=max_iter,
            merit=_r_energy(space, r, b, eps))
        w = out.x
    eps_h = float(stages[-1])
    out = damped_newton(
        lambda x: competing_vector(space, x, r, r, 0.0, 0.0) - b,
        lambda x: competing_block(space, x, r, r, 0.0, eps_h),
        w, measure=measure, tol=tol, max_iter=max_iter)
    if not out.converged and out.measure > 1e3 * tol:
        raise SolverError(f"r-Poisson solve stalled at relative residual {out.measure:.3e} "
                          f"({out.reason})", best=out.x, history=out.history)
    return out.x


def _load(space: FemSpace, u: np.ndarray, r: float) -> np.ndarray:
    """Pairings of |u|^{r-2} u with the hat functions."""
    return space.Q.T @ (space.quad_weights * _signed_power(space.Q @ u, r - 1.0))


def _normalize(f: FemFunction, r: float) -> FemFunction:
    return f * (1.0 / norm_Lp(f, r))


def estimate_lambda1(r: float, hierarchy: RefinementHierarchy, level: int, tol: float = 1e-10,
                     max_iter: int = 500, initial: FemFunction | None = None) -> EigenEstimate:
    """Inverse power iteration: solve -Delta_r w = |u_k|^{r-2} u_k, normalize,
    update the Rayleigh quotient, until its relative change drops below tol."""
    if not r > 1.0:
        raise ValueError(f"exponent must exceed 1, got r = {r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    space = space_of(hierarchy.mesh(level))
    if space.dim == 0:
        raise ValueError(f"level {level} has no interior vertices")
    if initial is None:
        u = space.interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    else:
        u = initial
    u = _normalize(u, r)
    lam = rayleigh_quotient(u, r)
    best = (lam, u)
    change = np.inf
    w = None
    for it in range(1, max_iter + 1):
        b = _load(space, u.coeffs, r)
        guess = lam ** (-1.0 / (r - 1.0)) * u.coeffs
        stages = epsilon_schedule() if w is None else epsilon_schedule(stages=1)
        try:
            w = solve_r_poisson(space, b, r, guess, stages=stages)
        except SolverError:
            if len(stages) == 1:
                w = solve_r_poisson(space, b, r, guess)
            else:
                raise
        u = _normalize(FemFunction(space, w), r)
        new_lam = rayleigh_quotient(u, r)
        change = abs(new_lam - lam) / abs(new_lam)
        lam = new_lam
        if lam < best[0]:
            best = (lam, u)
        log.debug("r=%g level=%d it=%d lambda=%.15g change=%.3e", r, level, it, lam, change)
        if change < tol:
            lam_b, u_b = best
            return EigenEstimate(r, level, rayleigh_quotient(u_b, r), u_b, it, change)
    lam_b, u_b = best
    raise EigenConvergenceError(
        f"inverse iteration did not reach tol {tol:g} in {max_iter} steps "
        f"(last relative change {change:.3e})",
        best=EigenEstimate(r, level, lam_b, u_b, max_iter, change))


def eigen_sequence(r: float, hierarchy: RefinementHierarchy, levels, tol: float = 1e-10):
    """Estimates on several levels, each started from the prolonged previous minimizer."""
    from .mesh import prolongate
    out = []
    prev = None
    for level in levels:
        init = None
        if prev is not None and prev.level <= level:
            c = prolongate(hierarchy, prev.minimizer.coeffs, prev.level, level)
            init = FemFunction(space_of(hierarchy.mesh(level)), c)
        prev = estimate_lambda1(r, hierarchy, level, tol=tol, initial=init)
        out.append(prev)
    return out
