"""Damped Newton and pseudo-transient continuation for sparse systems."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when every strategy stagnates; carries the best iterate."""

    def __init__(self, message: str, best=None, history=None):
        super().__init__(message)
        self.best = best
        self.history = list(history or [])


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    measure: float
    history: list = field(default_factory=list)
    reason: str = ""


def _solve(J: sp.spmatrix, rhs: np.ndarray) -> Optional[np.ndarray]:
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            dx = spla.spsolve(J.tocsc(), rhs)
    except (RuntimeError, ValueError, spla.MatrixRankWarning):
        return None
    if not np.all(np.isfinite(dx)):
        return None
    return dx


def damped_newton(residual: Callable, jacobian: Callable, x0: np.ndarray, *,
                  measure: Callable, tol: float, max_iter: int = 50,
                  merit: Optional[Callable] = None, project: Optional[Callable] = None,
                  min_step: float = 2.0 ** -30) -> NewtonResult:
    """Newton iteration with step halving until the merit decreases.

    ``measure(r)`` is the convergence quantity compared against ``tol``;
    ``merit(x, r)`` defaults to 0.5 |r|^2. ``project`` maps an accepted
    iterate back into an admissible set.
    """
    if merit is None:
        def merit(x, r):
            return 0.5 * float(r @ r)
    x = np.array(x0, dtype=float)
    r = residual(x)
    m = measure(r)
    history = [m]
    if m <= tol:
        return NewtonResult(x, True, 0, m, history, "converged")
    f = merit(x, r)
    for it in range(1, max_iter + 1):
        dx = _solve(jacobian(x), -r)
        if dx is None:
            return NewtonResult(x, False, it - 1, m, history, "singular Jacobian")
        step = 1.0
        while step >= min_step:
            trial = x + step * dx
            if project is not None:
                trial = project(trial)
            r_trial = residual(trial)
            if np.all(np.isfinite(r_trial)):
                f_trial = merit(trial, r_trial)
                if f_trial < f:
                    break
            step *= 0.5
        else:
            return NewtonResult(x, False, it - 1, m, history, "line search stagnated")
        x, r, f = trial, r_trial, f_trial
        m = measure(r)
        history.append(m)
        if m <= tol:
            return NewtonResult(x, True, it, m, history, "converged")
    return NewtonResult(x, False, max_iter, m, history, "iteration limit")


def pseudo_transient(residual: Callable, jacobian: Callable, x0: np.ndarray, *,
                     measure: Callable, tol: float, scale: np.ndarray, dt0: float = 1e-2,
                     max_iter: int = 200, project: Optional[Callable] = None,
                     dt_max: float = 1e12) -> NewtonResult:
    """Linearly implicit pseudo-time stepping on x' = -F(x) with the
    switched-evolution-relaxation step rule dt_k+1 = dt_k |F_k-1| / |F_k|."""
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.linalg.norm(r))
    m = measure(r)
    history = [m]
    dt = dt0
    D = sp.diags(scale)
    for it in range(1, max_iter + 1):
        if m <= tol:
            return NewtonResult(x, True, it - 1, m, history, "converged")
        dx = _solve(D / dt + jacobian(x), -r)
        if dx is None:
            dt *= 0.1
            continue
        trial = x + dx
        if project is not None:
            trial = project(trial)
        r_trial = residual(trial)
        if not np.all(np.isfinite(r_trial)):
            dt *= 0.1
            continue
        new_norm = float(np.linalg.norm(r_trial))
        dt = min(dt_max, dt * norm / max(new_norm, 1e-300))
        x, r, norm = trial, r_trial, new_norm
        m = measure(r)
        history.append(m)
    return NewtonResult(x, m <= tol, max_iter, m, history,
                        "converged" if m <= tol else "iteration limit")


def epsilon_schedule(start: float = 1e-2, end: float = 1e-8, stages: int = 6) -> np.ndarray:
    if stages < 1:
        raise ValueError("need at least one regularization stage")
    if stages == 1:
        return np.array([end])
    return np.geomspace(start, end, stages)
