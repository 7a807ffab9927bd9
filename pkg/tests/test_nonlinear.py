import numpy as np
import pytest
import scipy.sparse as sp

from pqgalerkin.nonlinear import SolverError, damped_newton, epsilon_schedule, pseudo_transient


def cubic_system():
    # x_i^3 + x_i - b_i = 0, diagonal and monotone
    b = np.array([1.0, -2.0, 10.0, 0.5])

    def F(x):
        return x ** 3 + x - b

    def J(x):
        return sp.diags(3 * x ** 2 + 1)

    return F, J, b


def maxabs(r):
    return float(np.max(np.abs(r)))


def test_newton_converges_quadratically():
    F, J, b = cubic_system()
    out = damped_newton(F, J, np.zeros(4), measure=maxabs, tol=1e-13)
    assert out.converged and out.reason == "converged"
    assert maxabs(F(out.x)) <= 1e-13
    h = out.history
    assert h[-1] <= 1e-13 and len(h) == out.iterations + 1
    # tail ratio well below linear convergence
    assert h[-1] <= h[-2] ** 1.5 * 10


def test_newton_already_converged():
    F, J, b = cubic_system()
    x = np.cbrt(b)   # not a root, just a start
    root = damped_newton(F, J, x, measure=maxabs, tol=1e-14).x
    out = damped_newton(F, J, root, measure=maxabs, tol=1e-10)
    assert out.iterations == 0 and out.converged


def test_newton_damping_needed():
    # arctan: undamped Newton from |x| > 1.39 diverges
    F = lambda x: np.arctan(x)
    J = lambda x: sp.diags(1.0 / (1.0 + x ** 2))
    out = damped_newton(F, J, np.array([5.0]), measure=maxabs, tol=1e-12)
    assert out.converged and abs(out.x[0]) < 1e-12


def test_newton_singular_jacobian():
    F = lambda x: x - 1.0
    J = lambda x: sp.csr_matrix((1, 1))
    out = damped_newton(F, J, np.array([0.0]), measure=maxabs, tol=1e-12)
    assert not out.converged and out.reason == "singular Jacobian"


def test_newton_iteration_limit():
    F, J, _ = cubic_system()
    out = damped_newton(F, J, np.full(4, 100.0), measure=maxabs, tol=1e-14, max_iter=2)
    assert not out.converged and out.reason == "iteration limit" and out.iterations == 2


def test_newton_line_search_stagnation():
    # wrong-sign Jacobian: every step increases the merit
    F = lambda x: x.copy()
    J = lambda x: sp.diags(-np.ones_like(x))
    out = damped_newton(F, J, np.array([1.0]), measure=maxabs, tol=1e-12)
    assert not out.converged and out.reason == "line search stagnated"
    assert out.x[0] == 1.0


def test_newton_projection_respected():
    F, J, _ = cubic_system()
    proj = lambda x: np.clip(x, -1.0, 1.0)
    out = damped_newton(F, J, np.zeros(4), measure=maxabs, tol=1e-13, project=proj)
    assert np.all(np.abs(out.x) <= 1.0)


def test_pseudo_transient_reaches_root():
    F, J, b = cubic_system()
    out = pseudo_transient(F, J, np.full(4, 50.0), measure=maxabs, tol=1e-10, scale=np.ones(4))
    assert out.converged and maxabs(F(out.x)) <= 1e-10


def test_pseudo_transient_limit():
    F, J, b = cubic_system()
    out = pseudo_transient(F, J, np.full(4, 50.0), measure=maxabs, tol=1e-14, scale=np.ones(4),
                           dt0=1e-8, max_iter=3)
    assert not out.converged and out.iterations == 3


def test_epsilon_schedule():
    s = epsilon_schedule()
    assert len(s) == 6 and s[0] == pytest.approx(1e-2) and s[-1] == pytest.approx(1e-8)
    assert np.all(np.diff(np.log10(s)) == pytest.approx(-1.2))
    assert list(epsilon_schedule(stages=1)) == [1e-8]
    with pytest.raises(ValueError):
        epsilon_schedule(stages=0)


def test_solver_error_carries_best():
    e = SolverError("x", best=np.ones(2), history=[1.0, 0.5])
    assert np.array_equal(e.best, np.ones(2)) and e.history == [1.0, 0.5]
