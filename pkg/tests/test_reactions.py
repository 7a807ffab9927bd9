import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pqgalerkin.problem import ProblemSpec, conjugate
from pqgalerkin.reactions import (ExampleReactionParams, Reaction, admissible_r,
                                  beta_upper_bound, build_example_reactions, constant_reaction,
                                  cross_exponents, example_problem, expression_reaction,
                                  finite_difference_partials, young_slack)

SPEC = ProblemSpec(1.8, 1.3, 1.7, 1.2, 0.3, 0.3)


def point(s=0.0, t=0.0, xi=(0.0, 0.0), nu=(0.0, 0.0), x=(0.3, 0.4)):
    return (np.array([x], float), np.array([s], float), np.array([t], float),
            np.array([xi], float), np.array([nu], float))


def reactions(**kw):
    f1, f2, _ = build_example_reactions(ExampleReactionParams(**kw), SPEC)
    return f1, f2


def test_f1_vanishes_at_origin():
    f1, f2 = reactions()
    assert f1(*point()) == pytest.approx(0.0, abs=0)
    assert f2(*point()) == pytest.approx(0.0, abs=0)


def test_f1_at_one():
    f1, _ = reactions(alpha1=1.5)
    # |1|^{-0.5} * 1 + (1/2) * 0
    assert f1(*point(s=1.0))[0] == pytest.approx(1.0, abs=1e-14)


def test_first_term_odd():
    f1, _ = reactions(alpha1=1.5)
    # with t = xi = nu = 0 and h = 0 the bracket vanishes, leaving |s|^{a-2}s
    a, b = f1(*point(s=2.0))[0], f1(*point(s=-2.0))[0]
    assert a == pytest.approx(2.0 ** 0.5, rel=1e-14)
    assert a == pytest.approx(-b, abs=1e-12)


def test_example_formula_independent():
    f1, f2 = reactions(alpha1=1.5, alpha2=1.4, beta1=1.1, beta2=1.05,
                       h1=lambda x: np.atleast_2d(x)[:, 0] + 1.0, h2=lambda x: np.full(len(np.atleast_2d(x)), 2.0))
    s, t, xi, nu, x = 0.7, -1.3, (0.2, -0.5), (1.1, 0.4), (0.25, 0.5)
    e1 = 1.7 / conjugate(2 * 1.8 / 0.2)
    e2 = 1.8 / conjugate(2 * 1.7 / 0.3)
    k1 = s / (s * s + 1)
    ref1 = abs(s) ** (-0.5) * s + k1 * (abs(t) ** e1 + np.hypot(*xi) ** 1.1 + np.hypot(*nu) ** e1 + 1.25)
    k2 = t / (t * t + 1)
    ref2 = abs(t) ** (-0.6) * t + k2 * (abs(s) ** e2 + np.hypot(*xi) ** e2 + np.hypot(*nu) ** 1.05 + 2.0)
    args = point(s, t, xi, nu, x)
    assert f1(*args)[0] == pytest.approx(ref1, rel=1e-13)
    assert f2(*args)[0] == pytest.approx(ref2, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(s=st.floats(-1e6, 1e6))
def test_coupling_factor_bounded(s):
    f1, _ = reactions()
    # f1(s, t=1) - f1(s, t=0) = s/(s^2+1) * |1|^e
    d = f1(*point(s=s, t=1.0))[0] - f1(*point(s=s))[0]
    assert abs(d) <= 0.5 + 1e-12


def test_params_validated():
    with pytest.raises(ValueError, match="alpha1"):
        reactions(alpha1=1.9)
    with pytest.raises(ValueError, match="beta2"):
        reactions(beta2=beta_upper_bound(SPEC, 2))
    with pytest.raises(ValueError, match="alpha2"):
        reactions(alpha2=0.9)


def test_default_betas_at_eighty_percent():
    p = ExampleReactionParams().resolved(SPEC)
    assert p.beta1 == pytest.approx(0.8 * SPEC.p1 / conjugate(SPEC.p1_star))
    assert 1.0 <= p.beta1 and 1.0 <= p.beta2


def test_constants_emitted():
    _, _, c = build_example_reactions(ExampleReactionParams(h1=lambda x: np.full(len(x), -2.0)), SPEC)
    x = np.array([[0.5, 0.5]])
    assert (c.C1, c.C2) == (1.0, 1.0)
    assert c.sigma1(x)[0] == pytest.approx(5.0)
    assert c.sigma2(x)[0] == pytest.approx(3.0)
    assert c.gamma1(x)[0] > 2.0


def test_young_slack_is_max():
    x, P, eps = 1.3, 1.8, 0.3
    a = np.geomspace(1e-6, 1e6, 200001)
    assert young_slack(x, P, eps) == pytest.approx(np.max(a ** x - eps * a ** P), rel=1e-6)
    with pytest.raises(ValueError):
        young_slack(2.0, 1.8, 0.3)


def test_admissible_r_inside_window():
    r1, r2 = admissible_r(SPEC, ExampleReactionParams())
    assert 1 < r1 < SPEC.p1_star and 1 < r2 < SPEC.p2_star
    e1, e2 = cross_exponents(SPEC, ExampleReactionParams(r1=r1, r2=r2))
    # r_i < p_i* makes the cross exponents strictly smaller than the literal ones
    assert e1 < SPEC.p2 / conjugate(SPEC.p1_star)
    assert e2 < SPEC.p1 / conjugate(SPEC.p2_star)
    _, _, c = build_example_reactions(ExampleReactionParams(r1=r1, r2=r2), SPEC)
    assert (c.r1, c.s1, c.D1) == (r1, r1, 1.0)
    with pytest.raises(ValueError, match="r1"):
        build_example_reactions(ExampleReactionParams(r1=SPEC.p1_star + 1, r2=r2), SPEC)


def test_fd_square():
    r = finite_difference_partials(Reaction(lambda x, s, t, xi, nu: s ** 2))
    ds, dt, dxi, dnu = r.partials(*point(s=3.0))
    assert ds[0] == pytest.approx(6.0, abs=1e-5)
    assert dt[0] == pytest.approx(0.0, abs=1e-9)


def test_fd_constant():
    r = finite_difference_partials(constant_reaction(4.0))
    ds, dt, dxi, dnu = r.partials(*point(s=1.0, t=2.0, xi=(1, 1), nu=(3, 4)))
    for d in (ds, dt, dxi, dnu):
        assert np.all(np.abs(d) <= 1e-9)


def test_fd_matches_analytic_dt(rng):
    f1, _ = reactions()
    e1, _ = cross_exponents(SPEC, ExampleReactionParams())
    fd = finite_difference_partials(Reaction(f1.evaluate))
    for _ in range(10):
        s, t = rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0) * rng.choice([-1, 1])
        args = point(s=s, t=t, xi=rng.normal(size=2), nu=rng.normal(size=2))
        exact = s / (s * s + 1) * e1 * abs(t) ** (e1 - 1) * np.sign(t)
        assert fd.partials(*args)[1][0] == pytest.approx(exact, rel=1e-4)
        assert f1.partials(*args)[1][0] == pytest.approx(exact, rel=1e-12)


def test_analytic_partials_match_fd(rng):
    f1, f2 = reactions()
    n = 50
    x = rng.uniform(0, 1, (n, 2))
    s, t = rng.uniform(0.1, 2, n) * rng.choice([-1, 1], n), rng.uniform(0.1, 2, n)
    xi, nu = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    for f in (f1, f2):
        exact = f.partials(x, s, t, xi, nu)
        approx = finite_difference_partials(Reaction(f.evaluate)).partials(x, s, t, xi, nu)
        for a, b in zip(exact, approx):
            assert np.allclose(a, b, rtol=1e-5, atol=1e-6)


def test_expression_reaction():
    r = expression_reaction("s*t + xi1 - nu2 + x")
    x, s, t, xi, nu = point(s=2.0, t=3.0, xi=(1.0, 9.0), nu=(9.0, 4.0), x=(0.5, 0.1))
    assert r(x, s, t, xi, nu)[0] == pytest.approx(6 + 1 - 4 + 0.5)
    ds, dt, dxi, dnu = r.partials(x, s, t, xi, nu)
    assert ds[0] == pytest.approx(3.0, abs=1e-6)
    assert dnu[0, 1] == pytest.approx(-1.0, abs=1e-6)


def test_example_problem_defaults():
    spec, constants = example_problem(0.3, 0.3)
    assert spec.f1 is not None and spec.f2 is not None
    assert (spec.p1, spec.q1, spec.p2, spec.q2) == (1.8, 1.3, 1.7, 1.2)
