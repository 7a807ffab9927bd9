from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from pqgalerkin.femspace import FemFunction, gradient_power_integral, seminorm_W1p, space_of
from pqgalerkin.hypotheses import h1_majorants
from pqgalerkin.mesh import unit_square_hierarchy
from pqgalerkin.operators import (PairState, apply_competing, assemble_nemytskii,
                                  competing_vector, jacobian, nonmonotonicity_root,
                                  pairing_with_function, probe_nonmonotonicity, residual_A)
from pqgalerkin.problem import ProblemSpec
from pqgalerkin.reactions import (ExampleReactionParams, Reaction, _example_pair,
                                  constant_reaction, example_problem, source_reaction)

from test_femspace import sub_centroids


@pytest.fixture(scope="module")
def spaces():
    h = unit_square_hierarchy(2)
    return [space_of(h.mesh(k)) for k in range(3)]


def random_function(space, rng, scale=1.0):
    return FemFunction(space, scale * rng.standard_normal(space.dim))


def element_gradients(mesh, values):
    """Gradients from the vertex coordinates, solving the 2x2 system per triangle."""
    out = np.empty((mesh.n_triangles, 2))
    for e, tri in enumerate(mesh.triangles):
        P = mesh.vertices[tri]
        B = np.array([P[1] - P[0], P[2] - P[0]])
        out[e] = np.linalg.solve(B, [values[tri[1]] - values[tri[0]], values[tri[2]] - values[tri[0]]])
    return out


def brute_competing(f, p, q, mu):
    m = f.mesh
    vals = f.vertex_values()
    full = np.zeros(m.n_vertices)
    g = element_gradients(m, vals)
    for e, tri in enumerate(m.triangles):
        n = np.linalg.norm(g[e])
        if n == 0:
            continue
        flux = (n ** (p - 2) - mu * n ** (q - 2)) * g[e]
        for a in range(3):
            hat = np.zeros(m.n_vertices)
            hat[tri[a]] = 1.0
            full[tri[a]] += m.areas[e] * flux @ element_gradients_single(m, e, hat)
    return full[m.interior_vertices]


def element_gradients_single(mesh, e, values):
    tri = mesh.triangles[e]
    P = mesh.vertices[tri]
    B = np.array([P[1] - P[0], P[2] - P[0]])
    return np.linalg.solve(B, [values[tri[1]] - values[tri[0]], values[tri[2]] - values[tri[0]]])


def laplace_stiffness(mesh):
    rows, cols, vals = [], [], []
    for e, tri in enumerate(mesh.triangles):
        P = mesh.vertices[tri]
        M = np.column_stack([np.ones(3), P])
        G = np.linalg.inv(M)[1:]            # columns: gradients of the three barycentrics
        K = mesh.areas[e] * G.T @ G
        for a in range(3):
            for b in range(3):
                rows.append(tri[a]); cols.append(tri[b]); vals.append(K[a, b])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_vertices,) * 2)
    inner = mesh.interior_vertices
    return K[inner][:, inner]


def brute_nemytskii(reaction, state, k):
    """Composite centroid rule with k*k sub-triangles per element."""
    m = state.space.mesh
    bary, w = sub_centroids(k)
    tri = m.triangles
    X = m.vertices[tri]
    uv, vv = state.u.vertex_values()[tri], state.v.vertex_values()[tri]
    gu = element_gradients(m, state.u.vertex_values())
    gv = element_gradients(m, state.v.vertex_values())
    out = np.zeros(m.n_vertices)
    ns = len(w)
    for e in range(m.n_triangles):
        f = reaction(bary @ X[e], bary @ uv[e], bary @ vv[e],
                     np.tile(gu[e], (ns, 1)), np.tile(gv[e], (ns, 1)))
        out[tri[e]] += m.areas[e] * (bary * (w * f)[:, None]).sum(axis=0)
    return out[m.interior_vertices]


def smooth_positive_state(space, rng):
    """Random sine series dominated by the first mode, so positive inside."""
    def series(a):
        def g(x, y):
            out = np.sin(np.pi * x) * np.sin(np.pi * y)
            for (j, k), c in a.items():
                out = out + c * np.sin(j * np.pi * x) * np.sin(k * np.pi * y)
            return out
        return g
    modes = [(1, 2), (2, 1), (2, 2), (1, 3), (3, 1)]
    a = {m: 0.04 * rng.uniform(-1, 1) for m in modes}
    b = {m: 0.04 * rng.uniform(-1, 1) for m in modes}
    return PairState(space.interpolate(series(a)) * rng.uniform(0.5, 2.0),
                     space.interpolate(series(b)) * rng.uniform(0.5, 2.0))


# apply_competing

def test_competing_zero(spaces):
    assert np.array_equal(apply_competing(spaces[2].zero(), 1.8, 1.3, 0.7), np.zeros(spaces[2].dim))


def test_competing_linear_case(spaces, rng):
    space = spaces[2]
    f = random_function(space, rng)
    K = laplace_stiffness(space.mesh)
    assert np.allclose(apply_competing(f, 2.0, 1.5, 0.0), K @ f.coeffs, atol=1e-12, rtol=0)
    assert abs(space.stiffness - K).max() <= 1e-12


def test_competing_brute_force(spaces, rng):
    f = random_function(spaces[2], rng)
    got = apply_competing(f, 1.8, 1.3, 0.7)
    ref = brute_competing(f, 1.8, 1.3, 0.7)
    assert np.max(np.abs(got - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))


def test_competing_flat_elements_contribute_nothing(spaces):
    space = spaces[1]
    f = FemFunction(space, np.eye(space.dim)[0])
    r = apply_competing(f, 1.5, 1.2, 0.4)
    assert np.all(np.isfinite(r))
    assert np.allclose(r, brute_competing(f, 1.5, 1.2, 0.4), atol=1e-12)


# pairing

def test_pairing_with_zero(spaces, rng):
    space = spaces[1]
    r = rng.standard_normal(space.dim)
    assert pairing_with_function(r, space.zero()) == 0.0


@pytest.mark.parametrize("mu", [-0.5, 0.0, 0.7])
def test_energy_identity(spaces, rng, mu):
    f = random_function(spaces[2], rng)
    lhs = pairing_with_function(apply_competing(f, 1.8, 1.3, mu), f)
    rhs = seminorm_W1p(f, 1.8) ** 1.8 - mu * seminorm_W1p(f, 1.3) ** 1.3
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_pairing_bilinear(spaces, rng):
    space = spaces[2]
    r = apply_competing(random_function(space, rng), 1.7, 1.2, 0.3)
    g, h = random_function(space, rng), random_function(space, rng)
    a = 2.7
    lhs = pairing_with_function(r, a * g + h)
    assert lhs == pytest.approx(a * pairing_with_function(r, g) + pairing_with_function(r, h), abs=1e-12 * (1 + abs(lhs)))


def test_pairing_level_mismatch(spaces, rng):
    with pytest.raises(ValueError):
        pairing_with_function(np.zeros(spaces[1].dim), spaces[2].zero())
    with pytest.raises(ValueError):
        pairing_with_function(np.zeros(spaces[2].dim), spaces[2].zero(), level=1)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mu=st.floats(-3.0, -1e-3))
def test_monotone_for_negative_mu(seed, mu):
    space = space_of(unit_square_hierarchy(1).mesh(1))
    r = np.random.default_rng(seed)
    f = FemFunction(space, r.standard_normal(space.dim) * r.lognormal())
    g = FemFunction(space, r.standard_normal(space.dim) * r.lognormal())
    d = apply_competing(f, 1.8, 1.3, mu) - apply_competing(g, 1.8, 1.3, mu)
    assert pairing_with_function(d, f - g) >= -1e-10


# non-monotonicity probe

def test_probe_closed_form(spaces):
    f0 = spaces[1].basis_function(0)
    # with mu = A/B the probe is A (t^1.8 - t^1.3), the unit-norm case up to the factor A
    g = f0 * 3.0
    mu = gradient_power_integral(g, 1.8) / gradient_power_integral(g, 1.3)
    pts = dict(probe_nonmonotonicity(g, 1.8, 1.3, mu, [0.5, 1.0, 2.0]))
    A = gradient_power_integral(g, 1.8)
    assert pts[0.5] == pytest.approx(A * (0.5 ** 1.8 - 0.5 ** 1.3), rel=1e-12)
    assert pts[0.5] < 0
    assert pts[1.0] == pytest.approx(0.0, abs=1e-12)
    assert pts[2.0] > 0


def test_probe_negative_mu_positive(spaces, rng):
    f0 = random_function(spaces[2], rng)
    for _, e in probe_nonmonotonicity(f0, 1.8, 1.3, -0.2, np.geomspace(1e-4, 1e4, 50)):
        assert e > 0


def test_probe_sign_change_around_root(spaces, rng):
    for _ in range(20):
        f0 = random_function(spaces[2], rng, scale=rng.lognormal(sigma=2))
        mu = rng.uniform(0.05, 5)
        tstar = nonmonotonicity_root(f0, 1.8, 1.3, mu)
        E = [e for _, e in probe_nonmonotonicity(f0, 1.8, 1.3, mu, np.geomspace(1e-3 * tstar, 1e3 * tstar, 601))]
        assert E[0] < 0 < E[-1]
        assert np.all(np.diff(np.sign(E)) >= 0)     # exactly one crossing


def test_probe_errors(spaces):
    with pytest.raises(ValueError):
        probe_nonmonotonicity(spaces[1].zero(), 1.8, 1.3, 1.0, [1.0])
    f0 = spaces[1].basis_function(0)
    with pytest.raises(ValueError):
        probe_nonmonotonicity(f0, 1.8, 1.3, 1.0, [2.0, 1.0])
    with pytest.raises(ValueError):
        nonmonotonicity_root(f0, 1.8, 1.3, 0.0)


# Nemytskii

def test_nemytskii_zero(spaces, rng):
    st_ = PairState(random_function(spaces[1], rng), random_function(spaces[1], rng))
    zero = Reaction(lambda x, s, t, xi, nu: np.zeros(len(s)))
    assert np.array_equal(assemble_nemytskii(zero, st_), np.zeros(spaces[1].dim))


def test_nemytskii_constant_is_hat_integral(spaces):
    space = spaces[2]
    m = space.mesh
    patch = np.zeros(m.n_vertices)
    np.add.at(patch, m.triangles.ravel(), np.repeat(m.areas, 3))
    got = assemble_nemytskii(constant_reaction(1.0), PairState.zero(space))
    assert np.allclose(got, patch[m.interior_vertices] / 3.0, rtol=1e-13)


def _example_f1(beta1=0.5):
    spec = ProblemSpec(1.8, 1.3, 1.7, 1.2, 0.3, 0.3)
    params = ExampleReactionParams(alpha1=1.5).resolved(spec)
    # beta1 = 0.5 sits below the family's lower bound 1; _example_pair does not validate
    params = ExampleReactionParams(alpha1=1.5, alpha2=params.alpha2, beta1=beta1, beta2=params.beta2)
    return _example_pair(spec, params)[0]


@pytest.mark.parametrize("seed", range(3))
def test_nemytskii_example_refined_quadrature(spaces, seed):
    f1 = _example_f1()
    state = smooth_positive_state(spaces[2], np.random.default_rng(seed))
    got = assemble_nemytskii(f1, state)
    ref = brute_nemytskii(f1, state, 100)
    assert np.linalg.norm(got - ref) <= 1e-4 * np.linalg.norm(ref)


def test_nemytskii_example_rough_state(spaces, rng):
    # |s|^{-1/2} s is singular at s = 0; rough data loses accuracy there
    f1 = _example_f1()
    space = spaces[2]
    state = PairState(FemFunction(space, rng.uniform(0.2, 1, space.dim)),
                      FemFunction(space, rng.uniform(0.2, 1, space.dim)))
    got = assemble_nemytskii(f1, state)
    ref = brute_nemytskii(f1, state, 40)
    assert np.linalg.norm(got - ref) <= 2e-3 * np.linalg.norm(ref)


def test_nemytskii_non_finite_names_point(spaces):
    bad = Reaction(lambda x, s, t, xi, nu: np.where(x[:, 0] > 0.9, np.inf, 0.0), name="bad")
    with pytest.raises(ValueError, match="quadrature point"):
        assemble_nemytskii(bad, PairState.zero(spaces[1]))


def test_nemytskii_growth_bound(spaces, rng):
    spec, constants = example_problem(0.3, 0.3)
    space = spaces[2]
    rhs1, rhs2 = h1_majorants(spec, constants)
    from pqgalerkin.operators import reaction_arguments
    for _ in range(20):
        M = rng.lognormal(sigma=1.5)
        u, v = random_function(space, rng), random_function(space, rng)
        t = M / (seminorm_W1p(u, spec.p1) + seminorm_W1p(v, spec.p2))
        state = PairState(u * t, v * t)
        args = reaction_arguments(space, state.u.coeffs, state.v.coeffs)
        # hats are nonnegative, so |<N f, phi_k>| <= <majorant, phi_k>
        for f, rhs in ((spec.f1, rhs1), (spec.f2, rhs2)):
            bound = space.Q.T @ (space.quad_weights * rhs(*args))
            assert np.all(np.abs(assemble_nemytskii(f, state)) <= bound * (1 + 1e-12))


# residual

def test_residual_zero_state(spaces):
    spec = ProblemSpec(1.8, 1.3, 1.7, 1.2, 0.3, 0.3,
                       Reaction(lambda x, s, t, xi, nu: s * t), Reaction(lambda x, s, t, xi, nu: s + t))
    r = residual_A(PairState.zero(spaces[2]), spec)
    assert not np.any(r.r_u) and not np.any(r.r_v)


def test_residual_mu_additivity(spaces, rng):
    space = spaces[2]
    spec, _ = example_problem(0.3, -0.2)
    state = PairState(random_function(space, rng), random_function(space, rng))
    r0 = residual_A(state, spec)
    r1 = residual_A(state, spec.with_mu(1.1, -0.2))
    qlap = apply_competing(state.u, spec.q1, 1.1, 0.0)
    assert np.allclose(r1.r_u - r0.r_u, -(1.1 - 0.3) * qlap, atol=1e-12)
    assert np.array_equal(r1.r_v, r0.r_v)


def test_residual_manufactured_scalar(spaces):
    from pqgalerkin.galerkin import solve_level
    h = unit_square_hierarchy(2)
    g = source_reaction(lambda x: np.ones(len(x)))
    spec = ProblemSpec(1.8, 1.3, 1.7, 1.2, 0.0, 0.0, g, None)
    sol = solve_level(spec, h, 2, tol=1e-10, override=True)
    r = residual_A(sol.state, spec)
    assert np.max(np.abs(r.r_u)) <= 1e-10
    ref = competing_vector(sol.state.space, sol.state.u.coeffs, 1.8, 1.3, 0.0) \
        - sol.state.space.hat_integrals
    assert np.allclose(r.r_u, ref, atol=1e-15)


# Jacobian

def test_jacobian_linear_case(spaces, rng):
    space = spaces[2]
    lin1 = Reaction(lambda x, s, t, xi, nu: 2.0 * s - t,
                    lambda x, s, t, xi, nu: (np.full(len(s), 2.0), np.full(len(s), -1.0),
                                             np.zeros_like(xi), np.zeros_like(nu)))
    lin2 = Reaction(lambda x, s, t, xi, nu: 0.5 * t,
                    lambda x, s, t, xi, nu: (np.zeros(len(s)), np.full(len(s), 0.5),
                                             np.zeros_like(xi), np.zeros_like(nu)))
    # p = 2 lies outside the validated exponent range, so bypass ProblemSpec
    spec = SimpleNamespace(p1=2.0, q1=1.5, p2=2.0, q2=1.5, mu1=0.0, mu2=0.0, f1=lin1, f2=lin2)
    K, M = laplace_stiffness(space.mesh), space.mass
    ref = sp.bmat([[K - 2.0 * M, M], [None, K - 0.5 * M]]).toarray()
    for _ in range(2):
        state = PairState(random_function(space, rng), random_function(space, rng))
        J = jacobian(state, spec, 0.0).toarray()
        assert np.max(np.abs(J - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_jacobian_finite_difference(spaces, rng):
    space = spaces[2]
    spec, _ = example_problem(0.3, -0.4)
    eps = 1e-8
    for _ in range(5):
        state = PairState(random_function(space, rng), random_function(space, rng))
        y = state.vector
        d = rng.standard_normal(y.size)
        J = jacobian(state, spec, eps)
        h = 1e-6
        plus = residual_A(PairState.from_vector(space, y + h * d), spec, eps).vector
        minus = residual_A(PairState.from_vector(space, y - h * d), spec, eps).vector
        fd = (plus - minus) / (2 * h)
        assert np.linalg.norm(J @ d - fd) <= 1e-5 * np.linalg.norm(fd)


def test_jacobian_symmetric_psd(spaces, rng):
    space = spaces[1]
    spec = ProblemSpec(1.8, 1.3, 1.7, 1.2, 0.0, 0.0)
    for _ in range(5):
        state = PairState(random_function(space, rng), random_function(space, rng))
        J = jacobian(state, spec, 1e-8).toarray()
        assert np.allclose(J, J.T, atol=1e-12 * np.abs(J).max())
        assert np.linalg.eigvalsh(0.5 * (J + J.T)).min() >= -1e-10


def test_jacobian_rejects_negative_eps(spaces):
    spec = ProblemSpec(1.8, 1.3, 1.7, 1.2, 0.0, 0.0)
    with pytest.raises(ValueError):
        jacobian(PairState.zero(spaces[1]), spec, -1.0)


def test_pair_state_level_check(spaces):
    with pytest.raises(ValueError):
        PairState(spaces[1].zero(), spaces[2].zero())
