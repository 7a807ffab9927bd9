"""Discrete competing (p,q) operator, Nemytskii vectors, residual and Jacobian.

All vectors are raw duality pairings against the interior hat functions.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
import scipy.sparse as sp

from .femspace import FemFunction, FemSpace, gradient_power_integral, seminorm_W1p
from .problem import ProblemSpec
from .reactions import Reaction, finite_difference_partials

__all__ = [
    "PairState", "ResidualPair", "ProblemSpec", "apply_competing", "pairing_with_function",
    "probe_nonmonotonicity", "nonmonotonicity_root", "assemble_nemytskii", "residual_A",
    "jacobian", "competing_energy",
]


class NonFiniteReactionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PairState:
    u: FemFunction
    v: FemFunction

    def __post_init__(self):
        if self.u.space is not self.v.space:
            raise ValueError(f"u and v must share a level (got {self.u.level} and {self.v.level})")

    @classmethod
    def zero(cls, space: FemSpace) -> "PairState":
        return cls(space.zero(), space.zero())

    @classmethod
    def from_vector(cls, space: FemSpace, y) -> "PairState":
        y = np.asarray(y, dtype=float)
        n = space.dim
        if y.shape != (2 * n,):
            raise ValueError(f"expected a vector of length {2 * n}")
        return cls(FemFunction(space, y[:n]), FemFunction(space, y[n:]))

    @property
    def space(self) -> FemSpace:
        return self.u.space

    @property
    def level(self) -> int:
        return self.u.level

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.coeffs, self.v.coeffs])

    def pair_norm(self, spec: ProblemSpec) -> float:
        return seminorm_W1p(self.u, spec.p1) + seminorm_W1p(self.v, spec.p2)


@dataclass(frozen=True)
class ResidualPair:
    r_u: np.ndarray
    r_v: np.ndarray
    level: int

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.r_u, self.r_v])


def _flux_coefficients(g: np.ndarray, p: float, q: float, mu: float, eps: float):
    """Scalar a with flux = a * g, and da/d(|g|^2), per element.

    Regularized modulus (eps^2 + |g|^2); where that vanishes the flux is 0.
    """
    r2 = eps * eps + g[:, 0] ** 2 + g[:, 1] ** 2
    a = np.zeros_like(r2)
    da = np.zeros_like(r2)
    nz = r2 > 0
    r = r2[nz]
    a[nz] = r ** ((p - 2.0) / 2.0) - mu * r ** ((q - 2.0) / 2.0)
    da[nz] = 0.5 * (p - 2.0) * r ** ((p - 4.0) / 2.0) - 0.5 * mu * (q - 2.0) * r ** ((q - 4.0) / 2.0)
    return a, da


def competing_vector(space: FemSpace, coeffs: np.ndarray, p: float, q: float, mu: float,
                     eps: float = 0.0) -> np.ndarray:
    g = np.column_stack([space.Gx @ coeffs, space.Gy @ coeffs])
    a, _ = _flux_coefficients(g, p, q, mu, eps)
    w = space.mesh.areas * a
    return space.Gx.T @ (w * g[:, 0]) + space.Gy.T @ (w * g[:, 1])


def apply_competing(f: FemFunction, p: float, q: float, mu: float, eps: float = 0.0) -> np.ndarray:
    """Entries int (|grad f|^{p-2} - mu |grad f|^{q-2}) grad f . grad phi_k."""
    return competing_vector(f.space, f.coeffs, p, q, mu, eps)


def competing_block(space: FemSpace, coeffs, p, q, mu, eps) -> sp.csr_matrix:
    """Derivative of :func:`competing_vector` with respect to the coefficients."""
    Gx, Gy = space.Gx, space.Gy
    g = np.column_stack([Gx @ coeffs, Gy @ coeffs])
    a, da = _flux_coefficients(g, p, q, mu, eps)
    A = space.mesh.areas
    d11 = A * (a + 2.0 * da * g[:, 0] ** 2)
    d12 = A * (2.0 * da * g[:, 0] * g[:, 1])
    d22 = A * (a + 2.0 * da * g[:, 1] ** 2)
    return (Gx.T @ sp.diags(d11) @ Gx + Gx.T @ sp.diags(d12) @ Gy
            + Gy.T @ sp.diags(d12) @ Gx + Gy.T @ sp.diags(d22) @ Gy).tocsr()


def pairing_with_function(residual, g: FemFunction, level: int | None = None) -> float:
    """<functional, g> for a functional stored as pairings with the hat functions."""
    r = np.asarray(residual, dtype=float)
    if level is not None and level != g.level:
        raise ValueError(f"functional on level {level} paired with a function on level {g.level}")
    if r.shape != g.coeffs.shape:
        raise ValueError(f"functional of length {r.size} does not match level {g.level} "
                         f"({g.coeffs.size} interior vertices)")
    return float(r @ g.coeffs)


def competing_energy(f: FemFunction, p: float, q: float, mu: float) -> float:
    """||f||_{1,p}^p - mu ||f||_{1,q}^q."""
    return gradient_power_integral(f, p) - mu * gradient_power_integral(f, q)


def probe_nonmonotonicity(f0: FemFunction, p: float, q: float, mu: float, t_grid):
    """Pairs (t, E(t)) with E(t) = t^p ||grad f0||_p^p - mu t^q ||grad f0||_q^q,
    the competing pairing along the ray t * f0."""
    t = np.asarray(t_grid, dtype=float)
    if not np.any(f0.coeffs):
        raise ValueError("probe direction f0 must be nonzero")
    if np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be positive and strictly increasing")
    a = gradient_power_integral(f0, p)
    b = gradient_power_integral(f0, q)
    return [(float(ti), float(ti ** p * a - mu * ti ** q * b)) for ti in t]


def nonmonotonicity_root(f0: FemFunction, p: float, q: float, mu: float) -> float:
    """Positive zero of E(t) for mu > 0: (mu ||grad f0||_q^q / ||grad f0||_p^p)^{1/(p-q)}."""
    if mu <= 0:
        raise ValueError("E(t) has no positive zero unless mu > 0")
    a = gradient_power_integral(f0, p)
    b = gradient_power_integral(f0, q)
    return float((mu * b / a) ** (1.0 / (p - q)))


def reaction_arguments(space: FemSpace, u_coeffs, v_coeffs):
    """(x, s, t, xi, nu) at every quadrature point."""
    Gqx, Gqy = space.quad_gradients
    xi = np.column_stack([Gqx @ u_coeffs, Gqy @ u_coeffs])
    nu = np.column_stack([Gqx @ v_coeffs, Gqy @ v_coeffs])
    return space.quad_points, space.Q @ u_coeffs, space.Q @ v_coeffs, xi, nu


def _checked(values, args, name):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        x, s, t, xi, nu = (a[k] for a in args)
        raise NonFiniteReactionError(
            f"{name} is not finite at quadrature point {k}, x = ({x[0]:.6g}, {x[1]:.6g}), "
            f"s = {s:.6g}, t = {t:.6g}, xi = {tuple(xi)}, nu = {tuple(nu)}")
    return values


def nemytskii_vector(reaction: Reaction, space: FemSpace, u_coeffs, v_coeffs) -> np.ndarray:
    args = reaction_arguments(space, u_coeffs, v_coeffs)
    vals = _checked(reaction(*args), args, getattr(reaction, "name", "reaction"))
    return space.Q.T @ (space.quad_weights * vals)


def assemble_nemytskii(reaction: Reaction, state: PairState) -> np.ndarray:
    """Entries int f(x, u, v, grad u, grad v) phi_k dx by quadrature."""
    return nemytskii_vector(reaction, state.space, state.u.coeffs, state.v.coeffs)


def residual_vector(spec: ProblemSpec, space: FemSpace, y: np.ndarray, eps: float = 0.0) -> np.ndarray:
    n = space.dim
    u, v = y[:n], y[n:]
    ru = competing_vector(space, u, spec.p1, spec.q1, spec.mu1, eps)
    rv = competing_vector(space, v, spec.p2, spec.q2, spec.mu2, eps)
    if spec.f1 is not None:
        ru = ru - nemytskii_vector(spec.f1, space, u, v)
    if spec.f2 is not None:
        rv = rv - nemytskii_vector(spec.f2, space, u, v)
    return np.concatenate([ru, rv])


def residual_A(state: PairState, spec: ProblemSpec, eps: float = 0.0) -> ResidualPair:
    r = residual_vector(spec, state.space, state.vector, eps)
    n = state.space.dim
    return ResidualPair(r[:n], r[n:], state.level)


def _reaction_block(reaction: Reaction, space: FemSpace, args):
    if reaction is None:
        z = sp.csr_matrix((space.dim, space.dim))
        return z, z
    if not reaction.has_partials:
        reaction = finite_difference_partials(reaction)
    ds, dt, dxi, dnu = reaction.partials(*args)
    ds, dt = _checked(ds, args, "d/ds"), _checked(dt, args, "d/dt")
    dxi, dnu = np.asarray(dxi, float), np.asarray(dnu, float)
    Gqx, Gqy = space.quad_gradients
    QW = space.Q.T @ sp.diags(space.quad_weights)
    du = QW @ (sp.diags(ds) @ space.Q + sp.diags(dxi[:, 0]) @ Gqx + sp.diags(dxi[:, 1]) @ Gqy)
    dv = QW @ (sp.diags(dt) @ space.Q + sp.diags(dnu[:, 0]) @ Gqx + sp.diags(dnu[:, 1]) @ Gqy)
    return du.tocsr(), dv.tocsr()


def jacobian_matrix(spec: ProblemSpec, space: FemSpace, y: np.ndarray, eps: float) -> sp.csr_matrix:
    n = space.dim
    u, v = y[:n], y[n:]
    Kuu = competing_block(space, u, spec.p1, spec.q1, spec.mu1, eps)
    Kvv = competing_block(space, v, spec.p2, spec.q2, spec.mu2, eps)
    args = reaction_arguments(space, u, v)
    N1u, N1v = _reaction_block(spec.f1, space, args)
    N2u, N2v = _reaction_block(spec.f2, space, args)
    return sp.bmat([[Kuu - N1u, -N1v], [-N2u, Kvv - N2v]], format="csr")


def jacobian(state: PairState, spec: ProblemSpec, epsilon_reg: float = 0.0) -> sp.csr_matrix:
    """Derivative of the eps-regularized residual with respect to (u, v)."""
    if epsilon_reg < 0:
        raise ValueError("epsilon_reg must be nonnegative")
    return jacobian_matrix(spec, state.space, state.vector, epsilon_reg)
