"""Piecewise-linear finite elements with homogeneous Dirichlet data.

Only interior vertices carry degrees of freedom; boundary values are zero by
construction. Gradients are constant per triangle, so every gradient-only
quantity (the W^{1,p}_0 seminorm, the flux terms) is evaluated exactly, while
integrals of point values use a degree-4 rule.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # reference-triangle weights, sum 1/2
    degree: int


def _dunavant4() -> QuadratureRule:
    a1, b1, w1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
    a2, b2, w2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
    pts = np.array([[b1, a1, a1], [a1, b1, a1], [a1, a1, b1],
                    [b2, a2, a2], [a2, b2, a2], [a2, a2, b2]])
    w = 0.5 * np.array([w1, w1, w1, w2, w2, w2])
    return QuadratureRule(pts, w, 4)


def _centroid() -> QuadratureRule:
    return QuadratureRule(np.full((1, 3), 1.0 / 3.0), np.array([0.5]), 1)


QUADRATURE_RULES = {1: _centroid(), 4: _dunavant4()}
DEFAULT_QUADRATURE = QUADRATURE_RULES[4]


class FemSpace:
    """P1 space on one mesh. Use :func:`space_of` to get the cached instance."""

    def __init__(self, mesh: Mesh, rule: QuadratureRule = DEFAULT_QUADRATURE):
        self.mesh = mesh
        self.rule = rule
        tri = mesh.triangles
        m = mesh.n_triangles
        self._dof = np.full(mesh.n_vertices, -1, dtype=np.int64)
        self._dof[mesh.interior_vertices] = np.arange(mesh.n_interior)
        self.local_dofs = self._dof[tri]            # -1 marks a boundary vertex

        p = mesh.vertices[tri]                      # (m, 3, 2)
        area2 = 2.0 * mesh.areas
        gl = np.empty((m, 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            gl[:, k, 0] = (p[:, i, 1] - p[:, j, 1]) / area2
            gl[:, k, 1] = (p[:, j, 0] - p[:, i, 0]) / area2
        self.basis_gradients = gl

        mask = self.local_dofs >= 0
        rows = np.broadcast_to(np.arange(m)[:, None], (m, 3))[mask]
        cols = self.local_dofs[mask]
        n = mesh.n_interior
        self.Gx = sp.csr_matrix((gl[:, :, 0][mask], (rows, cols)), shape=(m, n))
        self.Gy = sp.csr_matrix((gl[:, :, 1][mask], (rows, cols)), shape=(m, n))

        nq = len(rule.weights)
        self.n_quad = nq
        self.quad_element = np.repeat(np.arange(m), nq)
        self.quad_points = np.einsum("qk,mkd->mqd", rule.points, p).reshape(-1, 2)
        self.quad_weights = (area2[:, None] * rule.weights[None, :]).ravel()
        bary = np.broadcast_to(rule.points[None, :, :], (m, nq, 3))
        qrows = np.arange(m * nq).reshape(m, nq, 1)
        qrows = np.broadcast_to(qrows, (m, nq, 3))
        qcols = np.broadcast_to(self.local_dofs[:, None, :], (m, nq, 3))
        qmask = qcols >= 0
        self.Q = sp.csr_matrix((bary[qmask], (qrows[qmask], qcols[qmask])), shape=(m * nq, n))

    @property
    def level(self) -> int:
        return self.mesh.level

    @property
    def dim(self) -> int:
        return self.mesh.n_interior

    @cached_property
    def embedding(self) -> sp.csr_matrix:
        """All-vertex values from interior coefficients (zeros on the boundary)."""
        n = self.dim
        iv = self.mesh.interior_vertices
        return sp.csr_matrix((np.ones(n), (iv, np.arange(n))), shape=(self.mesh.n_vertices, n))

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Laplace stiffness matrix on interior vertices."""
        W = sp.diags(self.mesh.areas)
        return (self.Gx.T @ W @ self.Gx + self.Gy.T @ W @ self.Gy).tocsr()

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Mass matrix by the space's quadrature (exact for P1 products)."""
        return (self.Q.T @ sp.diags(self.quad_weights) @ self.Q).tocsr()

    @cached_property
    def quad_gradients(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Gradient components at every quadrature point, as maps from coefficients."""
        nq = self.quad_element.size
        R = sp.csr_matrix((np.ones(nq), (np.arange(nq), self.quad_element)),
                          shape=(nq, self.mesh.n_triangles))
        return (R @ self.Gx).tocsr(), (R @ self.Gy).tocsr()

    @cached_property
    def hat_integrals(self) -> np.ndarray:
        return self.Q.T @ self.quad_weights

    def function(self, coeffs) -> "FemFunction":
        return FemFunction(self, coeffs)

    def zero(self) -> "FemFunction":
        return FemFunction(self, np.zeros(self.dim))

    def basis_function(self, k: int) -> "FemFunction":
        c = np.zeros(self.dim)
        c[k] = 1.0
        return FemFunction(self, c)

    def interpolate(self, func) -> "FemFunction":
        """Nodal interpolant of ``func(x, y)`` at the interior vertices."""
        xy = self.mesh.vertices[self.mesh.interior_vertices]
        return FemFunction(self, np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float))

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates of each point.

        Brute force over all triangles in chunks; meant for diagnostics and
        tests, not for hot loops.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.mesh.vertices[self.mesh.triangles]
        elem = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        # barycentric coordinates are affine: lambda = gl . x + lambda(0)
        gl = self.basis_gradients
        offs = 1.0 / 3.0 - np.einsum("mkd,md->mk", gl, tri.mean(axis=1))
        chunk = max(1, 2_000_000 // max(1, self.mesh.n_triangles))
        for start in range(0, len(pts), chunk):
            sl = slice(start, start + chunk)
            lam = np.einsum("mkd,pd->pmk", gl, pts[sl]) + offs[None]
            score = lam.min(axis=2)
            best = np.argmax(score, axis=1)
            if np.any(score[np.arange(len(best)), best] < -1e-10):
                raise ValueError("point outside the mesh")
            elem[sl] = best
            bary[sl] = lam[np.arange(len(best)), best]
        return elem, bary


_SPACES: "weakref.WeakKeyDictionary[Mesh, FemSpace]" = weakref.WeakKeyDictionary()


def space_of(mesh: Mesh) -> FemSpace:
    space = _SPACES.get(mesh)
    if space is None:
        space = _SPACES[mesh] = FemSpace(mesh)
    return space


@dataclass(frozen=True, eq=False)
class FemFunction:
    """A P1 function given by its interior nodal coefficients."""

    space: FemSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.space.dim,):
            raise ValueError(f"expected {self.space.dim} coefficients, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def level(self) -> int:
        return self.space.level

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def __add__(self, other: "FemFunction") -> "FemFunction":
        _same_space(self, other)
        return FemFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "FemFunction") -> "FemFunction":
        _same_space(self, other)
        return FemFunction(self.space, self.coeffs - other.coeffs)

    def __mul__(self, t: float) -> "FemFunction":
        return FemFunction(self.space, t * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "FemFunction":
        return FemFunction(self.space, -self.coeffs)

    def vertex_values(self) -> np.ndarray:
        return self.space.embedding @ self.coeffs

    def gradients(self) -> np.ndarray:
        """(n_triangles, 2) array of the elementwise-constant gradient."""
        return np.column_stack([self.space.Gx @ self.coeffs, self.space.Gy @ self.coeffs])

    def quadrature_values(self) -> np.ndarray:
        return self.space.Q @ self.coeffs

    def evaluate(self, points) -> np.ndarray:
        elem, bary = self.space.locate(points)
        vals = self.vertex_values()[self.mesh.triangles[elem]]
        return np.sum(vals * bary, axis=1)


def _same_space(f: FemFunction, g: FemFunction):
    if f.space is not g.space:
        raise ValueError(f"functions live on different spaces (levels {f.level} and {g.level})")


def gradient_on_element(f: FemFunction, element: int) -> np.ndarray:
    if not 0 <= element < f.mesh.n_triangles:
        raise IndexError(f"element {element} out of range")
    g = f.space.basis_gradients[element]
    dofs = f.space.local_dofs[element]
    c = np.where(dofs >= 0, f.coeffs[np.maximum(dofs, 0)], 0.0)
    return c @ g


def _check_exponent(p: float):
    if not p > 1.0:
        raise ValueError(f"exponent must exceed 1, got {p}")


def integrate(space: FemSpace, values: np.ndarray) -> float:
    """Quadrature of pointwise values given at the space's quadrature points."""
    return float(space.quad_weights @ values)


def norm_Lp(f: FemFunction, p: float) -> float:
    _check_exponent(p)
    return integrate(f.space, np.abs(f.quadrature_values()) ** p) ** (1.0 / p)


def gradient_power_integral(f: FemFunction, p: float) -> float:
    """Exact value of the integral of |grad f|^p."""
    g = f.gradients()
    return float(f.mesh.areas @ np.hypot(g[:, 0], g[:, 1]) ** p)


def seminorm_W1p(f: FemFunction, p: float) -> float:
    _check_exponent(p)
    return gradient_power_integral(f, p) ** (1.0 / p)


def field_csv(u: FemFunction, v: FemFunction) -> str:
    """Per-vertex dump ``vertex_id,x,y,u_value,v_value``."""
    _same_space(u, v)
    uv, vv = u.vertex_values(), v.vertex_values()
    lines = ["vertex_id,x,y,u_value,v_value"]
    for k, ((x, y), a, b) in enumerate(zip(u.mesh.vertices.tolist(), uv.tolist(), vv.tolist())):
        lines.append(f"{k},{x!r},{y!r},{a!r},{b!r}")
    return "\n".join(lines) + "\n"
