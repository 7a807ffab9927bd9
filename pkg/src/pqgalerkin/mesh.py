"""Triangular meshes of planar polygons, red refinement and P1 prolongation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def _unique_edges(triangles: np.ndarray):
    """Return sorted unique edges, per-edge triangle counts and the
    triangle-to-edge map (edge k of a triangle is opposite local vertex k)."""
    local = np.array([[1, 2], [2, 0], [0, 1]])
    all_edges = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(all_edges, axis=0, return_inverse=True,
                                       return_counts=True)
    return edges, counts, inverse.reshape(-1, 3)


def _lexicographic_order(vertices: np.ndarray) -> np.ndarray:
    # primary key x, secondary key y
    return np.lexsort((vertices[:, 1], vertices[:, 0]))


def _renumber(vertices, triangles, flags, order):
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return vertices[order], rank[triangles], flags[order], rank


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with counter-clockwise triangles.

    Meshes are immutable; all arrays are read-only views.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex_flags: np.ndarray
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(np.asarray(self.vertices, dtype=float)))
        object.__setattr__(self, "triangles", _freeze(np.asarray(self.triangles, dtype=np.int64)))
        object.__setattr__(self, "boundary_vertex_flags",
                           _freeze(np.asarray(self.boundary_vertex_flags, dtype=bool)))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be an (n, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be an (m, 3) array")
        if self.boundary_vertex_flags.shape != (len(self.vertices),):
            raise ValueError("one boundary flag per vertex is required")
        if np.any(self.areas <= 0.0):
            raise ValueError("triangles must have positive signed area")

    @classmethod
    def from_triangulation(cls, vertices, triangles, level: int = 0) -> "Mesh":
        """Build a mesh, orienting triangles and flagging boundary vertices
        from edges that belong to a single triangle."""
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.array(triangles, dtype=np.int64)
        flip = _signed_areas(vertices, triangles) < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        edges, counts, _ = _unique_edges(triangles)
        if np.any(counts > 2):
            raise ValueError("non-manifold triangulation: an edge has more than two triangles")
        flags = np.zeros(len(vertices), dtype=bool)
        flags[edges[counts == 1].ravel()] = True
        return cls(vertices, triangles, flags, level)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return _freeze(_signed_areas(self.vertices, self.triangles))

    @property
    def domain_measure(self) -> float:
        return float(np.sum(self.areas))

    @cached_property
    def _edge_data(self):
        return _unique_edges(self.triangles)

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data[0]

    @property
    def edge_triangle_counts(self) -> np.ndarray:
        return self._edge_data[1]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edges[self.edge_triangle_counts == 1]

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return _freeze(np.flatnonzero(~self.boundary_vertex_flags))

    @property
    def n_interior(self) -> int:
        return int(self.interior_vertices.size)

    def to_text(self) -> str:
        """Plain-text export: header, one ``x y flag`` line per vertex,
        one line of 0-based indices per triangle."""
        lines = [f"vertices {self.n_vertices} triangles {self.n_triangles}"]
        lines += [f"{x!r} {y!r} {int(b)}" for (x, y), b in
                  zip(self.vertices.tolist(), self.boundary_vertex_flags)]
        lines += [" ".join(str(i) for i in t) for t in self.triangles.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, level: int = 0) -> "Mesh":
        rows = [ln.split() for ln in text.strip().splitlines()]
        head = rows[0]
        if len(head) != 4 or head[0] != "vertices" or head[2] != "triangles":
            raise ValueError("expected header 'vertices <n> triangles <m>'")
        n, m = int(head[1]), int(head[3])
        if len(rows) != 1 + n + m:
            raise ValueError(f"expected {n + m} body lines, found {len(rows) - 1}")
        vrows = rows[1:1 + n]
        vertices = [(float(r[0]), float(r[1])) for r in vrows]
        flags = [bool(int(r[2])) for r in vrows]
        triangles = [tuple(int(i) for i in r) for r in rows[1 + n:]]
        return cls(vertices, triangles, flags, level)


def generate_unit_square(n_cells_per_side: int) -> Mesh:
    """Crisscross triangulation of the unit square.

    Every grid cell is cut by both diagonals into four triangles, so even
    ``n_cells_per_side == 1`` has one interior vertex (the cell centre).
    """
    n = int(n_cells_per_side)
    if n != n_cells_per_side or n < 1:
        raise ValueError(f"n_cells_per_side must be a positive integer, got {n_cells_per_side!r}")
    g = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    c = (np.arange(n) + 0.5) / n
    cx, cy = np.meshgrid(c, c, indexing="ij")
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([grid, centres])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    bl = i * (n + 1) + j
    br = (i + 1) * (n + 1) + j
    tl = i * (n + 1) + j + 1
    tr = (i + 1) * (n + 1) + j + 1
    ctr = (n + 1) ** 2 + i * n + j
    triangles = np.concatenate([
        np.column_stack([bl, br, ctr]),
        np.column_stack([br, tr, ctr]),
        np.column_stack([tr, tl, ctr]),
        np.column_stack([tl, bl, ctr]),
    ])
    x, y = vertices[:, 0], vertices[:, 1]
    flags = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
    order = _lexicographic_order(vertices)
    vertices, triangles, flags, _ = _renumber(vertices, triangles, flags, order)
    return Mesh(vertices, triangles, flags, level=0)


def _refine(mesh: Mesh):
    """Red refinement. Returns the fine mesh and, for each fine vertex, the
    pair of coarse vertices it interpolates between (a repeated index for
    vertices inherited from the coarse mesh)."""
    edges, counts, tri_edges = mesh._edge_data
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    flags = np.concatenate([mesh.boundary_vertex_flags, counts == 1])
    parents = np.vstack([np.column_stack([np.arange(nv), np.arange(nv)]), edges])

    a, b, c = mesh.triangles.T
    # tri_edges[:, k] is the edge opposite local vertex k
    m_bc, m_ca, m_ab = (nv + tri_edges[:, k] for k in range(3))
    triangles = np.concatenate([
        np.column_stack([a, m_ab, m_ca]),
        np.column_stack([m_ab, b, m_bc]),
        np.column_stack([m_ca, m_bc, c]),
        np.column_stack([m_ab, m_bc, m_ca]),
    ])
    order = _lexicographic_order(vertices)
    vertices, triangles, flags, _ = _renumber(vertices, triangles, flags, order)
    return Mesh(vertices, triangles, flags, level=mesh.level + 1), parents[order]


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children through its edge midpoints."""
    return _refine(mesh)[0]


def _interior_prolongation(coarse: Mesh, fine: Mesh, parents: np.ndarray) -> sp.csr_matrix:
    nf = fine.n_vertices
    rows = np.repeat(np.arange(nf), 2)
    full = sp.csr_matrix((np.full(2 * nf, 0.5), (rows, parents.ravel())),
                         shape=(nf, coarse.n_vertices))
    return full[fine.interior_vertices][:, coarse.interior_vertices].tocsr()


@dataclass(frozen=True, eq=False)
class RefinementHierarchy:
    """Nested meshes (level 0 coarsest) and interior-to-interior
    prolongation matrices; ``prolongations[l]`` maps level ``l`` to ``l + 1``."""

    meshes: tuple
    prolongations: tuple

    @classmethod
    def build(cls, base: Mesh, max_level: int) -> "RefinementHierarchy":
        if max_level < 0:
            raise ValueError("max_level must be nonnegative")
        meshes, prolongations = [base], []
        for _ in range(max_level):
            fine, parents = _refine(meshes[-1])
            prolongations.append(_interior_prolongation(meshes[-1], fine, parents))
            meshes.append(fine)
        return cls(tuple(meshes), tuple(prolongations))

    @property
    def max_level(self) -> int:
        return len(self.meshes) - 1

    def __len__(self):
        return len(self.meshes)

    def mesh(self, level: int) -> Mesh:
        self._check_level(level)
        return self.meshes[level]

    def _check_level(self, level: int):
        if not 0 <= level <= self.max_level:
            raise IndexError(f"level {level} outside hierarchy levels 0..{self.max_level}")

    def prolongation_matrix(self, from_level: int, to_level: int) -> sp.csr_matrix:
        self._check_level(from_level)
        self._check_level(to_level)
        if from_level > to_level:
            raise ValueError(f"cannot prolongate from level {from_level} down to {to_level}")
        P = sp.identity(self.meshes[from_level].n_interior, format="csr")
        for lvl in range(from_level, to_level):
            P = (self.prolongations[lvl] @ P).tocsr()
        return P


def unit_square_hierarchy(max_level: int, cells: int = 2) -> RefinementHierarchy:
    return RefinementHierarchy.build(generate_unit_square(cells), max_level)


def prolongate(hierarchy: RefinementHierarchy, coeffs, from_level: int, to_level: int) -> np.ndarray:
    """Interior coefficients of the same piecewise-linear function on a finer level."""
    coeffs = np.asarray(coeffs, dtype=float)
    hierarchy._check_level(from_level)
    hierarchy._check_level(to_level)
    if from_level > to_level:
        raise ValueError(f"cannot prolongate from level {from_level} down to {to_level}")
    if coeffs.shape[0] != hierarchy.meshes[from_level].n_interior:
        raise ValueError("coefficient length does not match the interior vertices of from_level")
    out = coeffs
    for lvl in range(from_level, to_level):
        out = hierarchy.prolongations[lvl] @ out
    return np.array(out, dtype=float)
