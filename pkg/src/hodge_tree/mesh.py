"""Simplicial meshes of the unit square and cube.

Every k-simplex is stored as an ascending tuple of vertex indices, and the
simplices of each dimension are numbered lexicographically. This fixes the
orientation of every simplex and makes the signed incidence matrices (and
hence the spanning trees built on top of them) deterministic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sps


class MeshError(ValueError):
    """Raised for invalid mesh input."""


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """A conforming simplicial tessellation.

    Attributes:
        dim: spatial dimension n (2 or 3).
        vertices: (V, n) array of coordinates.
        simplices: list of n + 1 integer arrays; ``simplices[k]`` has shape
            (|Delta_k|, k + 1) with ascending rows in lexicographic order.
        volumes: measure of each n-simplex.
    """

    dim: int
    vertices: np.ndarray
    simplices: list[np.ndarray]
    volumes: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def cells(self) -> np.ndarray:
        return self.simplices[self.dim]

    def num(self, k: int) -> int:
        """Number of k-simplices."""
        return self.simplices[k].shape[0]

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(self.num(k) for k in range(self.dim + 1))

    def euler_characteristic(self) -> int:
        return sum((-1) ** k * c for k, c in enumerate(self.counts))

    def face_index(self, k: int, faces: np.ndarray) -> np.ndarray:
        """Global indices of the given (sorted) k-simplices.

        Raises:
            MeshError: if any of the tuples is not a k-simplex of the mesh.
        """
        keys = _encode(np.asarray(faces), self.vertices.shape[0])
        table = self._keys(k)
        idx = np.searchsorted(table, keys)
        idx = np.minimum(idx, table.size - 1)
        if not np.all(table[idx] == keys):
            raise MeshError(f"unknown {k}-simplex")
        return idx

    def _keys(self, k: int) -> np.ndarray:
        key = ("keys", k)
        if key not in self._cache:
            self._cache[key] = _encode(self.simplices[k], self.vertices.shape[0])
        return self._cache[key]

    def cell_faces(self, k: int) -> np.ndarray:
        """(|Delta_n|, C(n+1, k+1)) indices of the k-faces of every cell.

        Local faces are enumerated as ``itertools.combinations`` of the local
        vertex positions, which keeps them ascending.
        """
        key = ("cell_faces", k)
        if key not in self._cache:
            combos = list(itertools.combinations(range(self.dim + 1), k + 1))
            faces = self.cells[:, np.array(combos)]
            shape = faces.shape[:2]
            flat = self.face_index(k, faces.reshape(-1, k + 1))
            self._cache[key] = flat.reshape(shape)
        return self._cache[key]


def _encode(tuples: np.ndarray, base: int) -> np.ndarray:
    """Map ascending integer tuples to int64 keys that sort lexicographically."""
    tuples = np.asarray(tuples, dtype=np.int64)
    if tuples.ndim == 1:
        tuples = tuples[:, None]
    keys = np.zeros(tuples.shape[0], dtype=np.int64)
    for j in range(tuples.shape[1]):
        keys = keys * base + tuples[:, j]
    return keys


def simplex_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Unsigned measure of each simplex, |det(edge vectors)| / n!."""
    pts = vertices[cells]
    edges = pts[:, 1:, :] - pts[:, :1, :]
    n = cells.shape[1] - 1
    return np.abs(np.linalg.det(edges)) / math.factorial(n)


def complete_from_cells(dim: int, vertices, cells) -> SimplicialMesh:
    """Build a mesh from its top-dimensional cells.

    All lower-dimensional simplices are obtained by enumerating sorted vertex
    subsets of the cells and removing duplicates.

    Raises:
        MeshError: for malformed or degenerate cells.
    """
    if dim not in (2, 3):
        raise MeshError(f"dimension must be 2 or 3, got {dim}")
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != dim:
        raise MeshError(f"vertices must have shape (V, {dim})")
    if cells.ndim != 2 or cells.shape[1] != dim + 1:
        raise MeshError(f"cells must have shape (C, {dim + 1})")
    if cells.shape[0] == 0:
        raise MeshError("mesh has no cells")
    if cells.min() < 0 or cells.max() >= vertices.shape[0]:
        raise MeshError("cell references a vertex out of range")

    cells = np.sort(cells, axis=1)
    if np.any(cells[:, 1:] == cells[:, :-1]):
        raise MeshError("degenerate cell with a repeated vertex")
    volumes = simplex_volumes(vertices, cells)
    scale = np.max(np.ptp(vertices, axis=0)) ** dim
    if np.any(volumes <= 1e-14 * scale):
        raise MeshError("degenerate cell with zero volume")

    simplices = []
    for k in range(dim + 1):
        combos = np.array(list(itertools.combinations(range(dim + 1), k + 1)))
        faces = cells[:, combos].reshape(-1, k + 1)
        simplices.append(np.unique(faces, axis=0))

    top = simplices[dim]
    if top.shape[0] != cells.shape[0]:
        raise MeshError("duplicate cells")
    # cells are renumbered lexicographically, so the volumes follow suit
    order = np.lexsort(cells.T[::-1])
    return SimplicialMesh(dim, vertices, simplices, volumes[order])


def _grid_vertices(N: int, dim: int) -> np.ndarray:
    ticks = np.linspace(0.0, 1.0, N + 1)
    # vertex index = i + (N+1) j (+ (N+1)^2 l): x varies fastest
    grids = np.meshgrid(*([ticks] * dim), indexing="ij")
    return np.column_stack([g.ravel(order="F") for g in grids])


def generate_structured_square(N: int) -> SimplicialMesh:
    """Unit square split into N x N cells, each cut along its (0,0)-(1,1) diagonal."""
    if int(N) != N or N < 1:
        raise MeshError(f"refinement must be a positive integer, got {N}")
    N = int(N)
    verts = _grid_vertices(N, 2)
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = i + (N + 1) * j
    v10 = v00 + 1
    v01 = v00 + N + 1
    v11 = v01 + 1
    cells = np.vstack(
        [np.column_stack([v00, v10, v11]), np.column_stack([v00, v01, v11])]
    )
    return complete_from_cells(2, verts, cells)


def generate_structured_cube(N: int) -> SimplicialMesh:
    """Unit cube split into N^3 cubes, each cut into 6 Kuhn (Freudenthal) tetrahedra."""
    if int(N) != N or N < 1:
        raise MeshError(f"refinement must be a positive integer, got {N}")
    N = int(N)
    verts = _grid_vertices(N, 3)
    strides = np.array([1, N + 1, (N + 1) ** 2])
    idx = np.array(list(itertools.product(range(N), repeat=3)))
    base = idx @ strides
    cells = []
    for perm in itertools.permutations(range(3)):
        corner = base.copy()
        tet = [corner]
        for axis in perm:
            corner = corner + strides[axis]
            tet.append(corner)
        cells.append(np.column_stack(tet))
    return complete_from_cells(3, verts, np.vstack(cells))


def generate_structured(dim: int, N: int) -> SimplicialMesh:
    if dim == 2:
        return generate_structured_square(N)
    if dim == 3:
        return generate_structured_cube(N)
    raise MeshError(f"dimension must be 2 or 3, got {dim}")


def signed_incidence(mesh: SimplicialMesh, k: int) -> sps.csr_array:
    """Signed incidence between (k+1)-simplices (rows) and k-simplices (columns).

    The entry for (sigma, tau) is (-1)^i when tau is sigma with its i-th
    vertex removed.
    """
    if not 0 <= k < mesh.dim:
        raise MeshError(f"incidence degree must be in [0, {mesh.dim}), got {k}")
    key = ("incidence", k)
    if key not in mesh._cache:
        upper = mesh.simplices[k + 1]
        m = upper.shape[0]
        rows, cols, vals = [], [], []
        for i in range(k + 2):
            face = np.delete(upper, i, axis=1)
            rows.append(np.arange(m))
            cols.append(mesh.face_index(k, face))
            vals.append(np.full(m, (-1) ** i, dtype=float))
        mat = sps.csr_array(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(m, mesh.num(k)),
        )
        mat.sort_indices()
        mesh._cache[key] = mat
    return mesh._cache[key]


def mean_diameter(mesh: SimplicialMesh) -> float:
    """Mean over cells of the largest vertex-to-vertex distance."""
    pts = mesh.vertices[mesh.cells]
    diam = np.zeros(mesh.num(mesh.dim))
    for a, b in itertools.combinations(range(mesh.dim + 1), 2):
        diam = np.maximum(diam, np.linalg.norm(pts[:, a] - pts[:, b], axis=1))
    return float(diam.mean())


def write_mesh(mesh: SimplicialMesh, path) -> None:
    """Write the ASCII exchange format (vertices and top cells only)."""
    lines = [f"dim {mesh.dim}", f"vertices {mesh.vertices.shape[0]}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in mesh.vertices]
    lines.append(f"cells {mesh.num(mesh.dim)}")
    lines += [" ".join(str(int(v)) for v in row) for row in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SimplicialMesh:
    """Read the ASCII exchange format; lower simplices are rederived."""
    tokens = Path(path).read_text().split("\n")
    lines = [ln.strip() for ln in tokens if ln.strip()]

    def header(line, name):
        head, value = line.split()
        if head != name:
            raise ValueError(f"expected {name!r}")
        return int(value)

    try:
        dim = header(lines[0], "dim")
        nv = header(lines[1], "vertices")
        verts = [[float(x) for x in ln.split()] for ln in lines[2 : 2 + nv]]
        nc = header(lines[2 + nv], "cells")
        cells = [[int(x) for x in ln.split()] for ln in lines[3 + nv : 3 + nv + nc]]
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}") from exc
    if len(verts) != nv or len(cells) != nc:
        raise MeshError(f"truncated mesh file {path}")
    return complete_from_cells(dim, np.array(verts), np.array(cells))
