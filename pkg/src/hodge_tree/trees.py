"""Spanning trees of the mesh and the DOF splitting they induce.

The dual tree connects all cells and one extra "outside" vertex through the
facets; the node tree connects all vertices through the edges. Both are grown
by breadth-first search with neighbours visited in ascending global index of
the connecting facet or edge, so the result depends only on the mesh.

Per form degree k the DOFs are split into a "bar" set and a "ring" set:

    k = 0      bar = all nodes (the constant is fixed by a root node)
    k = 1      ring = node-tree edges
    k = n - 1  bar = dual-tree facets
    k = n      ring = all cells

In 2D the edges are the facets; the node tree is then the complement of the
dual-tree facets.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

from .linalg import LUFactor, SingularMatrixError, complement, find_triangular_order, submatrix
from .mesh import SimplicialMesh
from .whitney import FormComplex


class TreeError(RuntimeError):
    """Raised when a spanning tree or the induced splitting is invalid."""


@dataclass(frozen=True)
class NodeTree:
    root: int
    parent: np.ndarray  # parent vertex, -1 at the root
    parent_edge: np.ndarray  # edge to the parent, -1 at the root
    order: np.ndarray  # BFS order of the vertices

    @property
    def edges(self) -> np.ndarray:
        return np.sort(self.parent_edge[self.parent_edge >= 0])

    def depth(self) -> int:
        d = np.zeros(self.parent.size, dtype=np.int64)
        for v in self.order[1:]:
            d[v] = d[self.parent[v]] + 1
        return int(d.max())


@dataclass(frozen=True)
class DualTree:
    """BFS tree over cells plus the outside vertex (numbered ``num_cells``)."""

    outside: int
    parent: np.ndarray  # parent cell, ``outside`` for the first layer
    parent_facet: np.ndarray  # facet crossed to reach the parent
    order: np.ndarray  # BFS order of the cells

    @property
    def facets(self) -> np.ndarray:
        return np.sort(self.parent_facet)

    def depth(self) -> int:
        d = np.zeros(self.parent.size, dtype=np.int64)
        for c in self.order:
            p = self.parent[c]
            d[c] = 1 if p == self.outside else d[p] + 1
        return int(d.max())


@dataclass(frozen=True)
class TreePartition:
    """Bar/ring index sets for every form degree, plus the trees behind them."""

    dim: int
    counts: tuple[int, ...]
    node_tree: NodeTree
    dual_tree: DualTree
    bar: tuple[np.ndarray, ...]
    ring: tuple[np.ndarray, ...]

    @property
    def root(self) -> int:
        return self.node_tree.root

    def bar_free(self, k: int) -> np.ndarray:
        """Bar DOFs that are actual unknowns: the root node is dropped for k = 0."""
        if k < 0 or k > self.dim:
            return np.zeros(0, dtype=np.int64)
        if k == 0:
            return self.bar[0][self.bar[0] != self.root]
        return self.bar[k]

    def n_bar(self, k: int) -> int:
        return self.bar_free(k).size

    def n_ring(self, k: int) -> int:
        if k < 0 or k > self.dim:
            return 0
        return self.ring[k].size


def nearest_to_center(mesh: SimplicialMesh) -> int:
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    dist = np.linalg.norm(mesh.vertices - 0.5 * (lo + hi), axis=1)
    return int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])


def build_dual_tree(mesh: SimplicialMesh) -> DualTree:
    """Breadth-first spanning tree of the dual graph, rooted outside the domain."""
    n = mesh.dim
    nc = mesh.num(n)
    cell_facets = np.sort(mesh.cell_faces(n - 1), axis=1)
    nf = mesh.num(n - 1)
    # facet -> up to two cells; -1 marks the outside
    owners = np.full((nf, 2), -1, dtype=np.int64)
    fill = np.zeros(nf, dtype=np.int64)
    for c in range(nc):
        for f in cell_facets[c]:
            owners[f, fill[f]] = c
            fill[f] += 1
    if np.any(fill == 0):
        raise TreeError("facet without a cell")

    parent = np.full(nc, -1, dtype=np.int64)
    parent_facet = np.full(nc, -1, dtype=np.int64)
    visited = np.zeros(nc, dtype=bool)
    order = []
    queue = deque()
    for f in np.flatnonzero(fill == 1):
        c = owners[f, 0]
        if not visited[c]:
            visited[c] = True
            parent[c], parent_facet[c] = nc, f
            order.append(c)
            queue.append(c)
    while queue:
        c = queue.popleft()
        for f in cell_facets[c]:
            other = owners[f, 1] if owners[f, 0] == c else owners[f, 0]
            if other >= 0 and not visited[other]:
                visited[other] = True
                parent[other], parent_facet[other] = c, f
                order.append(other)
                queue.append(other)
    if not visited.all():
        raise TreeError("dual graph is disconnected")
    return DualTree(nc, parent, parent_facet, np.array(order, dtype=np.int64))


def _bfs_over_edges(num_nodes: int, edges: np.ndarray, edge_ids: np.ndarray, root: int):
    """BFS on the graph with the given edges, neighbours by ascending edge id."""
    order_ids = np.argsort(edge_ids, kind="stable")
    adj = [[] for _ in range(num_nodes)]
    for e in order_ids:
        a, b = edges[e]
        adj[a].append((edge_ids[e], b))
        adj[b].append((edge_ids[e], a))
    parent = np.full(num_nodes, -1, dtype=np.int64)
    parent_edge = np.full(num_nodes, -1, dtype=np.int64)
    visited = np.zeros(num_nodes, dtype=bool)
    visited[root] = True
    order = [root]
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for eid, w in adj[v]:
            if not visited[w]:
                visited[w] = True
                parent[w], parent_edge[w] = v, eid
                order.append(w)
                queue.append(w)
    if not visited.all():
        raise TreeError("vertex graph is disconnected")
    return NodeTree(root, parent, parent_edge, np.array(order, dtype=np.int64))


def build_node_tree(mesh: SimplicialMesh, root: int | None = None) -> NodeTree:
    """Breadth-first spanning tree of the vertices, rooted nearest the center."""
    root = nearest_to_center(mesh) if root is None else int(root)
    edges = mesh.simplices[1]
    return _bfs_over_edges(mesh.num(0), edges, np.arange(edges.shape[0]), root)


def complement_node_tree(mesh: SimplicialMesh, dual: DualTree) -> NodeTree:
    """2D only: the edges not crossed by the dual tree, as a rooted node tree."""
    ne = mesh.num(1)
    nv = mesh.num(0)
    ids = complement(dual.facets, ne)
    if ids.size != nv - 1:
        raise TreeError("complement of the dual tree has the wrong size")
    edges = mesh.simplices[1][ids]
    graph = sps.coo_array((np.ones(ids.size), (edges[:, 0], edges[:, 1])), shape=(nv, nv))
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise TreeError("complement of the dual tree is not a spanning tree")
    local = _bfs_over_edges(nv, edges, ids, nearest_to_center(mesh))
    return local


def dof_partition(mesh: SimplicialMesh, node_tree: NodeTree, dual_tree: DualTree) -> TreePartition:
    n = mesh.dim
    counts = mesh.counts
    bar: list[np.ndarray] = [None] * (n + 1)
    ring: list[np.ndarray] = [None] * (n + 1)
    bar[0] = np.arange(counts[0])
    ring[0] = np.zeros(0, dtype=np.int64)
    bar[n] = np.zeros(0, dtype=np.int64)
    ring[n] = np.arange(counts[n])
    bar[n - 1] = dual_tree.facets
    ring[n - 1] = complement(bar[n - 1], counts[n - 1])
    if n == 3:
        ring[1] = node_tree.edges
        bar[1] = complement(ring[1], counts[1])
    elif not np.array_equal(ring[1], node_tree.edges):
        raise TreeError("node tree is not the complement of the dual tree")
    part = TreePartition(n, counts, node_tree, dual_tree, tuple(bar), tuple(ring))
    for k in range(n):
        if part.n_bar(k) != part.n_ring(k + 1):
            raise TreeError(f"dimension mismatch between degrees {k} and {k + 1}")
    return part


def build_partition(mesh: SimplicialMesh) -> TreePartition:
    """Trees and DOF splitting for a mesh, following the dimension-specific recipe."""
    dual = build_dual_tree(mesh)
    if mesh.dim == 2:
        nodes = complement_node_tree(mesh, dual)
    else:
        nodes = build_node_tree(mesh)
    return dof_partition(mesh, nodes, dual)


def coupling_block(fc: FormComplex, part: TreePartition, k: int) -> sps.csr_array:
    """Rows ring_k, columns free bar_{k-1} of D_{k-1}."""
    return submatrix(fc.diff(k - 1), part.ring[k], part.bar_free(k - 1))


def verify_p_permitting(fc: FormComplex, part: TreePartition) -> dict[int, dict]:
    """Check that every coupling block is square and invertible.

    Returns:
        Per degree k (1..n): block shape, smallest LU pivot and whether the
        block can be permuted to triangular form.

    Raises:
        TreeError: if a block is not square or is singular.
    """
    report = {}
    for k in range(1, fc.dim + 1):
        B = coupling_block(fc, part, k)
        if B.shape[0] != B.shape[1]:
            raise TreeError(f"coupling block for k={k} has shape {B.shape}")
        try:
            lu = LUFactor(B)
        except SingularMatrixError as exc:
            raise TreeError(f"coupling block for k={k} is singular") from exc
        report[k] = {
            "shape": B.shape,
            "min_pivot": lu.min_pivot,
            "triangular": find_triangular_order(B) is not None,
        }
    return report


def format_partition(part: TreePartition) -> str:
    """ASCII listing of the index sets and parent arrays."""
    lines = [f"partition dim {part.dim}", f"counts {' '.join(map(str, part.counts))}"]
    lines.append(f"node_root {part.root}")
    lines.append(f"dual_outside {part.dual_tree.outside}")
    for k in range(part.dim + 1):
        lines.append(f"degree {k} bar {part.bar[k].size} ring {part.ring[k].size}")
        lines.append("bar " + " ".join(map(str, part.bar[k])))
        lines.append("ring " + " ".join(map(str, part.ring[k])))
    lines.append("node_parent " + " ".join(map(str, part.node_tree.parent)))
    lines.append("node_parent_edge " + " ".join(map(str, part.node_tree.parent_edge)))
    lines.append("dual_parent " + " ".join(map(str, part.dual_tree.parent)))
    lines.append("dual_parent_facet " + " ".join(map(str, part.dual_tree.parent_facet)))
    return "\n".join(line.rstrip() for line in lines) + "\n"
