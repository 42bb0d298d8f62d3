"""Whitney forms of lowest order on a simplicial mesh.

Degrees of freedom are integrals over k-simplices, so the differentials are
exactly the signed incidence matrices and the n-form basis function of a cell
is its indicator scaled by 1/|T|. Mass matrices are integrated exactly with
the barycentric moment formula.
"""

from __future__ import annotations

import itertools
import math
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from .mesh import SimplicialMesh, signed_incidence


def barycentric_gradients(mesh: SimplicialMesh) -> np.ndarray:
    """(C, n+1, n) gradients of the barycentric coordinates on every cell."""
    pts = mesh.vertices[mesh.cells]
    E = pts[:, 1:, :] - pts[:, :1, :]
    # lambda_{1..n} = E^{-T} (x - p0)
    grads = np.transpose(np.linalg.inv(E), (0, 2, 1))
    return np.concatenate([-grads.sum(axis=1, keepdims=True), grads], axis=1)


def local_mass(mesh: SimplicialMesh, k: int) -> np.ndarray:
    """Local Whitney k-form mass matrices, shape (C, m, m) with m = C(n+1, k+1).

    With w_s = k! sum_i (-1)^i lambda_{s_i} dlambda_{s without s_i}, the entry
    for local faces s, t reduces to products of barycentric moments
    int lambda_a lambda_b = |T| (1 + delta_ab) / ((n+1)(n+2)) and Gram
    determinants of the barycentric gradients.
    """
    n = mesh.dim
    grads = barycentric_gradients(mesh)
    G = np.einsum("cid,cjd->cij", grads, grads)
    vol = mesh.volumes
    moments = np.full((n + 1, n + 1), 1.0) + np.eye(n + 1)
    moments /= (n + 1) * (n + 2)

    faces = list(itertools.combinations(range(n + 1), k + 1))
    m = len(faces)
    out = np.zeros((vol.size, m, m))
    scale = math.factorial(k) ** 2
    for s, a in enumerate(faces):
        for t, b in enumerate(faces):
            if t < s:
                continue
            acc = np.zeros(vol.size)
            for i in range(k + 1):
                ra = a[:i] + a[i + 1 :]
                for j in range(k + 1):
                    rb = b[:j] + b[j + 1 :]
                    if k:
                        det = np.linalg.det(G[:, ra, :][:, :, rb])
                    else:
                        det = 1.0
                    acc += (-1) ** (i + j) * moments[a[i], b[j]] * det
            out[:, s, t] = out[:, t, s] = scale * acc * vol
    return out


def assemble_mass(mesh: SimplicialMesh, k: int) -> sps.csr_array:
    """Global Gram matrix of the Whitney k-form basis."""
    if not 0 <= k <= mesh.dim:
        raise ValueError(f"form degree must be in [0, {mesh.dim}], got {k}")
    if np.any(mesh.volumes <= 0):
        raise ValueError("degenerate element")
    if k == mesh.dim:
        return sps.csr_array(sps.diags_array(1.0 / mesh.volumes))
    local = local_mass(mesh, k)
    dofs = mesh.cell_faces(k)
    m = dofs.shape[1]
    rows = np.repeat(dofs, m, axis=1).ravel()
    cols = np.tile(dofs, (1, m)).ravel()
    N = mesh.num(k)
    M = sps.csr_array((local.ravel(), (rows, cols)), shape=(N, N))
    M.sum_duplicates()
    # exact symmetry, independent of summation order
    return sps.csr_array((M + M.T) * 0.5)


def differential(mesh: SimplicialMesh, k: int) -> sps.csr_array:
    """Matrix of d_k; for integral moments this is the signed incidence."""
    return signed_incidence(mesh, k)


class FormComplex:
    """Mass and differential matrices of the Whitney complex on a mesh.

    Matrices are built on first access and cached.
    """

    dof_convention = "integral"

    def __init__(self, mesh: SimplicialMesh):
        self.mesh = mesh
        self.dim = mesh.dim
        self._mass: dict[int, sps.csr_array] = {}
        self._stiff: dict[int, sps.csr_array] = {}

    @cached_property
    def dof_counts(self) -> tuple[int, ...]:
        return self.mesh.counts

    def n(self, k: int) -> int:
        return self.dof_counts[k] if 0 <= k <= self.dim else 0

    def mass(self, k: int) -> sps.csr_array:
        if k not in self._mass:
            self._mass[k] = assemble_mass(self.mesh, k)
        return self._mass[k]

    def diff(self, k: int) -> sps.csr_array:
        return differential(self.mesh, k)

    def stiffness(self, k: int) -> sps.csr_array:
        """A_k = D_k^T M_{k+1} D_k, the Gram matrix of (du, du')."""
        if not 0 <= k < self.dim:
            raise ValueError(f"stiffness needs 0 <= k < {self.dim}, got {k}")
        if k not in self._stiff:
            D = self.diff(k)
            A = sps.csr_array(D.T @ self.mass(k + 1) @ D)
            self._stiff[k] = sps.csr_array((A + A.T) * 0.5)
        return self._stiff[k]

    def apply_d(self, k: int, u: np.ndarray) -> np.ndarray:
        """d_k u, with d_n = 0."""
        if k >= self.dim:
            return np.zeros(0)
        return self.diff(k) @ u

    def functional_from_density(self, k: int, w: np.ndarray) -> np.ndarray:
        """The dual vector u' -> (w, u') for a coefficient vector w."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n(k),):
            raise ValueError(f"expected {self.n(k)} coefficients, got {w.shape}")
        return self.mass(k) @ w
