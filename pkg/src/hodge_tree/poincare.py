"""The tree-based Poincaré operator p with dp + pd = I.

For a k-form u, p u is found by solving the square coupling block between the
ring DOFs of degree k and the bar DOFs of degree k - 1. All vectors are kept
full length with zeros off their support. Results in degree 0 are shifted to
have zero L2 mean, which is how the quotient by constants is represented.
"""

from __future__ import annotations

import numpy as np

from .linalg import LUFactor, TreeTriangular, find_triangular_order
from .trees import TreePartition, coupling_block, verify_p_permitting
from .whitney import FormComplex


class BlockSolver:
    """Solves with a coupling block and its transpose.

    Uses substitution along the tree when the block is permutable to
    triangular form, and a sparse LU otherwise.
    """

    def __init__(self, B):
        self.B = B
        self.shape = B.shape
        order = find_triangular_order(B)
        self.triangular = order is not None
        if self.triangular:
            rows, cols = order
            self._fwd = TreeTriangular(B, rows, cols)
            self._bwd = TreeTriangular(B.T, cols[::-1], rows[::-1])
        else:
            self._lu = LUFactor(B)

    @property
    def row_ops(self) -> int:
        return self._fwd.row_ops + self._bwd.row_ops if self.triangular else 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._fwd.solve(b) if self.triangular else self._lu.solve(b)

    def solve_transpose(self, b: np.ndarray) -> np.ndarray:
        return self._bwd.solve(b) if self.triangular else self._lu.solve(b, trans=True)


class PoincareOperator:
    """Poincaré operator of a Whitney complex for a given tree partition."""

    def __init__(self, fc: FormComplex, part: TreePartition, check: bool = True):
        self.fc = fc
        self.part = part
        self.dim = fc.dim
        if check:
            verify_p_permitting(fc, part)
        self.blocks = {k: BlockSolver(coupling_block(fc, part, k)) for k in range(1, self.dim + 1)}
        M0 = fc.mass(0)
        self._m0_ones = M0 @ np.ones(fc.n(0))
        self._volume = float(self._m0_ones.sum())

    def center(self, u: np.ndarray) -> np.ndarray:
        """Zero L2-mean representative of a nodal function."""
        return u - (self._m0_ones @ u) / self._volume

    def d(self, k: int, u: np.ndarray) -> np.ndarray:
        """d_k, with d_n = 0 (into the zero space) and d_{-1} = 0."""
        if k < 0:
            return np.zeros(self.fc.n(0))
        if k >= self.dim:
            return np.zeros(0)
        return self.fc.diff(k) @ u

    def apply(self, k: int, u: np.ndarray) -> np.ndarray:
        """p_k u for a k-form u; p_0 and p_{n+1} map into zero spaces."""
        if k <= 0:
            return np.zeros(0)
        if k > self.dim:
            return np.zeros(self.fc.n(self.dim))
        u = np.asarray(u, dtype=float)
        if u.shape != (self.fc.n(k),):
            raise ValueError(f"expected a vector of length {self.fc.n(k)}")
        x = self.blocks[k].solve(u[self.part.ring[k]])
        out = np.zeros(self.fc.n(k - 1))
        out[self.part.bar_free(k - 1)] = x
        if k == 1:
            out = self.center(out)
        return out

    __call__ = apply

    def decompose(self, k: int, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Split u = ubar + d vbar with ubar = p d u and vbar = p u."""
        ubar = self.apply(k + 1, self.d(k, u))
        vbar = self.apply(k, u)
        return ubar, vbar

    def reconstruct(self, k: int, ubar: np.ndarray, vbar: np.ndarray) -> np.ndarray:
        if k == 0:
            return ubar.copy()
        return ubar + self.fc.diff(k - 1) @ vbar

    def identity_residual(self, k: int, u: np.ndarray) -> float:
        """Relative defect ||d p u + p d u - u|| / ||u||.

        For k = 0 the target is the zero-mean representative of u.
        """
        target = self.center(u) if k == 0 else u
        ubar, vbar = self.decompose(k, u)
        r = self.reconstruct(k, ubar, vbar) - target
        return _rel(r, target)

    def dpd_defect(self, k: int, u: np.ndarray) -> float:
        """Relative defect of d p d = d on u (zero when d u = 0)."""
        du = self.d(k, u)
        if du.size == 0 or not np.any(du):
            return 0.0
        return _rel(du - self.d(k, self.apply(k + 1, du)), du)

    def pd_projection_defect(self, k: int, u: np.ndarray) -> float:
        """||(pd)^2 u - (pd) u|| / ||u||."""
        pdu = self.apply(k + 1, self.d(k, u))
        pdpdu = self.apply(k + 1, self.d(k, pdu))
        return _rel(pdpdu - pdu, u)

    def nilpotence_defect(self, k: int, u: np.ndarray) -> float:
        """||p p u|| / ||u||."""
        return _rel(self.apply(k - 1, self.apply(k, u)), u)


def poincare_identity_residual(op: PoincareOperator, k: int, u) -> float:
    return op.identity_residual(k, np.asarray(u, dtype=float))


def dpd_projection_check(op: PoincareOperator, k: int, u) -> float:
    return op.dpd_defect(k, np.asarray(u, dtype=float))


def _rel(r: np.ndarray, ref: np.ndarray) -> float:
    nref = np.linalg.norm(ref)
    if nref == 0:
        return float(np.linalg.norm(r))
    return float(np.linalg.norm(r) / nref)
