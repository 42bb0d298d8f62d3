"""Sparse linear algebra used throughout the package.

Matrices are ``scipy.sparse`` CSR arrays. On top of SuperLU this module adds
the pieces the tree-based solvers need: SPD solves that detect indefiniteness,
triangular solves along spanning trees, preconditioned MINRES and Lanczos
eigenvalue estimators.
"""

from __future__ import annotations

import logging
from typing import Callable

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sps
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

Apply = Callable[[np.ndarray], np.ndarray]

#: Systems up to this size are factorized; larger ones go through CG.
DIRECT_LIMIT = 50_000


class SolverError(RuntimeError):
    """Base class for linear solver failures."""


class IndefiniteMatrixError(SolverError):
    """A matrix assumed SPD turned out singular or indefinite."""


class ConvergenceError(SolverError):
    """An iterative method hit its iteration cap.

    Attributes:
        estimate: best available result when the cap was hit.
    """

    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SingularMatrixError(SolverError):
    """LU factorization met a zero pivot.

    Attributes:
        pivot: column index of the offending pivot, when known.
    """

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class StructureError(SolverError):
    """A matrix does not have the triangular structure it was promised."""


# --------------------------------------------------------------------------
# index sets and extraction


def index_set(values, universe: int) -> np.ndarray:
    """Validate and return a strictly ascending index array below ``universe``."""
    idx = np.asarray(values, dtype=np.int64).ravel()
    if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= universe):
        raise ValueError("index set must be strictly ascending and within bounds")
    return idx


def complement(idx: np.ndarray, universe: int) -> np.ndarray:
    mask = np.ones(universe, dtype=bool)
    mask[idx] = False
    return np.flatnonzero(mask)


def submatrix(A, rows, cols) -> sps.csr_array:
    """Rows and columns of ``A`` in the order of the given index arrays."""
    A = sps.csr_array(A)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    for idx, n in ((rows, A.shape[0]), (cols, A.shape[1])):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexError("index set out of bounds")
    return sps.csr_array(A[rows][:, cols])


def selection(idx: np.ndarray, universe: int) -> sps.csr_array:
    """The (universe x |idx|) matrix that scatters a compressed vector."""
    idx = np.asarray(idx, dtype=np.int64)
    return sps.csr_array(
        (np.ones(idx.size), (idx, np.arange(idx.size))), shape=(universe, idx.size)
    )


def write_matrix_market(A, path) -> None:
    """Write ``A`` in coordinate MatrixMarket format (always 'general')."""
    scipy.io.mmwrite(str(path), sps.coo_array(A), symmetry="general")


# --------------------------------------------------------------------------
# direct solvers


def _check_symmetric(A) -> None:
    diff = abs(A - A.T)
    scale = abs(A).max() if A.nnz else 0.0
    if diff.nnz and diff.max() > 1e-12 * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")


class SPDFactor:
    """Solver for a symmetric positive definite sparse matrix.

    Small systems use a SuperLU factorization with a symmetric fill-reducing
    ordering and diagonal pivots only; any off-diagonal pivot or non-positive
    pivot means the matrix is not positive definite. Large systems fall back
    to Jacobi-preconditioned conjugate gradients.
    """

    def __init__(self, A, rel_tol: float = 1e-12, method: str = "auto"):
        A = sps.csc_array(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        _check_symmetric(A)
        self.A = A
        self.rel_tol = rel_tol
        self.n = A.shape[0]
        if method == "auto":
            method = "direct" if self.n < DIRECT_LIMIT else "cg"
        self.method = method
        self.iterations = 0
        if self.n == 0:
            return
        if method == "direct":
            try:
                lu = spla.splu(
                    A,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError as exc:
                raise IndefiniteMatrixError(f"singular matrix: {exc}") from exc
            pivots = lu.U.diagonal()
            if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(pivots <= 0):
                raise IndefiniteMatrixError("matrix is not positive definite")
            self._lu = lu
        elif method == "cg":
            diag = A.diagonal()
            if np.any(diag <= 0):
                raise IndefiniteMatrixError("non-positive diagonal entry")
            self._inv_diag = 1.0 / diag
        else:
            raise ValueError(f"unknown method {method!r}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros(0)
        if self.method == "direct":
            x = self._lu.solve(b)
            # one step of iterative refinement keeps the residual contract
            r = b - self.A @ x
            if np.linalg.norm(r) > self.rel_tol * np.linalg.norm(b):
                x += self._lu.solve(r)
            return x
        x, its = conjugate_gradient(
            self.A.__matmul__, b, lambda r: self._inv_diag * r, self.rel_tol
        )
        self.iterations = its
        return x

    __call__ = solve


def spd_solve(A, b, rel_tol: float = 1e-12, method: str = "auto") -> np.ndarray:
    """Solve ``A x = b`` for SPD ``A`` to relative residual ``rel_tol``."""
    return SPDFactor(A, rel_tol, method).solve(b)


def conjugate_gradient(
    apply_A: Apply,
    b: np.ndarray,
    precond: Apply | None = None,
    rel_tol: float = 1e-12,
    max_iter: int | None = None,
) -> tuple[np.ndarray, int]:
    """Preconditioned CG; returns the solution and the iteration count.

    Raises:
        IndefiniteMatrixError: on a non-positive curvature direction.
        ConvergenceError: if ``max_iter`` is reached.
    """
    precond = precond or (lambda r: r)
    n = b.size
    max_iter = max_iter or 10 * n + 100
    x = np.zeros(n)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        curv = p @ Ap
        if not curv > 0:
            raise IndefiniteMatrixError("non-positive curvature in CG")
        step = rz / curv
        x += step * p
        r -= step * Ap
        if np.linalg.norm(r) <= rel_tol * bnorm:
            return x, it
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError("CG did not converge", estimate=x)


class LUFactor:
    """Pivoted sparse LU of a general square matrix."""

    def __init__(self, A):
        A = sps.csc_array(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        self.A = A
        self.n = A.shape[0]
        if self.n == 0:
            return
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc), pivot=_find_zero_pivot(A)) from exc
        pivots = np.abs(self._lu.U.diagonal())
        tiny = np.finfo(float).eps * max(pivots.max(), 1.0) * self.n
        if np.any(pivots <= tiny):
            j = int(np.argmin(pivots))
            raise SingularMatrixError(
                "matrix is singular to working precision", pivot=int(self._lu.perm_c[j])
            )

    @property
    def min_pivot(self) -> float:
        return float(np.abs(self._lu.U.diagonal()).min()) if self.n else np.inf

    def solve(self, b: np.ndarray, trans: bool = False) -> np.ndarray:
        if self.n == 0:
            return np.zeros(0)
        return self._lu.solve(np.asarray(b, dtype=float), trans="T" if trans else "N")

    __call__ = solve


def _find_zero_pivot(A) -> int | None:
    """Locate the first vanishing pivot by a dense LU (small matrices only)."""
    if A.shape[0] > 2000:
        return None
    _, _, U = scipy.linalg.lu(A.toarray())
    d = np.abs(np.diag(U))
    tiny = np.finfo(float).eps * max(d.max(), 1.0) * A.shape[0]
    bad = np.flatnonzero(d <= tiny)
    return int(bad[0]) if bad.size else None


def lu_solve(A, b) -> np.ndarray:
    return LUFactor(A).solve(b)


# --------------------------------------------------------------------------
# triangular solves along trees


def find_triangular_order(A) -> tuple[np.ndarray, np.ndarray] | None:
    """Find row/column orders that make a square matrix lower triangular.

    Rows with a single remaining nonzero are eliminated one at a time, and
    their column is removed from every other row. For incidence blocks of a
    spanning tree this peels the tree from its leaves (or its root).

    Returns:
        ``(row_order, col_order)`` or None if no such ordering exists.
    """
    A = sps.csr_array(A)
    A.eliminate_zeros()
    n = A.shape[0]
    if A.shape[1] != n:
        return None
    At = sps.csr_array(A.T)
    remaining = np.diff(A.indptr).copy()
    col_done = np.zeros(n, dtype=bool)
    row_done = np.zeros(n, dtype=bool)
    stack = list(np.flatnonzero(remaining == 1)[::-1])
    rows, cols = [], []
    while stack:
        r = stack.pop()
        if row_done[r] or remaining[r] != 1:
            continue
        row_cols = A.indices[A.indptr[r] : A.indptr[r + 1]]
        c = row_cols[~col_done[row_cols]][0]
        row_done[r] = True
        col_done[c] = True
        rows.append(r)
        cols.append(c)
        for r2 in At.indices[At.indptr[c] : At.indptr[c + 1]]:
            if not row_done[r2]:
                remaining[r2] -= 1
                if remaining[r2] == 1:
                    stack.append(r2)
    if len(rows) != n:
        return None
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


class TreeTriangular:
    """Forward substitution for a matrix that is triangular after permutation.

    Rows are grouped into dependency levels once; each level is then solved
    with a single vectorized update, so a solve costs O(nnz) and visits every
    row exactly once. ``row_ops`` counts the rows processed so far.
    """

    def __init__(self, A, row_order, col_order=None):
        A = sps.csr_array(A, dtype=float)
        n = A.shape[0]
        if A.shape[1] != n:
            raise StructureError("triangular solve needs a square matrix")
        row_order = np.asarray(row_order, dtype=np.int64)
        col_order = row_order if col_order is None else np.asarray(col_order, dtype=np.int64)
        if not (
            np.array_equal(np.sort(row_order), np.arange(n))
            and np.array_equal(np.sort(col_order), np.arange(n))
        ):
            raise StructureError("orders must be permutations")
        L = sps.csr_array(A[row_order][:, col_order])
        L.sort_indices()
        coo = L.tocoo()
        if np.any(coo.col > coo.row):
            raise StructureError("matrix is not lower triangular in the given order")
        diag = L.diagonal()
        if np.any(diag == 0):
            raise StructureError("zero on the diagonal")
        strict = sps.csr_array(sps.tril(L, k=-1, format="csr"))

        # level[i] = 1 + max level of the unknowns row i depends on
        level = np.zeros(n, dtype=np.int64)
        for i in range(n):
            deps = strict.indices[strict.indptr[i] : strict.indptr[i + 1]]
            if deps.size:
                level[i] = level[deps].max() + 1
        order = np.argsort(level, kind="stable")
        bounds = np.searchsorted(level[order], np.arange(level.max() + 2))
        self._levels = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            ids = order[lo:hi]
            self._levels.append((ids, sps.csr_array(strict[ids])))
        self._diag = diag
        self._row_order = row_order
        self._col_order = col_order
        self.n = n
        self.depth = len(self._levels)
        self.row_ops = 0

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)[self._row_order]
        y = np.zeros(self.n)
        for ids, block in self._levels:
            y[ids] = (b[ids] - block @ y) / self._diag[ids]
        self.row_ops += self.n
        x = np.empty(self.n)
        x[self._col_order] = y
        return x

    __call__ = solve


def tree_triangular_solve(A, b, row_order, col_order=None) -> np.ndarray:
    """Solve ``A x = b`` where ``A[row_order][:, col_order]`` is lower triangular."""
    return TreeTriangular(A, row_order, col_order).solve(b)


# --------------------------------------------------------------------------
# Krylov methods


def minres(
    apply_A: Apply,
    b: np.ndarray,
    precond: Apply | None = None,
    rel_tol: float = 1e-8,
    max_iter: int = 1000,
    raise_on_failure: bool = False,
) -> tuple[np.ndarray, int, bool]:
    """Preconditioned MINRES for a symmetric operator.

    Convergence is measured in the preconditioned residual norm
    sqrt(r^T P r), relative to its initial value.

    Returns:
        (x, iterations, converged)

    Raises:
        SolverError: if the preconditioner is not positive definite or the
            iteration produces NaNs.
    """
    precond = precond or (lambda r: r)
    n = b.size
    x = np.zeros(n)
    v_old = np.zeros(n)
    v = np.asarray(b, dtype=float).copy()
    z = precond(v)
    gamma = np.sqrt(_positive(z @ v))
    if gamma == 0:
        return x, 0, True
    eta = gamma0 = gamma
    gamma_old = 1.0
    s_old = s = 0.0
    c_old = c = 1.0
    w_old = np.zeros(n)
    w = np.zeros(n)
    for it in range(1, max_iter + 1):
        z = z / gamma
        Az = apply_A(z)
        delta = z @ Az
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = precond(v_new)
        gamma_new = np.sqrt(_positive(z_new @ v_new))

        a0 = c * delta - c_old * s * gamma
        a1 = np.hypot(a0, gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        if a1 == 0 or not np.isfinite(a1):
            raise SolverError("MINRES breakdown")
        c_new, s_new = a0 / a1, gamma_new / a1
        w_new = (z - a3 * w_old - a2 * w) / a1
        x += c_new * eta * w_new
        eta = -s_new * eta
        if not np.all(np.isfinite(x)):
            raise SolverError("MINRES produced non-finite values")

        if abs(eta) <= rel_tol * gamma0 or gamma_new == 0:
            return x, it, True
        v_old, v = v, v_new
        z = z_new
        gamma_old, gamma = gamma, gamma_new
        c_old, c = c, c_new
        s_old, s = s, s_new
        w_old, w = w, w_new
    if raise_on_failure:
        raise ConvergenceError("MINRES did not converge", estimate=x)
    logger.warning("MINRES stopped after %d iterations", max_iter)
    return x, max_iter, False


def _positive(value: float) -> float:
    if value < 0 and abs(value) > 1e-14:
        raise SolverError("preconditioner is not positive definite")
    return max(value, 0.0)


def extreme_gen_eigs(
    A_apply: Apply,
    B_apply_inverse: Apply,
    size: int,
    tol: float = 1e-8,
    max_iter: int | None = None,
    seed: int = 0,
) -> tuple[float, float]:
    """Extreme eigenvalues of B^{-1} A by Lanczos in the B inner product.

    Only the actions of A and of B^{-1} are needed. Lanczos vectors are
    fully reorthogonalized.

    Raises:
        ConvergenceError: when the Ritz values have not settled within
            ``max_iter`` steps; ``estimate`` holds the last (lo, hi).
    """
    rng = np.random.default_rng(seed)
    max_iter = min(max_iter or size, size)
    v = rng.uniform(-1.0, 1.0, size)
    z = B_apply_inverse(v)
    beta = np.sqrt(_positive(z @ v))
    Z, V = [], []
    alphas, betas = [], []
    lo = hi = np.nan
    for it in range(max_iter):
        z = z / beta
        v = v / beta
        Z.append(z)
        V.append(v)
        w = A_apply(z)
        alpha = z @ w
        w = w - alpha * v - (betas[-1] * V[-2] if betas else 0.0)
        for _ in range(2):
            coef = np.array([zi @ w for zi in Z])
            w = w - np.array(V).T @ coef
        alphas.append(alpha)
        zw = B_apply_inverse(w)
        beta = np.sqrt(_positive(zw @ w))
        T = np.diag(alphas)
        if betas:
            T += np.diag(betas, 1) + np.diag(betas, -1)
        theta, Y = np.linalg.eigh(T)
        res = beta * np.abs(Y[-1, [0, -1]])
        lo, hi = theta[0], theta[-1]
        if beta <= 1e-14 * max(abs(hi), 1.0) or np.all(res <= tol * np.abs([lo, hi])):
            return float(lo), float(hi)
        betas.append(beta)
        v, z = w, zw
    if max_iter == size:
        return float(lo), float(hi)
    raise ConvergenceError("Lanczos did not converge", estimate=(float(lo), float(hi)))


def gen_eig_max(
    M,
    A_solve: Apply,
    deflation: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 2000,
    method: str = "lanczos",
    seed: int = 0,
    return_vector: bool = False,
):
    """Largest eigenvalue of ``M u = lambda A u`` through the action of A^{-1}.

    Iterates on A^{-1} M, which is self-adjoint in the M inner product. When a
    deflation vector is given, iterates are kept M-orthogonal to it; this is
    how a singular A with known kernel (constants for the nodal Laplacian) is
    handled together with a pinned ``A_solve``.

    ``method="power"`` runs plain power iteration with a Rayleigh quotient;
    the default Krylov (Lanczos) variant reaches the same eigenvalue in far
    fewer solves when the spectral gap is small.

    Raises:
        ConvergenceError: on stagnation, with the best estimate attached.
    """
    M = sps.csr_array(M)
    n = M.shape[0]
    rng = np.random.default_rng(seed)
    if deflation is not None:
        d = np.asarray(deflation, dtype=float)
        Md = M @ d
        dMd = d @ Md

        def project(x):
            return x - (Md @ x / dMd) * d
    else:

        def project(x):
            return x

    def mnorm(x):
        return np.sqrt(x @ (M @ x))

    q = project(rng.uniform(-1.0, 1.0, n))
    q /= mnorm(q)

    if method == "power":
        lam = 0.0
        for _ in range(max_iter):
            w = project(A_solve(M @ q))
            lam_new = (w @ (M @ q)) / (q @ (M @ q))
            q = w / mnorm(w)
            if abs(lam_new - lam) <= tol * abs(lam_new):
                return (lam_new, q) if return_vector else lam_new
            lam = lam_new
        raise ConvergenceError("power iteration stagnated", estimate=lam)
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")

    Q, MQ = [], []
    alphas, betas = [], []
    lam = np.nan
    for it in range(min(max_iter, n)):
        Mq = M @ q
        Q.append(q)
        MQ.append(Mq)
        w = project(A_solve(Mq))
        alpha = w @ Mq
        w = w - alpha * q - (betas[-1] * Q[-2] if betas else 0.0)
        for _ in range(2):
            w = w - np.array(Q).T @ (np.array(MQ) @ w)
        alphas.append(alpha)
        beta = mnorm(w)
        T = np.diag(alphas)
        if betas:
            T += np.diag(betas, 1) + np.diag(betas, -1)
        theta, Y = np.linalg.eigh(T)
        lam = theta[-1]
        if beta * abs(Y[-1, -1]) <= tol * abs(lam) or beta <= 1e-14 * abs(lam):
            if return_vector:
                return lam, np.array(Q).T @ Y[:, -1]
            return lam
        betas.append(beta)
        q = w / beta
    if len(alphas) == n:
        return (lam, np.array(Q).T @ Y[:, -1]) if return_vector else lam
    raise ConvergenceError("Lanczos eigenvalue iteration stagnated", estimate=lam)
