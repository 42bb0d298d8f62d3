"""Auxiliary space preconditioning of the weighted projection problem.

The projection problem on degree k is

    alpha^2 (u, u') + (du, du') = <f, u'>,   0 < alpha <= 1,

with matrix alpha^2 M_k + D_k^T M_{k+1} D_k. The preconditioner combines an
exact solve on the bar DOFs of degree k with a scaled solve on the bar DOFs
of degree k - 1 mapped through the differential. This module also computes
the Poincaré constants of the bar subspaces and the spectral quantities they
bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sps

from .hodge import bar_stiffness
from .linalg import SPDFactor, extreme_gen_eigs, gen_eig_max, minres, submatrix
from .poincare import PoincareOperator
from .trees import TreePartition
from .whitney import FormComplex

#: Dense eigensolves are used as oracles below this many DOFs.
DENSE_LIMIT = 2000


def projection_matrix(fc: FormComplex, k: int, alpha: float) -> sps.csr_array:
    _check_alpha(alpha)
    return sps.csr_array(alpha**2 * fc.mass(k) + fc.stiffness(k))


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


@dataclass
class ProjectionProblem:
    k: int
    alpha: float
    f: np.ndarray
    fc: FormComplex

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not 1 <= self.k <= self.fc.dim - 1:
            raise ValueError(f"projection problem needs 1 <= k <= {self.fc.dim - 1}")

    @property
    def matrix(self) -> sps.csr_array:
        return projection_matrix(self.fc, self.k, self.alpha)


class AuxPreconditioner:
    """P r = S Abar_k^{-1} S^T r + Dbar (alpha^2 Abar_{k-1})^{-1} Dbar^T r.

    S selects the bar DOFs of degree k and Dbar is d_{k-1} on the bar DOFs of
    degree k - 1. Both inner matrices are factorized once.
    """

    def __init__(self, fc: FormComplex, part: TreePartition, k: int, alpha: float):
        _check_alpha(alpha)
        if not 1 <= k <= fc.dim - 1:
            raise ValueError(f"preconditioner needs 1 <= k <= {fc.dim - 1}")
        self.k = k
        self.alpha = alpha
        self.n = fc.n(k)
        self.bar = part.bar_free(k)
        self.Dbar = sps.csr_array(fc.diff(k - 1)[:, part.bar_free(k - 1)])
        self.DbarT = sps.csr_array(self.Dbar.T)
        self.inner_k = SPDFactor(bar_stiffness(fc, part, k))
        self.inner_km1 = SPDFactor(bar_stiffness(fc, part, k - 1))

    def apply(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.bar] = self.inner_k.solve(r[self.bar])
        out += self.Dbar @ (self.inner_km1.solve(self.DbarT @ r) / self.alpha**2)
        return out

    __call__ = apply


def pminres(
    fc: FormComplex,
    part: TreePartition,
    k: int,
    alpha: float,
    f: np.ndarray,
    rel_tol: float = 1e-8,
    max_iter: int = 1000,
    precond: AuxPreconditioner | None = None,
):
    """Preconditioned MINRES on the projection problem.

    Returns:
        (u, iterations, converged)
    """
    A = projection_matrix(fc, k, alpha)
    P = precond or AuxPreconditioner(fc, part, k, alpha)
    return minres(A.__matmul__, f, P.apply, rel_tol=rel_tol, max_iter=max_iter)


def estimate_condition(
    fc: FormComplex,
    part: TreePartition,
    k: int,
    alpha: float,
    tol: float = 1e-6,
    precond: AuxPreconditioner | None = None,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Spectral condition number of the preconditioned projection operator.

    Returns:
        (kappa, lambda_min, lambda_max)
    """
    A = projection_matrix(fc, k, alpha)
    P = precond or AuxPreconditioner(fc, part, k, alpha)
    lo, hi = extreme_gen_eigs(A.__matmul__, P.apply, A.shape[0], tol=tol, seed=seed)
    return hi / lo, lo, hi


def condition_dense(fc, part, k: int, alpha: float) -> float:
    """Dense oracle: eigenvalues of P A computed from explicit matrices."""
    A = projection_matrix(fc, k, alpha).toarray()
    P = AuxPreconditioner(fc, part, k, alpha)
    Pm = np.column_stack([P.apply(e) for e in np.eye(A.shape[0])])
    L = np.linalg.cholesky(A)
    S = L.T @ Pm @ L  # similar to P A
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    return lam[-1] / lam[0]


# --------------------------------------------------------------------------
# Poincaré constants


def _nodal_pencil(fc: FormComplex, part: TreePartition):
    """Mass, pinned solver and constant vector for the zero-mean nodal space."""
    free = part.bar_free(0)
    A_pin = SPDFactor(submatrix(fc.stiffness(0), free, free))
    n0 = fc.n(0)

    def solve(b):
        x = np.zeros(n0)
        x[free] = A_pin.solve(b[free])
        return x

    return fc.mass(0), solve, np.ones(n0)


def poincare_constant(
    fc: FormComplex,
    part: TreePartition,
    k: int,
    tol: float = 1e-10,
    method: str = "lanczos",
    seed: int = 0,
    return_vector: bool = False,
    max_iter: int = 2000,
):
    """sup ||u|| / ||du|| over the bar subspace of degree k.

    For k = 0 the supremum runs over zero-mean nodal functions; the pencil is
    deflated by constants in the L2 inner product.
    """
    if not 0 <= k <= fc.dim - 1:
        raise ValueError(f"Poincaré constant needs 0 <= k <= {fc.dim - 1}")
    if k == 0:
        M, solve, deflation = _nodal_pencil(fc, part)
        lam, vec = gen_eig_max(
            M, solve, deflation, tol, max_iter, method, seed, return_vector=True
        )
    else:
        idx = part.bar_free(k)
        M = submatrix(fc.mass(k), idx, idx)
        A = SPDFactor(bar_stiffness(fc, part, k))
        lam, x = gen_eig_max(M, A.solve, None, tol, max_iter, method, seed, return_vector=True)
        vec = np.zeros(fc.n(k))
        vec[idx] = x
    c = float(np.sqrt(lam))
    return (c, vec) if return_vector else c


def _zero_mean_basis(fc: FormComplex, part: TreePartition) -> np.ndarray:
    """Dense (n0, n0 - 1) basis of L2 zero-mean nodal functions."""
    n0 = fc.n(0)
    m = fc.mass(0) @ np.ones(n0)
    Z = np.eye(n0)[:, part.bar_free(0)]
    return Z - np.outer(np.ones(n0), m @ Z) / m.sum()


def poincare_constant_dense(fc: FormComplex, part: TreePartition, k: int) -> float:
    """Dense generalized eigensolve oracle for the Poincaré constant."""
    if k == 0:
        Z = _zero_mean_basis(fc, part)
        M = Z.T @ fc.mass(0).toarray() @ Z
        A = Z.T @ fc.stiffness(0).toarray() @ Z
    else:
        idx = part.bar_free(k)
        M = submatrix(fc.mass(k), idx, idx).toarray()
        A = bar_stiffness(fc, part, k).toarray()
    lam = scipy.linalg.eigh(M, A, eigvals_only=True)
    return float(np.sqrt(lam[-1]))


def poincare_upper_bound_check(
    fc: FormComplex,
    op: PoincareOperator,
    k: int,
    samples: int,
    rng: np.random.Generator,
    orthogonal: bool = False,
) -> float:
    """Largest sampled ratio ||u|| / ||du|| over a complement of ker d.

    By default u = p d w for random w, which spans the bar subspace. With
    ``orthogonal=True`` u is the L2-orthogonal projection of w away from
    ker d = ran d_{k-1} instead.
    """
    Mk = fc.mass(k)
    Mk1 = fc.mass(k + 1)
    D = fc.diff(k)
    if orthogonal and k > 0:
        Dm = fc.diff(k - 1)
        gram = SPDFactor(bar_stiffness(fc, op.part, k - 1))
        free = op.part.bar_free(k - 1)
    worst = 0.0
    for _ in range(samples):
        w = rng.uniform(-1.0, 1.0, fc.n(k))
        if not orthogonal:
            u = op.apply(k + 1, D @ w)
        elif k == 0:
            u = op.center(w)
        else:
            # remove the M-orthogonal projection onto d(bar space of degree k-1)
            z = np.zeros(fc.n(k - 1))
            z[free] = gram.solve((Dm.T @ (Mk @ w))[free])
            u = w - Dm @ z
        du = D @ u
        den = np.sqrt(du @ (Mk1 @ du))
        if den > 0:
            worst = max(worst, float(np.sqrt(u @ (Mk @ u)) / den))
    return worst


def infsup_lower_bound(cbar_prev: float) -> float:
    """1 / sqrt(c^2 + 1) for the Poincaré constant of degree k - 1."""
    return 1.0 / np.sqrt(cbar_prev**2 + 1.0)


def infsup_dense(fc: FormComplex, part: TreePartition, k: int) -> float:
    """Dense oracle for the discrete inf-sup constant of the pair (k-1, k).

    inf over u in ker d_k of sup over v of (dv, u) / (||v||_H ||u||_H).
    Since ker d_k = d(bar space of degree k-1), u = D z and the constant is
    the square root of the smallest eigenvalue of a dense pencil. For such u
    the H norm equals the L2 norm.
    """
    if not 1 <= k <= fc.dim:
        raise ValueError("inf-sup constant needs 1 <= k <= n")
    j = k - 1
    Mk = fc.mass(k).toarray()
    Dz = fc.diff(j).toarray()[:, part.bar_free(j)]
    # constants are H-orthogonal to zero-mean nodal functions, so the sup over
    # v may run over the full coefficient space for j = 0 as well
    H = fc.mass(j).toarray() + fc.stiffness(j).toarray()
    B = fc.diff(j).toarray().T @ Mk @ Dz
    X = B.T @ np.linalg.solve(H, B)
    Y = Dz.T @ Mk @ Dz
    lam = scipy.linalg.eigh(0.5 * (X + X.T), Y, eigvals_only=True)
    return float(np.sqrt(lam[0]))


# --------------------------------------------------------------------------
# stability of the transfers and the decomposition


@dataclass
class StabilityReport:
    samples: int
    violations: int
    max_slack_transfer: float  # max lhs / rhs of the bar transfer bound
    max_slack_decomposition: float  # max lhs / rhs of the decomposition bound
    max_transfer2_defect: float  # relative defect of the exact d-transfer identity
    max_energy_defect: float  # max | ||d ubar|| - ||d u|| | / ||d u||


def stability_inequalities_check(
    fc: FormComplex,
    op: PoincareOperator,
    k: int,
    alpha: float,
    cbar: float,
    samples: int,
    rng: np.random.Generator,
    energy_tol: float = 1e-10,
) -> StabilityReport:
    """Sample the transfer and decomposition stability bounds."""
    _check_alpha(alpha)
    part = op.part
    Mk, Mk1, Mkm1 = fc.mass(k), fc.mass(k + 1), fc.mass(k - 1)
    D, Dm = fc.diff(k), fc.diff(k - 1)

    def sq(M, x):
        return float(x @ (M @ x))

    violations = 0
    slack1 = slack3 = defect2 = energy = 0.0
    bar_k, bar_km1 = part.bar_free(k), part.bar_free(k - 1)
    for _ in range(samples):
        ubar = np.zeros(fc.n(k))
        ubar[bar_k] = rng.uniform(-1.0, 1.0, bar_k.size)
        dub = sq(Mk1, D @ ubar)
        lhs = alpha**2 * sq(Mk, ubar) + dub
        rhs = (cbar**2 + 1.0) * dub
        slack1 = max(slack1, lhs / rhs)
        violations += lhs > rhs * (1 + 1e-12)

        vbar = np.zeros(fc.n(k - 1))
        vbar[bar_km1] = rng.uniform(-1.0, 1.0, bar_km1.size)
        dv = Dm @ vbar
        lhs2 = alpha**2 * sq(Mk, dv) + sq(Mk1, D @ dv)
        rhs2 = alpha**2 * sq(Mk, dv)
        defect2 = max(defect2, abs(lhs2 - rhs2) / rhs2)

        u = rng.uniform(-1.0, 1.0, fc.n(k))
        ub, vb = op.decompose(k, u)
        du = sq(Mk1, D @ u)
        d_ub = sq(Mk1, D @ ub)
        lhs3 = d_ub + alpha**2 * sq(Mk, Dm @ vb)
        rhs3 = 2 * alpha**2 * sq(Mk, u) + (1 + 2 * cbar**2) * du
        slack3 = max(slack3, lhs3 / rhs3)
        violations += lhs3 > rhs3 * (1 + 1e-12)
        e = abs(np.sqrt(d_ub) - np.sqrt(du)) / np.sqrt(du)
        energy = max(energy, float(e))
        violations += e > energy_tol
    return StabilityReport(samples, int(violations), slack1, slack3, defect2, energy)
