"""Mixed Hodge-Laplace problem: sequential tree-based solver and reference solve.

The discrete problem on degrees (k-1, k) reads

    (v, v') - (u, dv') = <g, v'>        for all v'
    (dv, u') + (du, du') = <f, u'>      for all u'

In the basis given by u = ubar + d vbar it splits into four SPD problems with
bar-restricted stiffness matrices, solved one after the other.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .linalg import SolverError, SPDFactor, minres, submatrix
from .poincare import PoincareOperator
from .trees import TreePartition
from .whitney import FormComplex


class SubproblemError(SolverError):
    """A subproblem solve failed; ``name`` identifies which one."""

    def __init__(self, name: str, cause: Exception):
        super().__init__(f"{name}: {cause}")
        self.name = name


@dataclass
class HodgeLaplaceProblem:
    k: int
    g: np.ndarray
    f: np.ndarray
    fc: FormComplex
    part: TreePartition
    op: PoincareOperator

    def __post_init__(self):
        n = self.fc.dim
        if not 1 <= self.k <= n:
            raise ValueError(f"form degree must be in [1, {n}], got {self.k}")
        self.g = np.asarray(self.g, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.g.shape != (self.fc.n(self.k - 1),) or self.f.shape != (self.fc.n(self.k),):
            raise ValueError("right-hand side sizes do not match the spaces")

    @property
    def dimension(self) -> int:
        """n_{k-1} + n_k, counting the nodal space modulo constants."""
        return space_dim(self.fc, self.k - 1) + space_dim(self.fc, self.k)


@dataclass
class Subproblem:
    name: str
    dofs: int
    seconds: float = 0.0
    iterations: int = 0


@dataclass
class HodgeLaplaceSolution:
    v: np.ndarray
    u: np.ndarray
    method: str
    subproblems: list[Subproblem]
    residual_eq1: float
    residual_eq2: float
    seconds: float
    parts: dict = field(default_factory=dict, repr=False)

    @property
    def total_dofs(self) -> int:
        return sum(s.dofs for s in self.subproblems)


def space_dim(fc: FormComplex, k: int) -> int:
    if k < 0 or k > fc.dim:
        return 0
    return fc.n(k) - 1 if k == 0 else fc.n(k)


def random_problem(fc, part, op, k: int, rng: np.random.Generator) -> HodgeLaplaceProblem:
    """Right-hand sides uniform in [-1, 1]; g on nodes is made to vanish on constants."""
    g = rng.uniform(-1.0, 1.0, fc.n(k - 1))
    f = rng.uniform(-1.0, 1.0, fc.n(k))
    if k == 1:
        m1 = fc.mass(0) @ np.ones(fc.n(0))
        g -= g.sum() / m1.sum() * m1
    return HodgeLaplaceProblem(k, g, f, fc, part, op)


def residuals(problem: HodgeLaplaceProblem, v: np.ndarray, u: np.ndarray):
    """Residual vectors of the two original equations."""
    fc, k = problem.fc, problem.k
    D = fc.diff(k - 1)
    Mk_u = fc.mass(k) @ u
    r1 = fc.mass(k - 1) @ v - D.T @ Mk_u - problem.g
    r2 = fc.mass(k) @ (D @ v) - problem.f
    if k < fc.dim:
        r2 = r2 + fc.stiffness(k) @ u
    return r1, r2


def _scale(problem) -> float:
    s = np.sqrt(problem.g @ problem.g + problem.f @ problem.f)
    return s if s > 0 else 1.0


def _finish(problem, v, u, method, subs, seconds, parts=None) -> HodgeLaplaceSolution:
    r1, r2 = residuals(problem, v, u)
    s = _scale(problem)
    return HodgeLaplaceSolution(
        v, u, method, subs, np.linalg.norm(r1) / s, np.linalg.norm(r2) / s, seconds, parts or {}
    )


def bar_stiffness(fc: FormComplex, part: TreePartition, j: int) -> sps.csr_array:
    """Stiffness A_j restricted to the free bar DOFs of degree j."""
    idx = part.bar_free(j)
    return submatrix(fc.stiffness(j), idx, idx)


def _timed(fn, repeats: int):
    times, out = [], None
    for _ in range(max(repeats, 1)):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, float(np.median(times))


def _spd_subproblem(name, A, rhs, sub_tol, repeats, backend):
    def run():
        solver = SPDFactor(A, rel_tol=sub_tol, method=backend)
        return solver.solve(rhs), solver.iterations

    try:
        (x, its), secs = _timed(run, repeats)
    except SolverError as exc:
        raise SubproblemError(name, exc) from exc
    return x, Subproblem(name, A.shape[0], secs, its)


def _scatter(part, j, x, n, center=None):
    out = np.zeros(n)
    out[part.bar_free(j)] = x
    if j == 0 and center is not None:
        out = center(out)
    return out


def solve_four_step(
    problem: HodgeLaplaceProblem,
    sub_tol: float = 1e-12,
    repeats: int = 1,
    backend: str = "auto",
) -> HodgeLaplaceSolution:
    """Sequential solve through the four bar-restricted SPD problems."""
    fc, part, op, k = problem.fc, problem.part, problem.op, problem.k
    g, f = problem.g, problem.f
    n = fc.dim
    t_start = time.perf_counter()
    subs = []

    # prob 1: (d vbar, d v') = <f, d v'>
    j = k - 1
    D = fc.diff(j)
    rhs = (D.T @ f)[part.bar_free(j)]
    x, rec = _spd_subproblem("prob1", bar_stiffness(fc, part, j), rhs, sub_tol, repeats, backend)
    subs.append(rec)
    vbar = _scatter(part, j, x, fc.n(j), op.center)

    # prob 2: (d wbar, d w') = <g, d w'> - (vbar, d w')
    wbar = np.zeros(fc.n(k - 2)) if k >= 2 else np.zeros(0)
    if k >= 2:
        Dw = fc.diff(k - 2)
        rhs = (Dw.T @ (g - fc.mass(k - 1) @ vbar))[part.bar_free(k - 2)]
        A = bar_stiffness(fc, part, k - 2)
        x, rec = _spd_subproblem("prob2", A, rhs, sub_tol, repeats, backend)
        wbar = _scatter(part, k - 2, x, fc.n(k - 2), op.center)
    else:
        rec = Subproblem("prob2", 0)
    subs.append(rec)

    # prob 3: (d ubar, d u') = <f, u'> - (d vbar, u')
    ubar = np.zeros(fc.n(k))
    if k < n:
        rhs = (f - fc.mass(k) @ (D @ vbar))[part.bar_free(k)]
        x, rec = _spd_subproblem("prob3", bar_stiffness(fc, part, k), rhs, sub_tol, repeats, backend)
        ubar = _scatter(part, k, x, fc.n(k))
    else:
        rec = Subproblem("prob3", 0)
    subs.append(rec)

    # prob 4: (d vu, d v') = (vbar + d wbar, v') - (ubar, d v') - <g, v'>
    v = vbar + fc.diff(k - 2) @ wbar if k >= 2 else vbar
    rhs = (fc.mass(j) @ v - D.T @ (fc.mass(k) @ ubar) - g)[part.bar_free(j)]
    x, rec = _spd_subproblem("prob4", bar_stiffness(fc, part, j), rhs, sub_tol, repeats, backend)
    subs.append(rec)
    vu = _scatter(part, j, x, fc.n(j), op.center)
    u = ubar + D @ vu

    parts = {"vbar": vbar, "wbar": wbar, "ubar": ubar, "vu": vu}
    return _finish(problem, v, u, "four-step", subs, time.perf_counter() - t_start, parts)


def solve_k_equals_n(
    problem: HodgeLaplaceProblem,
    sub_tol: float = 1e-12,
    repeats: int = 1,
    backend: str = "auto",
) -> HodgeLaplaceSolution:
    """Three-step variant for k = n: two tree substitutions around one SPD solve."""
    fc, part, op, k = problem.fc, problem.part, problem.op, problem.k
    n = fc.dim
    if k != n:
        raise ValueError("solve_k_equals_n requires k = n")
    g, f = problem.g, problem.f
    block = op.blocks[n]
    cell_vol = fc.mesh.volumes  # M_n = diag(1 / vol)
    t_start = time.perf_counter()
    subs = []

    # step 1: (d vbar, u') = <f, u'>, i.e. B vbar = M_n^{-1} f
    reps = max(repeats, 1)
    ops0 = block.row_ops
    x, secs = _timed(lambda: block.solve(cell_vol * f[part.ring[n]]), repeats)
    passes1 = (block.row_ops - ops0) / (reps * fc.n(n))
    vbar = _scatter(part, n - 1, x, fc.n(n - 1))
    subs.append(Subproblem("prob1", x.size, secs))

    # step 2: SPD problem on bar_{n-2}
    Dw = fc.diff(n - 2)
    rhs = (Dw.T @ (g - fc.mass(n - 1) @ vbar))[part.bar_free(n - 2)]
    x, rec = _spd_subproblem("prob2", bar_stiffness(fc, part, n - 2), rhs, sub_tol, repeats, backend)
    subs.append(rec)
    wbar = _scatter(part, n - 2, x, fc.n(n - 2), op.center)
    v = vbar + Dw @ wbar
    subs.append(Subproblem("prob3", 0))

    # step 3: (u, d v') = (v, v') - <g, v'>, i.e. B^T M_n u = rhs
    rhs = (fc.mass(n - 1) @ v - g)[part.bar_free(n - 1)]
    ops0 = block.row_ops
    y, secs = _timed(lambda: block.solve_transpose(rhs), repeats)
    passes3 = (block.row_ops - ops0) / (reps * fc.n(n))
    u = np.zeros(fc.n(n))
    u[part.ring[n]] = y
    u *= cell_vol
    subs.append(Subproblem("prob4", y.size, secs))

    # substitution passes over the cells in steps 1 and 3 (1.0 each when triangular)
    parts = {"vbar": vbar, "wbar": wbar, "tree_passes": (passes1, passes3)}
    return _finish(problem, v, u, "three-step", subs, time.perf_counter() - t_start, parts)


def saddle_point_matrix(fc: FormComplex, k: int) -> sps.csc_array:
    """Symmetric block matrix [[M_{k-1}, E^T], [E, -A_k]] with E = M_k D_{k-1}.

    Its unknowns are (v, w) with u = -w.
    """
    E = fc.mass(k) @ fc.diff(k - 1)
    Ak = fc.stiffness(k) if k < fc.dim else sps.csr_array((fc.n(k), fc.n(k)))
    return sps.csc_array(sps.block_array([[fc.mass(k - 1), E.T], [E, -Ak]]))


def solve_monolithic(
    problem: HodgeLaplaceProblem,
    tol: float = 1e-12,
    repeats: int = 1,
    method: str = "direct",
) -> HodgeLaplaceSolution:
    """Reference solve of the full saddle-point system."""
    fc, k = problem.fc, problem.k
    K = saddle_point_matrix(fc, k)
    rhs = np.concatenate([problem.g, problem.f])
    its = 0

    def run():
        if method == "direct":
            try:
                return spla.splu(K).solve(rhs), 0
            except RuntimeError as exc:
                raise SolverError(f"monolithic factorization failed: {exc}") from exc
        if method == "minres":
            x, it, ok = minres(K.__matmul__, rhs, rel_tol=tol, max_iter=20 * K.shape[0])
            if not ok:
                raise SolverError("monolithic MINRES did not converge")
            return x, it
        raise ValueError(f"unknown method {method!r}")

    t0 = time.perf_counter()
    (x, its), secs = _timed(run, repeats)
    total = time.perf_counter() - t0
    nv = fc.n(k - 1)
    v, u = x[:nv], -x[nv:]
    sub = Subproblem("monolithic", problem.dimension, secs, its)
    sol = _finish(problem, v, u, "monolithic", [sub], total)
    return sol


def solve(problem: HodgeLaplaceProblem, **kwargs) -> HodgeLaplaceSolution:
    """Three-step solver for k = n, four-step otherwise."""
    if problem.k == problem.fc.dim:
        return solve_k_equals_n(problem, **kwargs)
    return solve_four_step(problem, **kwargs)


def inexactness_isolation_check(
    problem: HodgeLaplaceProblem,
    eps: float,
    rng: np.random.Generator,
    perturb: tuple[str, ...] = ("wbar", "vu"),
) -> dict[str, float]:
    """Perturb selected four-step components and compare residual norms.

    Components are named as in ``HodgeLaplaceSolution.parts``: ``vbar``
    (prob 1), ``wbar`` (prob 2), ``ubar`` (prob 3) and ``vu`` (prob 4). Each
    perturbation is a random vector on the component's free bar DOFs of size
    ``eps`` in the energy norm of its subproblem, i.e. ||d delta|| = eps.
    Residuals are measured in the dual norms of H = M + A, so a perturbation
    of size eps in prob 2 changes the first residual by exactly eps.

    Returns:
        Residual norms of both equations before and after.
    """
    fc, part, k = problem.fc, problem.part, problem.k
    sol = solve_four_step(problem)
    comps = {name: sol.parts[name].copy() for name in ("vbar", "wbar", "ubar", "vu")}
    degree = {"vbar": k - 1, "wbar": k - 2, "ubar": k, "vu": k - 1}

    def assemble(c):
        v = c["vbar"] + (fc.diff(k - 2) @ c["wbar"] if k >= 2 else 0.0)
        u = c["ubar"] + fc.diff(k - 1) @ c["vu"]
        return v, u

    def h_factor(j):
        if j == fc.dim:
            return SPDFactor(fc.mass(j))
        return SPDFactor(fc.mass(j) + fc.stiffness(j))

    H1, H2 = h_factor(k - 1), h_factor(k)

    def dual_norms(r):
        return (
            float(np.sqrt(max(r[0] @ H1.solve(r[0]), 0.0))),
            float(np.sqrt(max(r[1] @ H2.solve(r[1]), 0.0))),
        )

    before = dual_norms(residuals(problem, *assemble(comps)))
    for name in perturb:
        j = degree[name]
        idx = part.bar_free(j)
        if idx.size == 0:
            continue
        delta = np.zeros(fc.n(j))
        delta[idx] = rng.uniform(-1.0, 1.0, idx.size)
        d = fc.diff(j) @ delta
        comps[name] += eps * delta / np.sqrt(d @ (fc.mass(j + 1) @ d))
    after = dual_norms(residuals(problem, *assemble(comps)))
    return {
        "eq1_before": before[0],
        "eq1_after": after[0],
        "eq2_before": before[1],
        "eq2_after": after[1],
    }
