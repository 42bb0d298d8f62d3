import numpy as np
import pytest
import scipy.sparse as sps

from conftest import SMALL, setup
from hodge_tree.hodge import (
    HodgeLaplaceProblem,
    inexactness_isolation_check,
    random_problem,
    saddle_point_matrix,
    solve,
    solve_four_step,
    solve_k_equals_n,
    solve_monolithic,
    space_dim,
)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.mark.parametrize("dim, N", SMALL)
def test_sequential_matches_monolithic(dim, N, rng):
    s = setup(dim, N)
    for k in range(1, dim + 1):
        problem = random_problem(s.fc, s.part, s.op, k, rng)
        fast = solve(problem)
        ref = solve_monolithic(problem)
        assert rel(fast.u, ref.u) < 1e-10
        assert rel(fast.v, ref.v) < 1e-10
        assert max(fast.residual_eq1, fast.residual_eq2) < 1e-11


@pytest.mark.parametrize("dim, N", SMALL)
def test_dof_totals(dim, N, rng):
    s = setup(dim, N)
    for k in range(1, dim + 1):
        problem = random_problem(s.fc, s.part, s.op, k, rng)
        fast = solve(problem)
        assert fast.total_dofs == problem.dimension
        assert problem.dimension == space_dim(s.fc, k - 1) + space_dim(s.fc, k)
        names = [sp.name for sp in fast.subproblems]
        assert names == ["prob1", "prob2", "prob3", "prob4"]


def test_subproblem_sizes_3d(rng):
    s = setup(3, 2)
    nb = [s.part.n_bar(j) for j in range(4)]
    sizes = {}
    for k in (1, 2, 3):
        sol = solve(random_problem(s.fc, s.part, s.op, k, rng))
        sizes[k] = [sp.dofs for sp in sol.subproblems]
    assert sizes[1] == [nb[0], 0, nb[1], nb[0]]
    assert sizes[2] == [nb[1], nb[0], nb[2], nb[1]]
    # top degree: (n_bar_2, n_bar_1, 0) with n_bar_2 equal to the cell count
    assert sizes[3][:3] == [nb[2], nb[1], 0]
    assert nb[2] == s.mesh.num(3)


def test_three_step_uses_one_pass_per_substitution(rng):
    s = setup(3, 2)
    sol = solve_k_equals_n(random_problem(s.fc, s.part, s.op, 3, rng))
    assert sol.method == "three-step"
    assert sol.parts["tree_passes"] == (1.0, 1.0)
    with pytest.raises(ValueError):
        solve_k_equals_n(random_problem(s.fc, s.part, s.op, 2, rng))


def test_four_step_also_handles_top_degree(rng):
    s = setup(2, 3)
    problem = random_problem(s.fc, s.part, s.op, 2, rng)
    assert rel(solve_four_step(problem).u, solve_k_equals_n(problem).u) < 1e-10


def test_monolithic_minres(rng):
    s = setup(2, 3)
    problem = random_problem(s.fc, s.part, s.op, 1, rng)
    direct = solve_monolithic(problem)
    it = solve_monolithic(problem, method="minres", tol=1e-12)
    assert rel(it.u, direct.u) < 1e-6
    with pytest.raises(ValueError):
        solve_monolithic(problem, method="qr")


def test_saddle_point_matrix_symmetric():
    s = setup(3, 1)
    K = saddle_point_matrix(s.fc, 2)
    assert abs(K - K.T).max() < 1e-14
    assert K.shape[0] == s.fc.n(1) + s.fc.n(2)


def test_known_solution_recovered():
    # manufacture (v, u), build (g, f), and solve back
    s = setup(3, 2)
    rng = np.random.default_rng(9)
    k = 2
    v = rng.uniform(-1, 1, s.fc.n(1))
    u = rng.uniform(-1, 1, s.fc.n(2))
    D = s.fc.diff(1)
    g = s.fc.mass(1) @ v - D.T @ (s.fc.mass(2) @ u)
    f = s.fc.mass(2) @ (D @ v) + s.fc.stiffness(2) @ u
    sol = solve(HodgeLaplaceProblem(k, g, f, s.fc, s.part, s.op))
    assert rel(sol.v, v) < 1e-10 and rel(sol.u, u) < 1e-10


def test_problem_validation():
    s = setup(2, 1)
    with pytest.raises(ValueError):
        HodgeLaplaceProblem(0, np.zeros(0), np.zeros(4), s.fc, s.part, s.op)
    with pytest.raises(ValueError):
        HodgeLaplaceProblem(1, np.zeros(3), np.zeros(5), s.fc, s.part, s.op)


@pytest.mark.parametrize("dim, k", [(2, 1), (3, 1), (3, 2)])
def test_inexact_substeps_only_touch_first_equation(dim, k):
    s = setup(dim, 2)
    rng = np.random.default_rng(3)
    problem = random_problem(s.fc, s.part, s.op, k, rng)
    out = inexactness_isolation_check(problem, 1e-2, rng)
    assert abs(out["eq2_after"] - out["eq2_before"]) < 1e-12
    assert 1e-3 < out["eq1_after"] < 1e-1
