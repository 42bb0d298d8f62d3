import itertools
import math

import numpy as np
import pytest

from hodge_tree.mesh import complete_from_cells, generate_structured
from hodge_tree.whitney import FormComplex, assemble_mass, barycentric_gradients, local_mass

# ---------------------------------------------------------------------------
# quadrature oracle: collapsed Gauss-Legendre rule on the reference simplex


def simplex_rule(n, m=5):
    x, w = np.polynomial.legendre.leggauss(m)
    x, w = (x + 1) / 2, w / 2
    pts, wts = [], []
    for idx in itertools.product(range(m), repeat=n):
        u = x[list(idx)]
        ww = np.prod(w[list(idx)])
        if n == 2:
            p = [u[0], u[1] * (1 - u[0])]
            jac = 1 - u[0]
        else:
            p = [u[0], u[1] * (1 - u[0]), u[2] * (1 - u[0]) * (1 - u[1])]
            jac = (1 - u[0]) ** 2 * (1 - u[1])
        pts.append(p)
        wts.append(ww * jac)
    return np.array(pts), np.array(wts)


def affine_barycentrics(verts):
    """Coefficients c with lambda_i(x) = c[i, 0] + c[i, 1:] . x."""
    n = verts.shape[1]
    V = np.hstack([np.ones((n + 1, 1)), verts])
    return np.linalg.inv(V).T  # rows: lambda_i


def basis_values(verts, k, pts):
    """Whitney k-form proxies of one simplex at physical points.

    Returns (num_faces, num_points, components).
    """
    n = verts.shape[1]
    C = affine_barycentrics(verts)
    lam = np.hstack([np.ones((len(pts), 1)), pts]) @ C.T  # (P, n+1)
    g = C[:, 1:]  # gradients
    out = []
    for f in itertools.combinations(range(n + 1), k + 1):
        if k == 0:
            val = lam[:, f[0]][:, None]
        elif k == 1:
            a, b = f
            val = lam[:, [a]] * g[b] - lam[:, [b]] * g[a]
        elif k == 2 and n == 3:
            a, b, c = f
            val = 2 * (
                lam[:, [a]] * np.cross(g[b], g[c])
                + lam[:, [b]] * np.cross(g[c], g[a])
                + lam[:, [c]] * np.cross(g[a], g[b])
            )
        else:  # k == n: the constant n! det(grad lambda_1, ..., grad lambda_n)
            val = np.full((len(pts), 1), math.factorial(n) * np.linalg.det(g[1:]))
        out.append(val)
    return np.array(out)


def quadrature_mass(verts, k):
    n = verts.shape[1]
    ref, wts = simplex_rule(n)
    E = (verts[1:] - verts[0]).T
    pts = verts[0] + ref @ E.T
    vol = abs(np.linalg.det(E))
    phi = basis_values(verts, k, pts)
    return np.einsum("spc,tpc,p->st", phi, phi, wts) * vol


def random_simplex(n, rng):
    while True:
        v = rng.uniform(-1, 1, (n + 1, n))
        if abs(np.linalg.det(v[1:] - v[0])) > 0.05:
            return v


# ---------------------------------------------------------------------------


def test_reference_triangle_p1_mass():
    mesh = complete_from_cells(2, [[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    M = assemble_mass(mesh, 0).toarray()
    assert np.allclose(M, (np.ones((3, 3)) + np.eye(3)) / 24, atol=1e-15)


@pytest.mark.parametrize("n", [2, 3])
def test_local_mass_matches_quadrature_on_random_simplices(n):
    rng = np.random.default_rng(7 + n)
    for _ in range(10):
        verts = random_simplex(n, rng)
        mesh = complete_from_cells(n, verts, [list(range(n + 1))])
        for k in range(n + 1):
            if k == n:
                exact = assemble_mass(mesh, k).toarray()
            else:
                exact = local_mass(mesh, k)[0]
            oracle = quadrature_mass(verts, k)
            assert np.allclose(exact, oracle, rtol=1e-12, atol=1e-12 * abs(oracle).max())


def test_top_degree_mass_is_inverse_volume():
    mesh = generate_structured(3, 2)
    M = assemble_mass(mesh, 3)
    assert np.allclose(M.diagonal(), 1.0 / mesh.volumes)
    assert M.nnz == mesh.num(3)


@pytest.mark.parametrize("n", [2, 3])
def test_edge_basis_has_unit_circulation(n):
    # integral DOFs: the circulation of phi_e along edge e is 1, along others 0
    rng = np.random.default_rng(11)
    verts = random_simplex(n, rng)
    s, w = np.polynomial.legendre.leggauss(4)
    s, w = (s + 1) / 2, w / 2
    edges = list(itertools.combinations(range(n + 1), 2))
    for j, (a, b) in enumerate(edges):
        t = verts[b] - verts[a]
        pts = verts[a] + s[:, None] * t
        phi = basis_values(verts, 1, pts)
        circ = np.einsum("fpc,c,p->f", phi, t, w)
        expected = np.zeros(len(edges))
        expected[j] = 1.0
        assert np.allclose(circ, expected, atol=1e-13)


def test_barycentric_gradients_sum_to_zero():
    mesh = generate_structured(3, 2)
    G = barycentric_gradients(mesh)
    assert np.allclose(G.sum(axis=1), 0, atol=1e-12)


@pytest.mark.parametrize("dim, N", [(2, 3), (3, 2)])
def test_mass_matrices_spd_and_symmetric(dim, N):
    fc = FormComplex(generate_structured(dim, N))
    for k in range(dim + 1):
        M = fc.mass(k).toarray()
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0


def test_nodal_stiffness_is_p1_laplacian():
    # D_0^T M_1 D_0 must equal the classical gradient stiffness matrix
    mesh = generate_structured(3, 2)
    fc = FormComplex(mesh)
    G = barycentric_gradients(mesh)
    K = np.zeros((mesh.num(0), mesh.num(0)))
    for c, cell in enumerate(mesh.cells):
        K[np.ix_(cell, cell)] += mesh.volumes[c] * G[c] @ G[c].T
    assert np.allclose(fc.stiffness(0).toarray(), K, atol=1e-12)


def test_constants_integrate_to_area():
    fc = FormComplex(generate_structured(2, 4))
    one = np.ones(fc.n(0))
    assert one @ fc.mass(0) @ one == pytest.approx(1.0, abs=1e-13)


def test_exactness_of_linear_field():
    # interpolating u = x + 2y + 3z: edge DOFs are differences of node values
    mesh = generate_structured(3, 2)
    fc = FormComplex(mesh)
    u = mesh.vertices @ np.array([1.0, 2.0, 3.0])
    e = mesh.simplices[1]
    expected = u[e[:, 1]] - u[e[:, 0]]
    assert np.allclose(fc.apply_d(0, u), expected)
    assert not fc.apply_d(1, fc.apply_d(0, u)).any()


def test_form_complex_accessors():
    fc = FormComplex(generate_structured(2, 1))
    assert fc.dof_counts == (4, 5, 2)
    assert fc.n(-1) == 0 and fc.n(3) == 0
    assert fc.dof_convention == "integral"
    assert fc.apply_d(2, np.ones(2)).size == 0
    with pytest.raises(ValueError):
        fc.stiffness(2)
    with pytest.raises(ValueError):
        assemble_mass(fc.mesh, 3)


def test_functional_from_density():
    mesh = generate_structured(2, 2)
    fc = FormComplex(mesh)
    # the density 1 on every cell has DOFs |T| (cell integrals)
    b = fc.functional_from_density(2, mesh.volumes)
    assert np.allclose(b, 1.0)
    w = np.arange(fc.n(1), dtype=float)
    assert np.allclose(fc.functional_from_density(1, w), fc.mass(1) @ w)
    with pytest.raises(ValueError):
        fc.functional_from_density(1, np.ones(3))
