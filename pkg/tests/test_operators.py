import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compatdg.mesh import SimplexMesh, generate_structured
from compatdg.operators import AssemblyError, assemble, build, dump_triplets, normal_jump, tangential_jump
from compatdg.spaces import DGSpace, FEMSpace


@pytest.fixture(scope="module")
def unit_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return SimplexMesh(verts, np.array([[0, 1, 2]]), (0.0, 1.0, 0.0, 1.0), periodic=False)


def test_single_triangle_lowest_order(unit_triangle):
    ops = build(unit_triangle, 0)
    assert ops.apply_D(np.ones((1, 1)))[0, 0] == pytest.approx(0.5, abs=1e-15)
    # hand-computed: int grad(lambda_p) over the triangle = area * grad(lambda_p)
    expected = {(0.0, 0.0): (-0.5, -0.5), (1.0, 0.0): (0.5, 0.0), (0.0, 1.0): (0.0, 0.5)}
    for p, node in enumerate(ops.fem.ref.nodes):
        np.testing.assert_allclose(ops.stiffness[0, 0, p], expected[tuple(node)], atol=1e-15)


def test_p1_mass_matrix(unit_triangle):
    ops = build(unit_triangle, 0)
    ref = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    np.testing.assert_allclose(ops.mass.toarray(), ref, atol=1e-15)


def test_mass_rows_sum_to_area(ops_by_degree):
    for ops in ops_by_degree.values():
        assert ops.mass.sum() == pytest.approx(1.0, abs=1e-13)
        assert ops.apply_D(np.ones((ops.mesh.n_e, ops.dg.n_loc))).sum() == pytest.approx(1.0, abs=1e-13)


def test_stiffness_kills_constants(ops_by_degree):
    for ops in ops_by_degree.values():
        assert np.abs(ops.stiffness.sum(axis=2)).max() < 1e-13


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_primary_gradient_exact_on_polynomials(degree):
    mesh = generate_structured(4, 3, (0.0, 2.0, 0.0, 1.0), periodic=False)
    ops = build(mesh, degree)
    x, y = ops.fem.coords.T
    k = degree + 1
    g = ops.primary_grad(x**k + x * y**degree)
    # exact derivative at the DG nodes
    from compatdg.spaces import physical_points
    X = physical_points(mesh, ops.dg.ref.nodes)
    gx = k * X[..., 0] ** (k - 1) + X[..., 1] ** degree
    gy = degree * X[..., 0] * X[..., 1] ** max(degree - 1, 0) if degree else 0 * X[..., 0]
    np.testing.assert_allclose(g[..., 0], gx, atol=1e-11)
    np.testing.assert_allclose(g[..., 1], gy, atol=1e-11)


def test_primary_curl_and_div_of_linear_fields(periodic_mesh):
    mesh = generate_structured(3, 3, (0.0, 1.0, 0.0, 1.0), periodic=False)
    ops = build(mesh, 1)
    x, y = ops.fem.coords.T
    A = np.stack([2 * y, -x, 3 * x - 5 * y], axis=-1)
    c = ops.primary_curl(A)
    np.testing.assert_allclose(c[..., 0], -5, atol=1e-12)
    np.testing.assert_allclose(c[..., 1], -3, atol=1e-12)
    np.testing.assert_allclose(c[..., 2], -3, atol=1e-12)
    d = ops.primary_div(np.stack([4 * x, -y, 0 * x], axis=-1))
    np.testing.assert_allclose(d, 3, atol=1e-12)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_adjoint_pairs(ops_by_degree, rng, degree):
    ops = ops_by_degree[degree]
    nd, ne = ops.dg.n_loc, ops.mesh.n_e
    Z, A = rng.normal(size=ops.n_fem), rng.normal(size=(ops.n_fem, 3))
    w2, w3, q = rng.normal(size=(ne, nd, 2)), rng.normal(size=(ne, nd, 3)), rng.normal(size=(ne, nd))
    assert np.vdot(ops.weak_grad(Z), w2) == pytest.approx(np.vdot(Z, ops.weak_grad_T(w2)), rel=1e-12)
    assert np.vdot(ops.weak_curl(A), w3) == pytest.approx(np.vdot(A, ops.weak_curl_T(w3)), rel=1e-12)
    assert np.vdot(ops.weak_div(A), q) == pytest.approx(np.vdot(A, ops.weak_div_T(q)), rel=1e-12)


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_vector_calculus_identities(ops_by_degree, rng, degree):
    ops = ops_by_degree[degree]
    for _ in range(5):
        Z = rng.normal(size=ops.n_fem)
        A = rng.normal(size=(ops.n_fem, 3))
        assert np.abs(ops.dual_curl_rhs(ops.primary_grad(Z))).max() < 1e-12
        assert np.abs(ops.dual_div_rhs(ops.primary_curl(A))).max() < 1e-12


def test_trace_jumps_of_primary_fields(ops_by_degree, rng):
    ops = ops_by_degree[2]
    Z = rng.normal(size=ops.n_fem)
    A = rng.normal(size=(ops.n_fem, 3))
    assert tangential_jump(ops, ops.primary_grad(Z)) < 1e-12
    assert normal_jump(ops, ops.primary_curl(A)) < 1e-12
    # a generic DG field does jump
    w = rng.normal(size=(ops.mesh.n_e, ops.dg.n_loc, 2))
    assert tangential_jump(ops, w) > 1e-3


def test_diagonals_match_assembled_operators(ops_by_degree):
    ops = ops_by_degree[1]
    n = ops.n_fem
    eye = np.eye(n)
    L = np.stack([ops.laplacian(eye[i]) for i in range(n)])
    np.testing.assert_allclose(np.diag(L), ops.diag_laplacian(), atol=1e-12)
    col = np.zeros((n, 3))
    diag = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            col[i, k] = 1.0
            diag[i, k] = (ops.curlcurl(col) + ops.graddiv(col))[i, k]
            col[i, k] = 0.0
    np.testing.assert_allclose(diag, ops.diag_curlcurl(glm=True), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 3), st.floats(1e-3, 1.0), st.integers(0, 2**31))
def test_schur_operators_symmetric_and_bounded_below(degree, dt, seed):
    ops = build(generate_structured(3, 3, (0.0, 1.0, 0.0, 1.0), periodic=True), degree)
    r = np.random.default_rng(seed)
    x, y = r.normal(size=ops.n_fem), r.normal(size=ops.n_fem)
    Sx, Sy = ops.schur_apply_scalar(x, dt), ops.schur_apply_scalar(y, dt)
    assert np.dot(y, Sx) == pytest.approx(np.dot(x, Sy), rel=1e-10, abs=1e-12)
    assert np.dot(x, Sx) >= np.dot(x, ops.mass @ x) - 1e-13
    X, Y = r.normal(size=(ops.n_fem, 3)), r.normal(size=(ops.n_fem, 3))
    for glm in (False, True):
        SX, SY = ops.schur_apply_vector(X, dt, glm), ops.schur_apply_vector(Y, dt, glm)
        assert np.vdot(Y, SX) == pytest.approx(np.vdot(X, SY), rel=1e-10, abs=1e-12)
        assert np.vdot(X, SX) >= np.vdot(X, ops.mass @ X) - 1e-13


def test_assembly_rejects_mismatched_spaces(periodic_mesh):
    with pytest.raises(AssemblyError):
        assemble(periodic_mesh, DGSpace(periodic_mesh, 1), FEMSpace(periodic_mesh, 3))


def test_dump_triplets(tmp_path, unit_triangle):
    ops = build(unit_triangle, 0)
    path = tmp_path / "m.txt"
    dump_triplets(path, ops.mass)
    lines = path.read_text().splitlines()
    assert lines[0] == "# 3 3 9"
    i, j, v = lines[1].split()
    assert float(v) == ops.mass[int(i), int(j)]
