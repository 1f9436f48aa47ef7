import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compatdg.refelem import (ReferenceError, build_reference, lattice_nodes, map_to_physical,
                              quadrature, trace_points)


def monomial_integral(a, b):
    # int over the unit triangle of xi^a eta^b = a! b! / (a + b + 2)!
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("degree", range(7))
def test_lagrange_partition_and_gradient_sum(degree):
    ref = build_reference(degree)
    assert ref.n_nodes == (degree + 1) * (degree + 2) // 2
    np.testing.assert_allclose(ref.basis_at(ref.nodes), np.eye(ref.n_nodes), atol=1e-12)
    pts = np.random.default_rng(degree).dirichlet([1, 1, 1], 40)[:, :2]
    np.testing.assert_allclose(ref.basis_at(pts).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ref.grad_basis_at(pts).sum(axis=1), 0.0, atol=1e-10)


@pytest.mark.parametrize("degree", range(7))
def test_polynomial_reproduction(degree):
    ref = build_reference(degree)
    pts = np.random.default_rng(7).dirichlet([1, 1, 1], 50)[:, :2]
    for a in range(degree + 1):
        b = degree - a
        f = lambda x: x[:, 0] ** a * x[:, 1] ** b  # noqa: E731
        np.testing.assert_allclose(ref.basis_at(pts) @ ref.interpolate(f), f(pts), atol=1e-12)


def test_degree_zero_and_one_examples():
    r0 = build_reference(0)
    assert r0.n_nodes == 1
    np.testing.assert_allclose(r0.basis_at([[0.2, 0.3]]), [[1.0]])
    np.testing.assert_allclose(r0.grad_basis_at([[0.2, 0.3]]), 0.0)
    r1 = build_reference(1)
    np.testing.assert_allclose(r1.grad_basis_at([[0.3, 0.3]])[0], [[-1, -1], [1, 0], [0, 1]], atol=1e-14)


def test_cubic_interpolates_xi2_eta():
    ref = build_reference(3)
    f = lambda x: x[:, 0] ** 2 * x[:, 1]  # noqa: E731
    pts = np.random.default_rng(3).dirichlet([1, 1, 1], 50)[:, :2]
    np.testing.assert_allclose(ref.basis_at(pts) @ ref.interpolate(f), f(pts), atol=1e-12)


def test_degree_out_of_range():
    with pytest.raises(ReferenceError):
        build_reference(7)
    with pytest.raises(ReferenceError):
        build_reference(-1)


@pytest.mark.parametrize("exactness", range(0, 15))
def test_quadrature_monomial_sweep(exactness):
    q = quadrature(exactness)
    assert (q.weights > 0).all()
    assert abs(q.weights.sum() - 0.5) < 1e-15
    for a in range(exactness + 1):
        for b in range(exactness + 1 - a):
            exact = monomial_integral(a, b)
            got = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert abs(got - exact) <= 1e-13 * exact


def test_quadrature_examples():
    q1 = quadrature(1)
    assert len(q1) == 1 and q1.weights[0] == 0.5
    q2 = quadrature(2)
    assert abs(np.sum(q2.weights * q2.points[:, 0] * q2.points[:, 1]) - 1 / 24) < 1e-16
    with pytest.raises(ReferenceError):
        quadrature(31)


def test_map_to_physical():
    x, J, det = map_to_physical([[0, 0], [1, 0], [0, 1]], [[0.25, 0.5]])
    np.testing.assert_allclose(J, np.eye(2))
    assert det == 1.0
    _, _, det = map_to_physical([[0, 0], [2, 0], [0, 2]], [[0, 0]])
    assert det == 4.0
    with pytest.raises(ReferenceError):
        map_to_physical([[0, 0], [1, 1], [2, 2]], [[0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_quadrature_area_matches_shoelace(coords):
    tri = np.array(coords).reshape(3, 2)
    area = 0.5 * abs((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1]))
    if area < 1e-3:
        return
    q = quadrature(4)
    _, _, det = map_to_physical(tri, q.points)
    assert abs(q.weights.sum() * det - area) <= 1e-13 * max(area, 1.0)


def test_trace_points_midpoint_and_symmetry():
    pts, s, w, tangent = trace_points(0, 1)
    np.testing.assert_allclose(pts, [[0.5, 0.0]])
    pts, s, w, _ = trace_points(0, 5)
    np.testing.assert_allclose(np.sort(s), np.sort(1 - s), atol=1e-15)
    assert abs(w.sum() - 1) < 1e-15
    with pytest.raises(ReferenceError):
        trace_points(3, 2)


def test_trace_points_shared_edge_coincide():
    # two triangles sharing the edge (1,0)-(0,1), traversed oppositely
    t1 = np.array([[0, 0], [1, 0], [0, 1]], float)  # edge 1: (1,0) -> (0,1)
    t2 = np.array([[1, 1], [0, 1], [1, 0]], float)  # edge 1: (0,1) -> (1,0)
    p1, *_ = trace_points(1, 4)
    p2, *_ = trace_points(1, 4)
    x1, _, _ = map_to_physical(t1, p1)
    x2, _, _ = map_to_physical(t2, p2[::-1])
    np.testing.assert_allclose(x1, x2, atol=1e-15)


def test_lattice_nodes_on_triangle():
    nodes = lattice_nodes(4)
    assert (nodes >= -1e-15).all() and (nodes.sum(axis=1) <= 1 + 1e-15).all()
