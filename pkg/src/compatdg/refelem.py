"""Nodal Lagrange bases and quadrature on the reference triangle.

The reference triangle is {(xi, eta): xi, eta >= 0, xi + eta <= 1} with
vertices (0,0), (1,0), (0,1). Local edge k runs from vertex k to vertex
(k+1) % 3, so edge 0 lies on eta = 0, edge 1 on the hypotenuse and edge 2
on xi = 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg
from scipy.special import roots_jacobi, roots_legendre

log = logging.getLogger(__name__)

MAX_DEGREE = 6
MAX_EXACTNESS = 30

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class ReferenceError(ValueError):
    pass


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """Exponents (a, b) of xi^a eta^b, graded by total degree."""
    return [(t - b, b) for t in range(degree + 1) for b in range(t + 1)]


def lattice_nodes(degree: int) -> np.ndarray:
    """Equispaced barycentric lattice, row by row in eta."""
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    pts = [(i / degree, j / degree) for j in range(degree + 1) for i in range(degree + 1 - j)]
    return np.array(pts)


def _monomials(pts, exps):
    # shifted to the centroid; keeps the Vandermonde better conditioned
    x = pts[:, 0] - 1.0 / 3.0
    y = pts[:, 1] - 1.0 / 3.0
    return np.stack([x**a * y**b for a, b in exps], axis=-1)


def _monomial_grads(pts, exps):
    x = pts[:, 0] - 1.0 / 3.0
    y = pts[:, 1] - 1.0 / 3.0
    dx = np.stack([a * x ** max(a - 1, 0) * y**b if a else np.zeros_like(x) for a, b in exps], axis=-1)
    dy = np.stack([b * x**a * y ** max(b - 1, 0) if b else np.zeros_like(x) for a, b in exps], axis=-1)
    return np.stack([dx, dy], axis=-1)


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Lagrange basis of a given degree on the reference triangle."""

    degree: int
    nodes: np.ndarray
    vandermonde: np.ndarray
    inv_vandermonde: np.ndarray
    exponents: list = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def basis_at(self, pts) -> np.ndarray:
        """Basis values, shape (n_pts, n_nodes)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _monomials(pts, self.exponents) @ self.inv_vandermonde

    def grad_basis_at(self, pts) -> np.ndarray:
        """Reference gradients, shape (n_pts, n_nodes, 2)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g = _monomial_grads(pts, self.exponents)
        return np.einsum("qmd,mi->qid", g, self.inv_vandermonde)

    def interpolate(self, f) -> np.ndarray:
        return np.asarray(f(self.nodes))


@lru_cache(maxsize=None)
def build_reference(degree: int) -> ReferenceElement:
    if not 0 <= degree <= MAX_DEGREE:
        raise ReferenceError(f"degree {degree} outside supported range 0..{MAX_DEGREE}")
    exps = monomial_exponents(degree)
    nodes = lattice_nodes(degree)
    V = _monomials(nodes, exps)
    lu = linalg.lu_factor(V)
    Vinv = linalg.lu_solve(lu, np.eye(len(exps)))
    log.debug("degree %d Vandermonde condition %.3e", degree, np.linalg.cond(V))
    for arr in (nodes, V, Vinv):
        arr.setflags(write=False)
    return ReferenceElement(degree, nodes, V, Vinv, exps)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def __len__(self):
        return len(self.weights)


def _collapsed_gauss(exactness: int):
    # Duffy map (u, v) -> (u (1 - v), v); the Jacobian (1 - v) goes into a
    # Gauss-Jacobi(1, 0) weight so n points per direction reach 2n - 1.
    n = max(1, (exactness + 2) // 2)
    u, wu = roots_legendre(n)
    u = 0.5 * (u + 1.0)
    wu = 0.5 * wu
    v, wv = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (v + 1.0)
    wv = 0.25 * wv
    U, Vv = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.stack([(U * (1.0 - Vv)).ravel(), Vv.ravel()], axis=-1)
    return pts, W.ravel()


_TABLE = {
    1: (np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])),
    2: (
        np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]),
        np.full(3, 1.0 / 6.0),
    ),
}


@lru_cache(maxsize=None)
def quadrature(exactness: int) -> QuadratureRule:
    """Triangle rule exact for polynomials of total degree <= exactness."""
    if not 0 <= exactness <= MAX_EXACTNESS:
        raise ReferenceError(f"unsupported quadrature exactness {exactness}")
    key = max(exactness, 1)
    if key in _TABLE:
        pts, w = (a.copy() for a in _TABLE[key])
    else:
        pts, w = _collapsed_gauss(exactness)
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(pts, w, exactness)


def gauss_legendre_01(n: int):
    """n-point Gauss-Legendre rule on [0, 1]."""
    s, w = roots_legendre(n)
    return 0.5 * (s + 1.0), 0.5 * w


def trace_points(edge: int, n_points: int):
    """Gauss points on local edge `edge`, parameterised from its start vertex.

    Returns (ref_points (n, 2), params s in (0, 1), weights summing to 1,
    reference tangent vector end - start).
    """
    if edge not in (0, 1, 2):
        raise ReferenceError(f"invalid local edge id {edge}")
    s, w = gauss_legendre_01(n_points)
    a = REF_VERTICES[edge]
    b = REF_VERTICES[(edge + 1) % 3]
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    return pts, s, w, b - a


def map_to_physical(tri, ref_points):
    """Affine map x = v0 + J xi. Returns (x, J, |det J|)."""
    tri = np.asarray(tri, dtype=float)
    J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    det = np.linalg.det(J)
    if abs(det) <= 1e-300 or abs(det) < 1e-14 * np.abs(J).max() ** 2:
        raise ReferenceError("degenerate (zero-area) triangle")
    x = tri[0][None, :] + np.atleast_2d(ref_points) @ J.T
    return x, J, abs(det)
