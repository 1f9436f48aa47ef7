"""The compatible operator set: DG mass D, FEM mass M, stiffness tensor K.

K[e, c, p, m] = int_T phi_c d_m psi_p is kept as dense per-element blocks.
With G the FEM -> DG map (G Z)_c = K_c.p Z_p, the primary gradient is
D^{-1} G and the dual divergence is -G^T; every operator below is a
contraction of these blocks. Vector fields on the plane carry three
components and are z-invariant, so d_z = 0 everywhere.

Sign convention for the implicit operators: with G^T the map w ->
(int grad psi_p . w)_p, the acoustics pressure operator is
M + dt^2/4 G^T D^{-1} G, which is the same matrix the skew-symmetric
notation writes as M - dt^2/4 K D^{-1} K^T.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import coo_matrix, csr_matrix

from .mesh import SimplexMesh
from .refelem import gauss_legendre_01, quadrature
from .spaces import DGSpace, FEMSpace


class AssemblyError(RuntimeError):
    pass


def element_geometry(mesh: SimplexMesh):
    """Jacobians, |det J| and J^{-1} for every element."""
    P = mesh.vertices[mesh.triangles]
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=-1)  # columns
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.empty_like(J)
    Jinv[:, 0, 0] = J[:, 1, 1] / det
    Jinv[:, 1, 1] = J[:, 0, 0] / det
    Jinv[:, 0, 1] = -J[:, 0, 1] / det
    Jinv[:, 1, 0] = -J[:, 1, 0] / det
    return J, np.abs(det), Jinv


@dataclass(eq=False)
class CompatibleOperators:
    dg: DGSpace
    fem: FEMSpace
    detJ: np.ndarray = field(repr=False)
    Jinv: np.ndarray = field(repr=False)
    D_ref: np.ndarray = field(repr=False)
    D_chol: tuple = field(repr=False)
    mass: csr_matrix = field(repr=False)  # continuous-space mass matrix
    stiffness: np.ndarray = field(repr=False)  # (n_e, n_dg_loc, n_fem_loc, 2)
    M_ref: np.ndarray = field(repr=False)

    @property
    def mesh(self):
        return self.dg.mesh

    @property
    def n_fem(self):
        return self.fem.n_dofs

    @property
    def l2g(self):
        return self.fem.l2g

    # -- gather / scatter between global FEM vectors and element blocks

    def gather(self, values):
        return np.asarray(values)[self.l2g]

    def scatter(self, local):
        """Sum element contributions (n_e, n_loc[, m]) into FEM DOFs."""
        idx = self.l2g.ravel()
        n = self.n_fem
        if local.ndim == 2:
            return np.bincount(idx, local.ravel(), minlength=n)
        m = local.shape[-1]
        flat = local.reshape(-1, m)
        return np.stack([np.bincount(idx, flat[:, k], minlength=n) for k in range(m)], axis=-1)

    # -- DG mass

    def apply_D(self, w):
        return np.einsum("ab,eb...->ea...", self.D_ref, w) * _bcast(self.detJ, w)

    def solve_D(self, w):
        """D^{-1} w by two triangular solves per block."""
        w = np.asarray(w, dtype=float)
        n_e, nd = w.shape[:2]
        rhs = np.moveaxis(w, 1, 0).reshape(nd, -1)
        x = linalg.cho_solve(self.D_chol, rhs, check_finite=False)
        x = np.moveaxis(x.reshape((nd, n_e) + w.shape[2:]), 0, 1)
        return x / _bcast(self.detJ, x)

    def apply_M(self, x):
        return self.mass @ x

    # -- stiffness contractions
    #
    # stiff_map is the stiffness tensor as a CSR matrix with rows (e, c, m) and the
    # global FEM DOFs as columns, so every stiffness action is one sparse product.

    @property
    def stiff_map(self):
        if not hasattr(self, "_stiff"):
            n_e, nd, nf, _ = self.stiffness.shape
            rows = np.broadcast_to(np.arange(n_e * nd * 2).reshape(n_e, nd, 1, 2), self.stiffness.shape)
            cols = np.broadcast_to(self.l2g[:, None, :, None], self.stiffness.shape)
            mat = coo_matrix((self.stiffness.ravel(), (rows.ravel(), cols.ravel())), shape=(n_e * nd * 2, self.n_fem))
            self._stiff = mat.tocsr()
            self._stiff_t = mat.T.tocsr()
        return self._stiff

    @property
    def stiff_map_t(self):
        self.stiff_map
        return self._stiff_t

    def _dshape(self, *tail):
        return (self.mesh.n_e, self.dg.n_loc) + tail

    def weak_grad(self, scalar):
        """Row (e, c, m) holds int phi_c d_m z_h for a scalar FEM vector."""
        return (self.stiff_map @ np.ravel(scalar)).reshape(self._dshape(2))

    def weak_grad_T(self, w):
        """r_p = int grad psi_p . w for an in-plane DG vector w (n_e, nd, 2)."""
        return self.stiff_map_t @ np.ascontiguousarray(w[..., :2]).ravel()

    def _derivatives(self, field):
        # d_m field_k for every DG test function, (n_e, nd, 2, k)
        field = np.asarray(field, dtype=float).reshape(self.n_fem, -1)
        return (self.stiff_map @ field).reshape(self._dshape(2, field.shape[1]))

    def weak_curl(self, vector):
        """int phi_c curl a_h for a 3-component FEM field (n_fem, 3)."""
        dv = self._derivatives(vector)
        out = np.empty(dv.shape[:2] + (3,))
        out[..., 0] = dv[..., 1, 2]
        out[..., 1] = -dv[..., 0, 2]
        out[..., 2] = dv[..., 0, 1] - dv[..., 1, 0]
        return out

    def weak_curl_T(self, w):
        """Adjoint of weak_curl: <C a, w> = <a, C^T w> for every FEM field a."""
        t = np.zeros(w.shape[:2] + (2, 3))
        t[..., 1, 2] = w[..., 0]
        t[..., 0, 2] = -w[..., 1]
        t[..., 0, 1] = w[..., 2]
        t[..., 1, 0] = -w[..., 2]
        return self.stiff_map_t @ t.reshape(-1, 3)

    def weak_div(self, E):
        """int phi_c div E_h for a FEM vector field (n_fem, >=2)."""
        E = np.asarray(E, dtype=float).reshape(self.n_fem, -1)
        dE = self._derivatives(E[:, :2])
        return dE[..., 0, 0] + dE[..., 1, 1]

    def weak_div_T(self, q):
        """(n_fem, 3) with rows int grad psi_p q (z component zero)."""
        t = np.zeros(q.shape[:2] + (2, 3))
        t[..., 0, 0] = q
        t[..., 1, 1] = q
        return self.stiff_map_t @ t.reshape(-1, 3)

    # -- public operator surface

    def primary_grad(self, scalar):
        """Exact elementwise gradient of Z_h in U_h^N, shape (n_e, nd, 2)."""
        return self.solve_D(self.weak_grad(np.ravel(scalar)))

    def primary_curl(self, vector):
        vector = np.asarray(vector, dtype=float).reshape(self.n_fem, 3)
        return self.solve_D(self.weak_curl(vector))

    def primary_div(self, E):
        E = np.asarray(E, dtype=float).reshape(self.n_fem, -1)
        return self.solve_D(self.weak_div(E))

    def dual_div_rhs(self, w):
        """r_p = int grad psi_p . w; the nodal DIV field is M^{-1} r."""
        return self.weak_grad_T(w)

    def dual_curl_rhs(self, w):
        """r_p = -int grad psi_p x w, (n_fem, 3); the nodal CURL is M^{-1} r."""
        return -self.grad_psi_cross(w)

    def grad_psi_cross(self, w):
        """int grad psi_p x w for a DG field with 2 or 3 components."""
        w3 = _as3(w)
        # X[(e, c, m), (j, k)] = delta_mj w_k gives t[p, j, k] = int d_j psi_p w_k
        X = np.zeros(w3.shape[:2] + (2, 2, 3))
        X[..., 0, 0, :] = w3
        X[..., 1, 1, :] = w3
        t = (self.stiff_map_t @ X.reshape(-1, 6)).reshape(-1, 2, 3)
        out = np.empty((len(t), 3))
        out[:, 0] = t[:, 1, 2]
        out[:, 1] = -t[:, 0, 2]
        out[:, 2] = t[:, 0, 1] - t[:, 1, 0]
        return out

    def laplacian(self, p):
        """G^T D^{-1} G p (symmetric positive semi-definite)."""
        return self.weak_grad_T(self.solve_D(self.weak_grad(p)))

    def curlcurl(self, E):
        return self.weak_curl_T(self.solve_D(self.weak_curl(E)))

    def graddiv(self, E):
        return self.weak_div_T(self.solve_D(self.weak_div(E)))

    def schur_apply_scalar(self, p, dt):
        p = np.asarray(p, dtype=float)
        return self.mass @ p + 0.25 * dt * dt * self.laplacian(p)

    def schur_apply_vector(self, E, dt, glm=False):
        E = np.asarray(E, dtype=float).reshape(self.n_fem, 3)
        S = self.curlcurl(E)
        if glm:
            S = S + self.graddiv(E)
        return self.mass @ E + 0.25 * dt * dt * S

    # -- diagonals for Jacobi preconditioning

    def _local_second(self):
        if not hasattr(self, "_lsec"):
            Dinv = linalg.cho_solve(self.D_chol, np.eye(self.D_ref.shape[0]))
            # L[e, p, m, n] = int d_m psi_p d_n psi_p
            L = np.einsum("eapm,ab,ebpn->epmn", self.stiffness, Dinv, self.stiffness) / self.detJ[:, None, None, None]
            self._lsec = L
        return self._lsec

    def diag_M(self):
        return self.mass.diagonal()

    def diag_laplacian(self):
        L = self._local_second()
        return self.scatter(L[..., 0, 0] + L[..., 1, 1])

    def diag_curlcurl(self, glm=False):
        L = self._local_second()
        xx, yy = L[..., 0, 0], L[..., 1, 1]
        loc = np.stack([yy, xx, xx + yy], axis=-1)
        if glm:
            loc = loc + np.stack([xx, yy, np.zeros_like(xx)], axis=-1)
        return self.scatter(loc)


def edge_traces(ops: CompatibleOperators, w, n_points=None):
    """Values of a DG field on both sides of every edge.

    Returns (inside, outside, tangent, normal): inside/outside have shape
    (n_e, 3, n_points, m) and are sampled at the same physical points;
    tangent and normal are unit vectors per (element, local edge).
    Edges without a neighbour are reported with outside = inside.
    """
    w = np.asarray(w, dtype=float)
    w = w if w.ndim == 3 else w[..., None]
    n_points = n_points or ops.dg.degree + 2
    conn = ops.mesh.connectivity(require_periodic=False)
    s, _ = gauss_legendre_01(n_points)
    ref = ops.dg.ref
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    fwd = np.array([ref.basis_at(verts[k] + s[:, None] * (verts[(k + 1) % 3] - verts[k])) for k in range(3)])
    bwd = np.array([ref.basis_at(verts[k] + (1 - s)[:, None] * (verts[(k + 1) % 3] - verts[k])) for k in range(3)])
    inside = np.einsum("kqa,eam->ekqm", fwd, w)
    outside = inside.copy()
    for k in range(3):
        nb, nbe, rev = conn.neighbor[:, k], conn.neighbor_edge[:, k], conn.reversed[:, k]
        for kk in range(3):
            for flip, tab in ((True, bwd), (False, fwd)):
                sel = (nb >= 0) & (nbe == kk) & (rev == flip)
                if sel.any():
                    outside[sel, k] = np.einsum("qa,eam->eqm", tab[kk], w[nb[sel]])
    P = ops.mesh.vertices[ops.mesh.triangles]
    t = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 1], P[:, 0] - P[:, 2]], axis=1)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
    return inside, outside, t, n


def tangential_jump(ops: CompatibleOperators, v):
    """max |t . (v_in - v_out)| over all edge Gauss points for an in-plane field."""
    a, b, t, _ = edge_traces(ops, v[..., :2])
    return float(np.abs(np.einsum("ekqm,ekm->ekq", a - b, t)).max())


def normal_jump(ops: CompatibleOperators, w):
    """max |n . (w_in - w_out)| for the in-plane part of a DG vector field."""
    a, b, _, n = edge_traces(ops, w[..., :2])
    return float(np.abs(np.einsum("ekqm,ekm->ekq", a - b, n)).max())


def _bcast(detJ, w):
    return detJ.reshape((-1,) + (1,) * (np.ndim(w) - 1))


def _as3(w):
    w = np.asarray(w, dtype=float)
    if w.shape[-1] == 3:
        return w
    pad = np.zeros(w.shape[:-1] + (3 - w.shape[-1],))
    return np.concatenate([w, pad], axis=-1)


def assemble(mesh: SimplexMesh, dg: DGSpace, fem: FEMSpace) -> CompatibleOperators:
    if dg.mesh is not mesh or fem.mesh is not mesh:
        raise AssemblyError("spaces must share the mesh")
    if fem.degree != dg.degree + 1:
        raise AssemblyError("FEM degree must equal DG degree + 1")
    N = dg.degree
    Q = quadrature(2 * (N + 1))
    phi = dg.ref.basis_at(Q.points)  # (q, nd)
    psi = fem.ref.basis_at(Q.points)  # (q, nf)
    dpsi = fem.ref.grad_basis_at(Q.points)  # (q, nf, 2)
    w = Q.weights
    D_ref = np.einsum("q,qa,qb->ab", w, phi, phi)
    M_ref = np.einsum("q,qa,qb->ab", w, psi, psi)
    K_ref = np.einsum("q,qc,qpk->cpk", w, phi, dpsi)  # int phi_c dxi_k psi_p
    try:
        D_chol = linalg.cho_factor(D_ref, lower=False)
    except linalg.LinAlgError as exc:
        raise AssemblyError("singular DG mass block") from exc
    _, detJ, Jinv = element_geometry(mesh)
    if (detJ <= 0).any():
        raise AssemblyError("degenerate element")
    # physical gradient: d_m psi = sum_k dxi_k psi Jinv[k, m]
    stiff = np.einsum("cpk,ekm->ecpm", K_ref, Jinv) * detJ[:, None, None, None]
    nf = fem.n_loc
    rows = np.repeat(fem.l2g, nf, axis=1).ravel()
    cols = np.tile(fem.l2g, (1, nf)).ravel()
    vals = (detJ[:, None, None] * M_ref[None]).ravel()
    mass = coo_matrix((vals, (rows, cols)), shape=(fem.n_dofs,) * 2).tocsr()
    mass.sum_duplicates()
    return CompatibleOperators(dg, fem, detJ, Jinv, D_ref, D_chol, mass, stiff, M_ref)


def build(mesh: SimplexMesh, degree: int) -> CompatibleOperators:
    """Convenience: spaces of degree N / N+1 plus assembly."""
    return assemble(mesh, DGSpace(mesh, degree), FEMSpace(mesh, degree + 1))


def dump_triplets(path, matrix):
    """Write a sparse or dense matrix as 'row col value' lines."""
    coo = coo_matrix(matrix)
    with open(path, "w") as f:
        f.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{i} {j} {float(v)!r}\n")
