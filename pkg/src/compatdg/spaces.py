"""DOF layouts for the broken space U_h^N and the continuous space W_h^{N+1}."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .mesh import SimplexMesh
from .refelem import ReferenceElement, build_reference


class SpaceError(ValueError):
    pass


def physical_points(mesh: SimplexMesh, ref_points):
    """Map reference points into every element, shape (n_e, n_pts, 2)."""
    P = mesh.vertices[mesh.triangles]
    ref_points = np.atleast_2d(ref_points)
    lam = np.column_stack([1.0 - ref_points.sum(axis=1), ref_points])
    return np.einsum("qk,ekd->eqd", lam, P)


@dataclass(eq=False)
class DGSpace:
    mesh: SimplexMesh
    degree: int
    ref: ReferenceElement = field(init=False)

    def __post_init__(self):
        self.ref = build_reference(self.degree)

    @property
    def n_loc(self):
        return self.ref.n_nodes

    @property
    def n_dofs(self):
        return self.mesh.n_e * self.n_loc

    def offsets(self):
        return np.arange(self.mesh.n_e) * self.n_loc

    def node_coords(self):
        return physical_points(self.mesh, self.ref.nodes)

    def zeros(self, m=1):
        return np.zeros((self.mesh.n_e, self.n_loc, m))


@dataclass(eq=False)
class FEMSpace:
    """Continuous Lagrange space, global DOFs found by coordinate dedup."""

    mesh: SimplexMesh
    degree: int
    ref: ReferenceElement = field(init=False)
    l2g: np.ndarray = field(init=False, repr=False)
    coords: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.degree < 1:
            raise SpaceError("continuous space needs degree >= 1")
        self.ref = build_reference(self.degree)
        self.l2g, self.coords = _number_dofs(self.mesh, self.ref)
        self.l2g.setflags(write=False)
        self.coords.setflags(write=False)

    @property
    def n_loc(self):
        return self.ref.n_nodes

    @property
    def n_dofs(self):
        return len(self.coords)

    def zeros(self, m=1):
        return np.zeros((self.n_dofs, m))


def wrap_periodic(mesh: SimplexMesh, x):
    """Fold coordinates on the max sides of the box onto the min sides."""
    x = np.array(x, dtype=float, copy=True)
    if not mesh.periodic:
        return x
    x0, x1, y0, y1 = mesh.box
    tol = 1e-9 * float(mesh.lengths.max())
    x[..., 0] = np.where(np.abs(x[..., 0] - x1) < tol, x0, x[..., 0])
    x[..., 1] = np.where(np.abs(x[..., 1] - y1) < tol, y0, x[..., 1])
    return x


def _number_dofs(mesh, ref):
    pts = physical_points(mesh, ref.nodes)
    n_e, n_loc, _ = pts.shape
    flat = wrap_periodic(mesh, pts.reshape(-1, 2))
    tol = 1e-12 * float(mesh.lengths.max())
    # node spacing is far above tol, so a pair search is exact dedup
    pairs = cKDTree(flat).query_pairs(max(tol, 1e-10 * float(mesh.lengths.max())), output_type="ndarray")
    n = len(flat)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    # renumber in order of first appearance for a deterministic layout
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    gid = remap[labels]
    coords = np.empty((len(order), 2))
    coords[gid] = flat
    if mesh.periodic:
        _check_periodic_consistency(mesh, gid, n_e * n_loc)
    return gid.reshape(n_e, n_loc), coords


def _check_periodic_consistency(mesh, gid, n):
    # every boundary vertex must have been merged with its images
    x0, x1, y0, y1 = mesh.box
    vs = mesh.vertices
    tol = 1e-9 * float(mesh.lengths.max())
    on_edge = (np.abs(vs[:, 0] - x0) < tol) | (np.abs(vs[:, 0] - x1) < tol) | (np.abs(vs[:, 1] - y0) < tol) | (np.abs(vs[:, 1] - y1) < tol)
    if on_edge.any() and (mesh.periodic_partner[mesh.boundary_edges()] < 0).any():
        raise SpaceError("inconsistent periodic pairing: unpaired boundary edge")


def dedup_bruteforce(points, tol):
    """O(n^2) reference dedup used by tests."""
    labels = -np.ones(len(points), dtype=np.int64)
    reps = []
    for i, p in enumerate(points):
        for k, r in enumerate(reps):
            if abs(p[0] - r[0]) <= tol and abs(p[1] - r[1]) <= tol:
                labels[i] = k
                break
        else:
            labels[i] = len(reps)
            reps.append(p)
    return labels, np.array(reps)


@dataclass(eq=False)
class FieldDG:
    space: DGSpace
    values: np.ndarray  # (n_e, n_loc, m)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 2:
            v = v[..., None]
        if v.shape[:2] != (self.space.mesh.n_e, self.space.n_loc):
            raise SpaceError(f"DG coefficient array has shape {v.shape}")
        if not np.isfinite(v).all():
            raise SpaceError("non-finite DG coefficients")
        self.values = v

    @property
    def m(self):
        return self.values.shape[-1]

    @property
    def coeffs(self):
        """Flat (n_dg, m) view."""
        return self.values.reshape(-1, self.m)


@dataclass(eq=False)
class FieldFEM:
    space: FEMSpace
    values: np.ndarray  # (n_fem, m)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.space.n_dofs:
            raise SpaceError(f"FEM value array has shape {v.shape}")
        if not np.isfinite(v).all():
            raise SpaceError("non-finite FEM values")
        self.values = v

    @property
    def m(self):
        return self.values.shape[-1]

    def local(self):
        return self.values[self.space.l2g]


def eval_field(field, element: int, ref_point):
    """Value of a DG or FEM field at a reference point of one element."""
    B = field.space.ref.basis_at(ref_point)
    if isinstance(field, FieldDG):
        coeffs = field.values[element]
    else:
        coeffs = field.values[field.space.l2g[element]]
    out = B @ coeffs
    return out[0] if np.ndim(ref_point) == 1 else out


def interpolate_fem(f, space: FEMSpace) -> FieldFEM:
    """Nodal interpolation; f maps (n, 2) points to (n,) or (n, m)."""
    return FieldFEM(space, np.asarray(f(space.coords), dtype=float))


def interpolate_dg(f, space: DGSpace) -> FieldDG:
    pts = space.node_coords()
    vals = np.asarray(f(pts.reshape(-1, 2)), dtype=float)
    return FieldDG(space, vals.reshape(space.mesh.n_e, space.n_loc, -1))
