"""Conforming 2D triangulations with optional periodic identification."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def signed_areas(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True)
class MeshQuality:
    h_min: float
    h_max: float
    n_e: int
    n_v: int


@dataclass(frozen=True)
class Connectivity:
    """Per-triangle neighbour tables.

    neighbor[e, k] is the triangle across local edge k (-1 on an open
    boundary), neighbor_edge[e, k] the local edge id seen from that
    neighbour and shift[e, k] the translation that maps the neighbour's
    copy of the edge onto ours (non-zero only across periodic seams).
    reversed[e, k] is True when the neighbour traverses the shared edge in
    the opposite direction, which always holds for a consistently
    oriented conforming mesh.
    """

    neighbor: np.ndarray
    neighbor_edge: np.ndarray
    shift: np.ndarray
    reversed: np.ndarray


@dataclass(eq=False)
class SimplexMesh:
    """Triangulation of a box. Triangles are counterclockwise."""

    vertices: np.ndarray
    triangles: np.ndarray
    box: tuple
    periodic: bool = False
    edges: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    edge_local: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    periodic_partner: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.box = tuple(float(b) for b in self.box)
        self._check_basic()
        self._build_edges()
        self.periodic_partner = np.full(len(self.edges), -1, dtype=np.int64)
        if self.periodic:
            self._pair_periodic()
        for a in (self.vertices, self.triangles, self.edges, self.edge_tris,
                  self.edge_local, self.tri_edges, self.periodic_partner):
            a.setflags(write=False)

    @property
    def n_e(self):
        return len(self.triangles)

    @property
    def n_v(self):
        return len(self.vertices)

    @property
    def lengths(self):
        x0, x1, y0, y1 = self.box
        return np.array([x1 - x0, y1 - y0])

    @property
    def tol(self):
        return 1e-12 * float(self.lengths.max())

    def _check_basic(self):
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (n, 3) index array")
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle references a vertex index out of range")
        area = signed_areas(self.vertices, self.triangles)
        bad = np.flatnonzero(area <= 0)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}")

    def _build_edges(self):
        local = np.array([[0, 1], [1, 2], [2, 0]])
        directed = self.triangles[:, local].reshape(-1, 2)
        key = np.sort(directed, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if (counts > 2).any():
            i = int(np.flatnonzero(counts > 2)[0])
            raise MeshError(f"conformity violation: edge {tuple(uniq[i])} shared by {counts[i]} triangles")
        n_edges = len(uniq)
        edge_tris = np.full((n_edges, 2), -1, dtype=np.int64)
        edge_local = np.full((n_edges, 2), -1, dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        slot = np.zeros(n_edges, dtype=np.int64)
        for flat in order:
            g = inv[flat]
            edge_tris[g, slot[g]] = flat // 3
            edge_local[g, slot[g]] = flat % 3
            slot[g] += 1
        # orient each edge as traversed by its first triangle
        edges = directed[edge_tris[:, 0] * 3 + edge_local[:, 0]]
        two = edge_tris[:, 1] >= 0
        second = directed[edge_tris[two, 1] * 3 + edge_local[two, 1]]
        same = (second == edges[two]).all(axis=1)
        if same.any():
            i = int(np.flatnonzero(two)[np.flatnonzero(same)[0]])
            raise MeshError(f"conformity violation: edge {tuple(edges[i])} has the same orientation in both triangles")
        self.edges = edges
        self.edge_tris = edge_tris
        self.edge_local = edge_local
        self.tri_edges = inv.reshape(-1, 3)

    def boundary_edges(self):
        return np.flatnonzero(self.edge_tris[:, 1] < 0)

    def _pair_periodic(self):
        bnd = self.boundary_edges()
        if bnd.size == 0:
            return
        mid = self.vertices[self.edges[bnd]].mean(axis=1)
        length = np.linalg.norm(np.diff(self.vertices[self.edges[bnd]], axis=1)[:, 0], axis=1)
        x0, x1, y0, y1 = self.box
        tol = max(self.tol, 1e-10 * float(self.lengths.max()))
        # wrap midpoints on the max sides onto the min sides and match
        key = mid.copy()
        on_xmax = np.abs(mid[:, 0] - x1) < tol
        on_ymax = np.abs(mid[:, 1] - y1) < tol
        key[on_xmax, 0] = x0
        key[on_ymax, 1] = y0
        on_side = on_xmax | on_ymax | (np.abs(mid[:, 0] - x0) < tol) | (np.abs(mid[:, 1] - y0) < tol)
        if not on_side.all():
            i = bnd[np.flatnonzero(~on_side)[0]]
            raise MeshError(f"boundary edge {tuple(self.edges[i])} does not lie on the box boundary")
        from scipy.spatial import cKDTree

        tree = cKDTree(key)
        pairs = tree.query_pairs(tol, output_type="ndarray")
        partner = self.periodic_partner
        for a, b in pairs:
            if abs(length[a] - length[b]) > tol:
                raise MeshError(f"periodic edges {tuple(self.edges[bnd[a]])} and {tuple(self.edges[bnd[b]])} differ in length")
            if partner[bnd[a]] >= 0 or partner[bnd[b]] >= 0:
                raise MeshError("ambiguous periodic pairing")
            partner[bnd[a]] = bnd[b]
            partner[bnd[b]] = bnd[a]

    def connectivity(self, require_periodic=None) -> Connectivity:
        return build_connectivity(self, require_periodic)


def build_connectivity(mesh: SimplexMesh, require_periodic=None) -> Connectivity:
    if require_periodic is None:
        require_periodic = mesh.periodic
    n_e = mesh.n_e
    nb = np.full((n_e, 3), -1, dtype=np.int64)
    nbe = np.full((n_e, 3), -1, dtype=np.int64)
    shift = np.zeros((n_e, 3, 2))
    rev = np.zeros((n_e, 3), dtype=bool)
    V = mesh.vertices
    for g in range(len(mesh.edges)):
        (t0, t1), (l0, l1) = mesh.edge_tris[g], mesh.edge_local[g]
        if t1 >= 0:
            nb[t0, l0], nbe[t0, l0] = t1, l1
            nb[t1, l1], nbe[t1, l1] = t0, l0
            rev[t0, l0] = rev[t1, l1] = True
            continue
        q = mesh.periodic_partner[g]
        if q < 0:
            if require_periodic:
                raise MeshError(f"dangling boundary edge {tuple(mesh.edges[g])} in periodic mode")
            continue
        tq, lq = mesh.edge_tris[q, 0], mesh.edge_local[q, 0]
        nb[t0, l0], nbe[t0, l0] = tq, lq
        a, b = mesh.edges[g]
        qa, qb = mesh.edges[q]
        d = V[[a, b]].mean(axis=0) - V[[qa, qb]].mean(axis=0)
        shift[t0, l0] = d
        # opposite traversal: our start vertex matches the partner's end vertex
        rev[t0, l0] = np.linalg.norm(V[a] - (V[qb] + d)) < 1e-9 * mesh.lengths.max()
    return Connectivity(nb, nbe, shift, rev)


def quality(mesh: SimplexMesh) -> MeshQuality:
    h = element_diameters(mesh)
    return MeshQuality(float(h.min()), float(h.max()), mesh.n_e, mesh.n_v)


def element_diameters(mesh: SimplexMesh) -> np.ndarray:
    P = mesh.vertices[mesh.triangles]
    e = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 1], P[:, 0] - P[:, 2]], axis=1)
    return np.linalg.norm(e, axis=2).max(axis=1)


def generate_structured(nx: int, ny: int, box=(0.0, 1.0, 0.0, 1.0), periodic=False) -> SimplexMesh:
    """Split an nx-by-ny grid into 2 nx ny triangles with checkerboard diagonals."""
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    x0, x1, y0, y1 = box
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=-1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return SimplexMesh(verts, np.array(tris), box, periodic)


def read_mesh(path, periodic=False, box=None) -> SimplexMesh:
    """Read the plain-text node/element format.

    Header ``ndim=2 nv=<n> ne=<m>``, then n lines ``x y`` and m lines
    ``i j k`` with 0-based vertex indices. Clockwise triangles are flipped
    with a warning. The box defaults to the vertex bounding box.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise MeshParseError("empty mesh file", 1)
    lineno, head = rows[0]
    try:
        hdr = dict(tok.split("=", 1) for tok in head)
        ndim, nv, ne = int(hdr["ndim"]), int(hdr["nv"]), int(hdr["ne"])
    except (KeyError, ValueError):
        raise MeshParseError("expected header 'ndim=2 nv=<n> ne=<m>'", lineno) from None
    if ndim != 2:
        raise MeshParseError(f"only ndim=2 is supported, got {ndim}", lineno)
    body = rows[1:]
    if len(body) < nv + ne:
        last = body[-1][0] if body else lineno
        raise MeshParseError(f"expected {nv} vertex and {ne} triangle lines, found {len(body)}", last)
    verts = np.empty((nv, 2))
    tris = np.empty((ne, 3), dtype=np.int64)
    for k, (ln, tok) in enumerate(body[:nv]):
        if len(tok) != 2:
            raise MeshParseError(f"vertex line needs 2 values, got {len(tok)}", ln)
        try:
            verts[k] = [float(t) for t in tok]
        except ValueError:
            raise MeshParseError(f"bad coordinate in {' '.join(tok)!r}", ln) from None
    for k, (ln, tok) in enumerate(body[nv:nv + ne]):
        if len(tok) != 3:
            raise MeshParseError(f"triangle line needs 3 indices, got {len(tok)}", ln)
        try:
            tris[k] = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError(f"bad vertex index in {' '.join(tok)!r}", ln) from None
        if tris[k].min() < 0 or tris[k].max() >= nv:
            raise MeshParseError(f"vertex index out of range in {' '.join(tok)!r}", ln)
    if len(body) > nv + ne:
        raise MeshParseError("trailing data after triangle block", body[nv + ne][0])
    area = signed_areas(verts, tris)
    flip = area < 0
    if flip.any():
        warnings.warn(f"{path.name}: flipped {int(flip.sum())} clockwise triangle(s)", stacklevel=2)
        tris[flip] = tris[flip][:, [0, 2, 1]]
    if box is None:
        box = (verts[:, 0].min(), verts[:, 0].max(), verts[:, 1].min(), verts[:, 1].max())
    return SimplexMesh(verts, tris, box, periodic)


def write_mesh(mesh: SimplexMesh, path):
    with open(path, "w") as f:
        f.write(f"ndim=2 nv={mesh.n_v} ne={mesh.n_e}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def perturbed_delaunay(nx: int, ny: int, box=(0.0, 1.0, 0.0, 1.0), jitter=0.3, seed=0) -> SimplexMesh:
    """Unstructured periodic-compatible mesh: equispaced boundary points,
    jittered interior points, Delaunay triangulation."""
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = box
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inner = np.zeros_like(X, dtype=bool)
    inner[1:-1, 1:-1] = True
    X = X + inner * rng.uniform(-jitter, jitter, X.shape) * hx
    Y = Y + inner * rng.uniform(-jitter, jitter, Y.shape) * hy
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    tri = Delaunay(pts, qhull_options="Qbb Qc Qz Q12").simplices
    area = signed_areas(pts, tri)
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    keep = np.abs(area) > 1e-12 * hx * hy
    return SimplexMesh(pts, tri[keep], box, periodic=True)
