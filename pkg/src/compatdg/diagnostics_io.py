"""Series logging, legacy VTK export, coefficient dumps and convergence tables."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .operators import CompatibleOperators

SERIES_COLUMNS = ("step", "t", "energy", "eps_c", "eps_d", "cg_iters", "residual")


class DiagnosticsIOError(OSError):
    pass


def fmt(x):
    """Round-trip decimal: 17 significant digits."""
    return format(float(x), ".17g")


class SeriesLogger:
    """CSV writer for the per-step series. Use as a context manager."""

    def __init__(self, path, flush_every=1):
        self.path = os.fspath(path)
        self.flush_every = max(1, int(flush_every))
        self._rows = 0
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise DiagnosticsIOError(f"cannot open series file {self.path}: {exc}") from exc
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(SERIES_COLUMNS)

    def log_step(self, step, t, energy, eps_c, eps_d, cg_iters, residual):
        try:
            self._w.writerow([int(step), fmt(t), fmt(energy), fmt(eps_c), fmt(eps_d), int(cg_iters), fmt(residual)])
            self._rows += 1
            if self._rows % self.flush_every == 0:
                self._fh.flush()
        except (OSError, ValueError) as exc:
            raise DiagnosticsIOError(f"writing {self.path}: {exc}") from exc

    __call__ = log_step

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_series(path):
    """Parse a series CSV back into a dict of numpy arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != SERIES_COLUMNS:
        raise DiagnosticsIOError(f"unexpected series header {rows[0]}")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(SERIES_COLUMNS))
    return {name: data[:, i] for i, name in enumerate(SERIES_COLUMNS)}


# ---------------------------------------------------------------- VTK


def _write_lines(path, lines):
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise DiagnosticsIOError(f"cannot write {path}: {exc}") from exc


def _point_data(fields, n_points):
    out = [f"POINT_DATA {n_points}"]
    for name, vals in fields.items():
        vals = np.asarray(vals, dtype=float).reshape(n_points, -1)
        if vals.shape[1] == 1:
            out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out += [fmt(v) for v in vals[:, 0]]
        else:
            v3 = np.zeros((n_points, 3))
            v3[:, : min(3, vals.shape[1])] = vals[:, :3]
            out.append(f"VECTORS {name} double")
            out += [" ".join(fmt(c) for c in row) for row in v3]
    return out


def export_vtk(path, ops: CompatibleOperators, dg_fields=None, fem_fields=None, title="compatdg"):
    """Legacy ASCII unstructured grid on the mesh vertices.

    DG fields are written on a copy of the vertices per element (so jumps
    survive), FEM fields on shared vertex points; when both are given two
    files are produced, `<path>` for DG and `<stem>_fem.vtk` for FEM. Higher
    order data is sampled at the element vertices.
    """
    mesh = ops.mesh
    paths = []
    vert_ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    if dg_fields:
        P = mesh.vertices[mesh.triangles].reshape(-1, 2)
        phi = ops.dg.ref.basis_at(vert_ref)
        lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
                 f"POINTS {len(P)} double"]
        lines += [f"{fmt(x)} {fmt(y)} 0" for x, y in P]
        lines.append(f"CELLS {mesh.n_e} {4 * mesh.n_e}")
        lines += [f"3 {3 * e} {3 * e + 1} {3 * e + 2}" for e in range(mesh.n_e)]
        lines.append(f"CELL_TYPES {mesh.n_e}")
        lines += ["5"] * mesh.n_e
        sampled = {}
        for name, w in dg_fields.items():
            w = np.asarray(w, dtype=float)
            w = w if w.ndim == 3 else w[..., None]
            sampled[name] = np.einsum("va,eak->evk", phi, w).reshape(3 * mesh.n_e, -1)
        lines += _point_data(sampled, len(P))
        _write_lines(path, lines)
        paths.append(os.fspath(path))
    if fem_fields:
        fem_path = path if not dg_fields else os.path.splitext(os.fspath(path))[0] + "_fem.vtk"
        # FEM node of each mesh vertex: the lattice corners of the reference element
        corner = [ops.fem.ref.nodes.tolist().index(list(v)) for v in vert_ref.tolist()]
        gid = ops.l2g[:, corner]  # (n_e, 3)
        used, cells = np.unique(gid, return_inverse=True)
        cells = cells.reshape(-1, 3)
        pts = ops.fem.coords[used]
        lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
                 f"POINTS {len(pts)} double"]
        lines += [f"{fmt(x)} {fmt(y)} 0" for x, y in pts]
        lines.append(f"CELLS {mesh.n_e} {4 * mesh.n_e}")
        lines += [f"3 {a} {b} {c}" for a, b, c in cells]
        lines.append(f"CELL_TYPES {mesh.n_e}")
        lines += ["5"] * mesh.n_e
        lines += _point_data({k: np.asarray(v, dtype=float).reshape(ops.n_fem, -1)[used] for k, v in fem_fields.items()}, len(pts))
        _write_lines(fem_path, lines)
        paths.append(fem_path)
    return paths


# ---------------------------------------------------------------- restart dumps


def dump_coefficients(path, arrays: dict):
    """Raw CSV of named coefficient arrays: name,index,c0,c1,..."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for name, a in arrays.items():
                a = np.asarray(a, dtype=float)
                w.writerow(["#", name, *a.shape])
                flat = a.reshape(a.shape[0], -1) if a.ndim > 1 else a[:, None]
                for i, row in enumerate(flat):
                    w.writerow([name, i, *(fmt(v) for v in row)])
    except OSError as exc:
        raise DiagnosticsIOError(f"cannot write {path}: {exc}") from exc


def load_coefficients(path):
    shapes, rows = {}, {}
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if rec[0] == "#":
                shapes[rec[1]] = tuple(int(s) for s in rec[2:])
                rows[rec[1]] = []
            else:
                rows[rec[0]].append([float(v) for v in rec[2:]])
    return {k: np.array(rows[k]).reshape(shapes[k]) for k in shapes}


# ---------------------------------------------------------------- convergence tables


@dataclass
class ConvergenceTable:
    variables: list
    h: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # list of dicts
    orders: list = field(default_factory=list)  # list of dicts (None on the first row)

    def min_order(self, row=-1):
        o = self.orders[row]
        return None if o is None else min(o.values())

    def format(self):
        head = f"{'Nx':>5}" + "".join(f"  {'L2(' + v + ')':>12}  {'O(' + v + ')':>6}" for v in self.variables)
        lines = [head]
        for lab, e, o in zip(self.labels, self.errors, self.orders):
            cells = "".join(f"  {e[v]:12.4E}  {'' if o is None else format(o[v], '.1f'):>6}" for v in self.variables)
            lines.append(f"{lab!s:>5}" + cells)
        return "\n".join(lines)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "h"] + [c for v in self.variables for c in (f"L2_{v}", f"O_{v}")])
            for lab, h, e, o in zip(self.labels, self.h, self.errors, self.orders):
                w.writerow([lab, fmt(h)] + [c for v in self.variables
                                            for c in (fmt(e[v]), "" if o is None else fmt(o[v]))])


def convergence_table(runs, labels=None):
    """runs: list of (h, {variable: error}). Rows must have strictly
    decreasing h; orders are log(e1/e2)/log(h1/h2) between consecutive rows."""
    if not runs:
        raise ValueError("no runs")
    hs = [float(h) for h, _ in runs]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("mesh sizes must be strictly decreasing")
    variables = list(runs[0][1].keys())
    tab = ConvergenceTable(variables, hs, list(labels) if labels else [fmt(h) for h in hs])
    prev = None
    for h, e in runs:
        tab.errors.append(dict(e))
        if prev is None:
            tab.orders.append(None)
        else:
            ph, pe = prev
            tab.orders.append({v: math.log(pe[v] / e[v]) / math.log(ph / h) for v in variables})
        prev = (h, e)
    return tab
