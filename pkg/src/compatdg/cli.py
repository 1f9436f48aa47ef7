"""Command-line driver: `run <config>`, `verify`, `converge <system>`.

Exit codes: 0 success, 1 failed check (verify/converge), 2 bad config,
3 linear solver failure, 4 I/O failure. Relative output directories are
resolved against $COMPATDG_OUTPUT (default: the working directory).

Config grammar (INI, `#`/`;` comments):

    [run]       system, scenario, degree, t_end, dt | cfl, cfl_scale_h,
                log_every, vtk_every, output_dir, deterministic
    [mesh]      nx, ny, box = x0 x1 y0 y1, kind = structured|unstructured,
                jitter, seed, path
    [scenario]  sigma, amplitude, rho
    [cg]        rel_tol, max_iter, preconditioner = jacobi|none
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import operators as opm
from .diagnostics_io import DiagnosticsIOError, SeriesLogger, convergence_table, export_vtk, fmt
from .mesh import MeshError, generate_structured, read_mesh
from .scenarios import Scenario, ScenarioError, simulate
from .solvers import CGConfig, SolverError

log = logging.getLogger("compatdg")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4
OUTPUT_ENV = "COMPATDG_OUTPUT"
VERIFY_TOL = 1e-12


class ConfigError(ValueError):
    def __init__(self, msg, line=None, path=None):
        where = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + msg)
        self.line = line


def output_root():
    return os.environ.get(OUTPUT_ENV, os.getcwd())


def resolve_output(d):
    return d if os.path.isabs(d) else os.path.join(output_root(), d)


# ---------------------------------------------------------------- config


@dataclass
class RunConfig:
    scenario: Scenario
    output_dir: str
    vtk_every: int = 0
    deterministic: bool = True


_KNOWN = {
    "run": {"system", "scenario", "degree", "t_end", "dt", "cfl", "cfl_scale_h", "log_every",
            "vtk_every", "output_dir", "deterministic"},
    "mesh": {"nx", "ny", "box", "kind", "jitter", "seed", "path"},
    "scenario": {"sigma", "amplitude", "rho"},
    "cg": {"rel_tol", "max_iter", "preconditioner"},
}


def _key_lines(text):
    """Map (section, key) -> 1-based line number."""
    out, sec = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            out.setdefault((sec, None), i)
        elif sec and re.match(r"[^#;=:\s][^=:]*[=:]", line):
            out[(sec, re.split(r"[=:]", line, 1)[0].strip().lower())] = i
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from exc
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"syntax error: {exc.errors[0][1].strip() if exc.errors else exc}", line, path) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), path) from exc
    lines = _key_lines(text)

    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown section [{sec}]", lines.get((sec, None)), path)
        for key in cp[sec]:
            if key not in _KNOWN[sec]:
                raise ConfigError(f"unknown key '{key}' in [{sec}]", lines.get((sec, key)), path)

    def get(sec, key, conv, default=None, required=False):
        if not cp.has_option(sec, key):
            if required:
                raise ConfigError(f"missing required key '{key}' in [{sec}]", lines.get((sec, None), 1), path)
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for '{key}': {raw!r} ({exc})", lines.get((sec, key)), path) from exc

    def boolean(s):
        v = s.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")

    def box(s):
        vals = tuple(float(v) for v in s.replace(",", " ").split())
        if len(vals) != 4 or vals[0] >= vals[1] or vals[2] >= vals[3]:
            raise ValueError("expected x0 x1 y0 y1 with x0 < x1 and y0 < y1")
        return vals

    def positive_int(s):
        v = int(s)
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    mesh_path = get("mesh", "path", str)
    if mesh_path and not os.path.isabs(mesh_path):
        mesh_path = os.path.join(os.path.dirname(os.path.abspath(path)), mesh_path)
    if mesh_path and not os.path.exists(mesh_path):
        raise ConfigError(f"mesh file not found: {mesh_path}", lines.get(("mesh", "path")), path)
    cg = CGConfig(
        rel_tol=get("cg", "rel_tol", float, 1e-13),
        max_iter=get("cg", "max_iter", positive_int),
        preconditioner=get("cg", "preconditioner", str, "jacobi"),
    )
    try:
        scn = Scenario(
            system=get("run", "system", str, required=True),
            name=get("run", "scenario", str, "gaussian"),
            box=get("mesh", "box", box, (-0.5, 0.5, -0.5, 0.5)),
            nx=get("mesh", "nx", positive_int, 10),
            ny=get("mesh", "ny", positive_int),
            mesh_path=mesh_path,
            mesh_kind=get("mesh", "kind", str, "structured"),
            jitter=get("mesh", "jitter", float, 0.3),
            mesh_seed=get("mesh", "seed", int, 1709),
            degree=get("run", "degree", int, 1),
            t_end=get("run", "t_end", float, 1.0),
            dt=get("run", "dt", float),
            cfl=get("run", "cfl", float, 0.5),
            cfl_scale_h=get("run", "cfl_scale_h", boolean, False),
            sigma=get("scenario", "sigma", float, 0.05),
            amplitude=get("scenario", "amplitude", float, 1.0),
            rho=get("scenario", "rho", float, 1.0),
            cg=cg,
            log_every=get("run", "log_every", positive_int, 1),
        )
    except ScenarioError as exc:
        raise ConfigError(str(exc), None, path) from exc
    return RunConfig(
        scenario=scn,
        output_dir=get("run", "output_dir", str, "out"),
        vtk_every=get("run", "vtk_every", int, 0),
        deterministic=get("run", "deterministic", boolean, True),
    )


# ---------------------------------------------------------------- subcommands


def _state_fields(state):
    dg = {k: getattr(state, k) for k in ("v", "B", "q") if hasattr(state, k)}
    fem = {k: getattr(state, k) for k in ("p", "E") if hasattr(state, k)}
    return dg, fem


def cmd_run(config_path) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = resolve_output(cfg.output_dir)
    try:
        os.makedirs(out, exist_ok=True)
        series_path = os.path.join(out, "series.csv")
        def dump(step, t, st, ops):
            dg, fem = _state_fields(st)
            export_vtk(os.path.join(out, f"fields_{step:06d}.vtk"), ops, dg, fem, title=f"t={fmt(t)}")

        with SeriesLogger(series_path) as logger:
            state, series, ops = simulate(cfg.scenario, on_log=logger.log_step, on_state=dump,
                                          state_every=cfg.vtk_every)
        if cfg.vtk_every and series.n_steps % cfg.vtk_every:
            dump(series.n_steps, series.t[-1], state, ops)
        e0 = series.energy[0]
        summary = {
            "system": cfg.scenario.system,
            "scenario": cfg.scenario.name,
            "degree": cfg.scenario.degree,
            "n_elements": ops.mesh.n_e,
            "n_fem": ops.n_fem,
            "steps": series.n_steps,
            "dt": fmt(series.dt),
            "final_time": fmt(series.t[-1]),
            "energy_drift": fmt(max(abs(e - e0) for e in series.energy) / e0) if e0 else "0",
            "max_eps_c": fmt(max(series.eps_c)),
            "max_eps_d": fmt(max(series.eps_d)),
            "total_cg_iterations": series.total_cg_iters,
            "errors": {k: fmt(v) for k, v in series.errors.items()},
        }
        if not cfg.deterministic:
            summary["wall_time"] = series.wall_time
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DiagnosticsIOError, OSError) as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MeshError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {series_path}")
    print(f"energy drift {summary['energy_drift']}  eps_c {summary['max_eps_c']}  eps_d {summary['max_eps_d']}")
    return EXIT_OK


def sanity_suite(mesh, degree, seed=1709, samples=20, amplitude=1e-3):
    """Operator property checks with random nodal data in [0, amplitude].

    Returns {property: max magnitude}.
    """
    ops = opm.build(mesh, degree)
    rng = np.random.Generator(np.random.PCG64(seed))
    res = {"schwarz": 0.0, "curl_grad": 0.0, "div_curl": 0.0, "tangential_grad_jump": 0.0, "normal_curl_jump": 0.0}
    for _ in range(samples):
        scalar = rng.uniform(0.0, amplitude, ops.n_fem)
        vector = rng.uniform(0.0, amplitude, (ops.n_fem, 3))
        g = ops.primary_grad(scalar)
        c = ops.primary_curl(vector)
        # mixed second derivatives: dual_x(primary_y Z) - dual_y(primary_x Z)
        dx_gy = ops.stiff_map_t @ _component_rows(g[..., 1], 0)
        dy_gx = ops.stiff_map_t @ _component_rows(g[..., 0], 1)
        res["schwarz"] = max(res["schwarz"], float(np.abs(dx_gy - dy_gx).max()))
        res["curl_grad"] = max(res["curl_grad"], float(np.abs(ops.dual_curl_rhs(g)).max()))
        res["div_curl"] = max(res["div_curl"], float(np.abs(ops.dual_div_rhs(c)).max()))
        res["tangential_grad_jump"] = max(res["tangential_grad_jump"], opm.tangential_jump(ops, g))
        res["normal_curl_jump"] = max(res["normal_curl_jump"], opm.normal_jump(ops, c))
    return res


def _component_rows(values, m):
    """Place a DG scalar in derivative slot m of the (e, c, m) row layout."""
    X = np.zeros(values.shape + (2,))
    X[..., m] = values
    return X.ravel()


def cmd_verify(nx=20, ny=None, degree=3, seed=1709, mesh_path=None) -> int:
    try:
        if mesh_path:
            mesh = read_mesh(mesh_path, periodic=True)
        else:
            mesh = generate_structured(nx, ny or nx, (0.0, 1.0, 0.0, 1.0), periodic=True)
    except (MeshError, OSError) as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    res = sanity_suite(mesh, degree, seed)
    print(f"operator sanity checks: N={degree}, {mesh.n_e} triangles, seed {seed}")
    print(f"{'property':<24}{'max error':>26}  status")
    failed = []
    for k, v in res.items():
        ok = v <= VERIFY_TOL
        if not ok:
            failed.append(k)
        print(f"{k:<24}{fmt(v):>26}  {'ok' if ok else 'FAIL'}")
    print(f"elapsed {time.perf_counter() - t0:.2f} s")
    if failed:
        for k in failed:
            print(f"failed: {k} = {fmt(res[k])} > {VERIFY_TOL:g}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


CONVERGENCE_SETUPS = {
    # system: (scenario name, box, final time)
    "maxwellglm": ("planewave", (-1.0, 1.0, -1.0, 1.0), math.sqrt(2.0)),
    "euler": ("tgv2d", (0.0, 2 * math.pi, 0.0, 2 * math.pi), 0.25),
    "acoustics": ("planewave", (-0.5, 0.5, -0.5, 0.5), 0.25),
}


def convergence_sweep(system, degree, levels, cfl=0.5, cfl_scale_h=False, mesh_kind="unstructured",
                      t_end=None, seed=1709, log_fn=None):
    """Run the reference problem of `system` on each level; returns the table."""
    if system not in CONVERGENCE_SETUPS:
        raise ConfigError(f"no convergence problem for system {system!r}")
    name, box, T = CONVERGENCE_SETUPS[system]
    runs = []
    for nx in levels:
        scn = Scenario(system, name, box=box, nx=nx, degree=degree, t_end=T if t_end is None else t_end,
                       cfl=cfl, cfl_scale_h=cfl_scale_h, mesh_kind=mesh_kind, mesh_seed=seed,
                       log_every=10**9)
        _, series, _ = simulate(scn)
        runs.append(((box[1] - box[0]) / nx, series.errors))
        if log_fn:
            log_fn(nx, series)
    return convergence_table(runs, labels=list(levels))


def cmd_converge(system, degree, levels, cfl, cfl_scale_h=False, mesh_kind="unstructured", output_dir="converge") -> int:
    try:
        tab = convergence_sweep(system, degree, levels, cfl, cfl_scale_h, mesh_kind)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(tab.format())
    try:
        out = resolve_output(output_dir)
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, f"{system}_N{degree}.csv")
        tab.to_csv(path)
        print(f"wrote {path}")
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    order = tab.min_order()
    need = degree + 1 - 0.3
    if order is None or order < need:
        print(f"observed order {order} below {need:.1f}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _levels(s):
    try:
        vals = [int(v) for v in s.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("levels must be integers, e.g. 10,20") from exc
    if len(vals) < 1 or min(vals) < 1:
        raise argparse.ArgumentTypeError("levels must be positive")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="compatdg", description="Compatible DG/FEM solvers for involution-constrained PDEs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a scenario from a config file")
    r.add_argument("config")
    v = sub.add_parser("verify", help="operator identity and trace-continuity checks")
    v.add_argument("--nx", type=int, default=20)
    v.add_argument("--ny", type=int, default=None)
    v.add_argument("--degree", type=int, default=3)
    v.add_argument("--seed", type=int, default=1709)
    v.add_argument("--mesh", default=None, help="periodic mesh file instead of the generator")
    c = sub.add_parser("converge", help="mesh refinement study")
    c.add_argument("system", choices=sorted(CONVERGENCE_SETUPS))
    c.add_argument("--degree", type=int, default=1)
    c.add_argument("--levels", type=_levels, default=[10, 20])
    c.add_argument("--cfl", type=float, default=0.5)
    c.add_argument("--cfl-scale-h", action="store_true", help="multiply the CFL number by h_min")
    c.add_argument("--mesh-kind", choices=("structured", "unstructured"), default="unstructured")
    c.add_argument("--output-dir", default="converge")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "run":
        return cmd_run(args.config)
    if args.cmd == "verify":
        return cmd_verify(args.nx, args.ny, args.degree, args.seed, args.mesh)
    return cmd_converge(args.system, args.degree, args.levels, args.cfl, args.cfl_scale_h, args.mesh_kind, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
