"""Initial data, exact solutions and the diagnostics evaluated on a state.

DG initial data for the involution tests is built from potentials: a scalar
potential is interpolated into the continuous space and differentiated with
the primary gradient, a vector potential with the primary curl. Elementwise
L2 projection is only used for fields that are not checked for involutions
(plane-wave convergence data).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import solvers as slv
from .mesh import SimplexMesh, generate_structured, perturbed_delaunay, quality, read_mesh
from .operators import CompatibleOperators, build
from .refelem import quadrature
from .spaces import interpolate_fem, physical_points

log = logging.getLogger(__name__)

SYSTEMS = ("acoustics", "maxwell", "maxwellglm", "euler")


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------- initial data


def init_compatible_grad(potential, ops: CompatibleOperators, m=2):
    """Primary gradient of the FEM interpolant of potential(x)."""
    z = interpolate_fem(potential, ops.fem).values[:, 0]
    g = ops.primary_grad(z)
    if m == 3:
        g = np.concatenate([g, np.zeros(g.shape[:2] + (1,))], axis=-1)
    return g


def init_compatible_curl(potential, ops: CompatibleOperators):
    """Primary curl of the FEM interpolant of a 3-component potential."""
    a = interpolate_fem(potential, ops.fem).values
    if a.shape[1] != 3:
        raise ScenarioError("vector potential must have 3 components")
    return ops.primary_curl(a)


def l2_project_dg(f, ops: CompatibleOperators, exactness=None):
    """Elementwise L2 projection of f(x) -> (n, m) onto the DG space."""
    N = ops.dg.degree
    Q = quadrature(exactness or min(2 * N + 8, 30))
    phi = ops.dg.ref.basis_at(Q.points)
    x = physical_points(ops.mesh, Q.points)
    vals = np.asarray(f(x.reshape(-1, 2)), dtype=float).reshape(x.shape[0], x.shape[1], -1)
    rhs = np.einsum("q,qa,eqk->eak", Q.weights, phi, vals) * ops.detJ[:, None, None]
    return ops.solve_D(rhs)


def gaussian(sigma, amplitude=1.0, center=(0.0, 0.0)):
    c = np.asarray(center, dtype=float)

    def f(x):
        r2 = ((np.asarray(x) - c) ** 2).sum(axis=-1)
        return amplitude * np.exp(-0.5 * r2 / sigma**2)

    return f


# ---------------------------------------------------------------- exact solutions

_B = math.sqrt(2.0) / 2.0
MM_B0 = np.array([0.25 * _B, -0.25 * _B, 1.0])
MM_E0 = np.array([1.5 * _B, 0.5 * _B, 0.0])
MM_P0 = 0.25
MM_Q0 = 0.5


def _mm_characteristics():
    # 1D system along s = (x1 - x2)/sqrt(2) for u = (B1, B2, B3, E1, E2, E3, p, q):
    # B_t + A_B u_s = 0 etc. Built once from the flux Jacobian in direction n.
    n = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    jac = np.zeros((8, 8))

    def cross_mat(v):
        return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])

    X = cross_mat(n)  # n x (.)
    # B_t + curl E + grad p = 0 ; E_t - curl B + grad q = 0 ; p_t + div B = 0 ; q_t + div E = 0
    jac[0:3, 3:6] = X
    jac[0:3, 6] = n
    jac[3:6, 0:3] = -X
    jac[3:6, 7] = n
    jac[6, 0:3] = n
    jac[7, 3:6] = n
    lam, R = np.linalg.eigh(jac)  # symmetric flux Jacobian
    return lam, R, R.T


_MM_CHAR = None


def mm_planewave(x, t):
    """Plane-wave solution of Maxwell-GLM; returns (B (n,3), E (n,3), p, q).

    The initial profile sin(pi (x1 - x2)) is split into characteristic
    families moving with speeds -1, 0, +1 along (1, -1)/sqrt(2).
    """
    global _MM_CHAR
    if _MM_CHAR is None:
        _MM_CHAR = _mm_characteristics()
    lam, R, L = _MM_CHAR
    x = np.atleast_2d(x)
    u0 = np.concatenate([MM_B0, MM_E0, [MM_P0, MM_Q0]])
    w0 = L @ u0
    s = (x[:, 0] - x[:, 1]) / math.sqrt(2.0)
    k = math.pi * math.sqrt(2.0)
    phase = np.sin(k * (s[:, None] - lam[None, :] * t))  # (n, 8)
    u = (phase * w0[None, :]) @ R.T
    return u[:, 0:3], u[:, 3:6], u[:, 6], u[:, 7]


def exact_solution(name, x, t, **params):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if name == "tgv2d":
        v = np.stack([np.sin(x[:, 0]) * np.cos(x[:, 1]), -np.cos(x[:, 0]) * np.sin(x[:, 1])], axis=-1)
        p = -0.5 + 0.25 * (np.cos(2 * x[:, 0]) + np.cos(2 * x[:, 1]))
        return {"v": v, "p": p}
    if name == "mm_planewave":
        B, E, p, q = mm_planewave(x, t)
        return {"B": B, "E": E, "p": p, "q": q}
    if name == "acoustic_planewave":
        lam = params.get("wavelength", 0.25)
        ph = np.sin(2 * math.pi * (x[:, 0] - t) / lam)
        return {"v": np.stack([ph, np.zeros_like(ph)], axis=-1), "p": ph}
    raise ScenarioError(f"unknown exact solution {name!r}")


# ---------------------------------------------------------------- functionals


def energy(state, ops: CompatibleOperators, rho=1.0):
    """Half the L2 norm squared of all fields, integrated exactly."""

    def dg(w):
        w = w if w.ndim == 3 else w[..., None]
        return float(np.einsum("eak,ab,ebk,e->", w, ops.D_ref, w, ops.detJ))

    def fem(z):
        return float(np.vdot(z, ops.mass @ z))

    if isinstance(state, slv.AcousticsState):
        return 0.5 * (dg(state.v) + fem(state.p))
    if isinstance(state, slv.MaxwellState):
        return 0.5 * (dg(state.B) + fem(state.E))
    if isinstance(state, slv.MaxwellGLMState):
        return 0.5 * (dg(state.B) + dg(state.q) + fem(state.E) + fem(state.p))
    if isinstance(state, slv.EulerState):
        return 0.5 * rho * dg(state.v)
    raise ScenarioError(f"no energy for {type(state).__name__}")


def involution_errors(w, ops: CompatibleOperators):
    """(eps_c, eps_d): max over FEM rows of |int grad psi x w| and |int grad psi . w|."""
    eps_c = float(np.abs(ops.grad_psi_cross(w)).max())
    eps_d = float(np.abs(ops.weak_grad_T(w)).max())
    return eps_c, eps_d


def l2_error(values, ops: CompatibleOperators, exact, kind="dg"):
    """Per-component L2 error against exact(x) -> (n,) or (n, m)."""
    N = ops.dg.degree
    Q = quadrature(2 * (N + 2))
    x = physical_points(ops.mesh, Q.points)
    ref = np.asarray(exact(x.reshape(-1, 2)), dtype=float).reshape(x.shape[0], x.shape[1], -1)
    if kind == "dg":
        w = values if values.ndim == 3 else values[..., None]
        num = np.einsum("qa,eak->eqk", ops.dg.ref.basis_at(Q.points), w)
    else:
        z = values if values.ndim == 2 else values[:, None]
        num = np.einsum("qa,eak->eqk", ops.fem.ref.basis_at(Q.points), z[ops.l2g])
    err2 = np.einsum("q,e,eqk->k", Q.weights, ops.detJ, (num - ref) ** 2)
    return np.sqrt(err2)


# ---------------------------------------------------------------- scenario driver


@dataclass
class Scenario:
    system: str
    name: str = "gaussian"  # gaussian | t1 | t2 | planewave | tgv2d
    box: tuple = (-0.5, 0.5, -0.5, 0.5)
    nx: int = 10
    ny: int | None = None
    mesh_path: str | None = None
    mesh_kind: str = "structured"  # or "unstructured" (jittered periodic Delaunay)
    jitter: float = 0.3
    mesh_seed: int = 1709
    degree: int = 1
    t_end: float = 1.0
    dt: float | None = None  # fixed step; overrides the CFL policy
    cfl: float = 0.5
    cfl_scale_h: bool = False  # "CFL proportional to h": cfl is multiplied by h_min
    sigma: float = 0.05
    amplitude: float = 1.0
    rho: float = 1.0
    cg: slv.CGConfig = field(default_factory=slv.CGConfig)
    log_every: int = 1

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ScenarioError(f"unknown system {self.system!r}")
        if self.t_end < 0:
            raise ScenarioError("final time must be non-negative")
        if self.sigma <= 0:
            raise ScenarioError("sigma must be positive")
        if self.degree < 0:
            raise ScenarioError("degree must be non-negative")
        if self.mesh_kind not in ("structured", "unstructured"):
            raise ScenarioError(f"unknown mesh kind {self.mesh_kind!r}")


@dataclass
class DiagnosticSeries:
    t: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    eps_c: list = field(default_factory=list)
    eps_d: list = field(default_factory=list)
    cg_iters: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    wall_time: float = 0.0
    dt: float = 0.0
    n_steps: int = 0
    total_cg_iters: int = 0  # every step, not only the logged ones

    def append(self, t, e, ec, ed, its, res):
        if self.t and t <= self.t[-1]:
            raise ScenarioError("time must be strictly increasing")
        self.t.append(t)
        self.energy.append(e)
        self.eps_c.append(ec)
        self.eps_d.append(ed)
        self.cg_iters.append(its)
        self.residual.append(res)


def build_mesh(scn: Scenario) -> SimplexMesh:
    if scn.mesh_path:
        return read_mesh(scn.mesh_path, periodic=True, box=scn.box)
    if scn.mesh_kind == "unstructured":
        return perturbed_delaunay(scn.nx, scn.ny or scn.nx, scn.box, scn.jitter, scn.mesh_seed)
    return generate_structured(scn.nx, scn.ny or scn.nx, scn.box, periodic=True)


def time_step(scn: Scenario, mesh: SimplexMesh, vmax=1.0):
    """dt = CFL * h_min / (2N + 1) / vmax, then shrunk so T is hit exactly."""
    if scn.dt is not None:
        dt = scn.dt
    else:
        h = quality(mesh).h_min
        cfl = scn.cfl * h if scn.cfl_scale_h else scn.cfl
        dt = cfl * h / ((2 * scn.degree + 1) * vmax)
    if scn.t_end == 0:
        return dt, 0
    n = max(1, math.ceil(scn.t_end / dt - 1e-9))
    return scn.t_end / n, n


def initial_state(scn: Scenario, ops: CompatibleOperators):
    nfem, shape_dg = ops.n_fem, (ops.mesh.n_e, ops.dg.n_loc)
    g = gaussian(scn.sigma, scn.amplitude)
    s, name = scn.system, scn.name
    if s == "acoustics":
        if name == "gaussian":
            return slv.AcousticsState(np.zeros(shape_dg + (2,)), g(ops.fem.coords))
        if name == "planewave":
            lam = 0.25
            v = init_compatible_grad(lambda x: -lam / (2 * math.pi) * np.cos(2 * math.pi * x[:, 0] / lam), ops)
            p = np.sin(2 * math.pi * ops.fem.coords[:, 0] / lam)
            return slv.AcousticsState(v, p)
    if s == "maxwell" and name == "gaussian":
        E = np.zeros((nfem, 3))
        E[:, 2] = g(ops.fem.coords)
        return slv.MaxwellState(np.zeros(shape_dg + (3,)), E)
    if s == "maxwellglm":
        zero_B, zero_q = np.zeros(shape_dg + (3,)), np.zeros(shape_dg)
        if name == "t1":
            E = np.zeros((nfem, 3))
            E[:, 2] = g(ops.fem.coords)
            return slv.MaxwellGLMState(zero_B, zero_q, E, np.zeros(nfem))
        if name == "t2":
            return slv.MaxwellGLMState(zero_B, zero_q, np.zeros((nfem, 3)), g(ops.fem.coords))
        if name == "planewave":
            B = l2_project_dg(lambda x: mm_planewave(x, 0.0)[0], ops)
            q = l2_project_dg(lambda x: mm_planewave(x, 0.0)[3][:, None], ops)[..., 0]
            _, E, p, _ = mm_planewave(ops.fem.coords, 0.0)
            return slv.MaxwellGLMState(B, q, E, p)
    if s == "euler" and name == "tgv2d":
        v = init_compatible_curl(lambda x: np.stack([0 * x[:, 0], 0 * x[:, 0], np.sin(x[:, 0]) * np.sin(x[:, 1])], axis=-1), ops)[..., :2]
        p = exact_solution("tgv2d", ops.fem.coords, 0.0)["p"]
        return slv.EulerState(v, p)
    raise ScenarioError(f"no initial data {name!r} for system {s!r}")


def make_stepper(scn: Scenario, ops, dt):
    if scn.system == "acoustics":
        return slv.AcousticsStepper(ops, dt, scn.cg)
    if scn.system == "maxwell":
        return slv.MaxwellStepper(ops, dt, scn.cg)
    if scn.system == "maxwellglm":
        return slv.MaxwellGLMStepper(ops, dt, scn.cg)
    return slv.EulerStepper(ops, dt, scn.rho, scn.cg)


def watched_field(state):
    """The DG vector field whose involutions are tracked."""
    return state.v if hasattr(state, "v") else state.B


def final_errors(scn: Scenario, ops, state, t):
    if scn.system == "maxwellglm" and scn.name == "planewave":
        ex = lambda key: (lambda x: exact_solution("mm_planewave", x, t)[key])  # noqa: E731
        eB = l2_error(state.B, ops, ex("B"))
        eE = l2_error(state.E, ops, ex("E"), kind="fem")
        return {"B1": eB[0], "B2": eB[1], "p": l2_error(state.p, ops, ex("p"), "fem")[0],
                "E1": eE[0], "E2": eE[1], "q": l2_error(state.q, ops, ex("q"))[0]}
    if scn.system == "euler" and scn.name == "tgv2d":
        ex = lambda key: (lambda x: exact_solution("tgv2d", x, t)[key])  # noqa: E731
        ev = l2_error(state.v, ops, ex("v"))
        return {"v1": ev[0], "v2": ev[1], "p": l2_error(state.p, ops, ex("p"), "fem")[0]}
    if scn.system == "acoustics" and scn.name == "planewave":
        ex = lambda key: (lambda x: exact_solution("acoustic_planewave", x, t)[key])  # noqa: E731
        ev = l2_error(state.v, ops, ex("v"))
        return {"v1": ev[0], "p": l2_error(state.p, ops, ex("p"), "fem")[0]}
    return {}


def simulate(scn: Scenario, on_log=None, ops=None, on_state=None, state_every=0):
    """Run a scenario. on_log(step, t, energy, eps_c, eps_d, cg_iters, residual)
    is called at t=0 and every log_every steps; on_state(step, t, state, ops)
    at t=0 and every state_every steps when state_every > 0.
    Returns (state, series, ops)."""
    t0 = time.perf_counter()
    mesh = build_mesh(scn) if ops is None else ops.mesh
    ops = ops or build(mesh, scn.degree)
    state = initial_state(scn, ops)
    vmax = 1.0
    if scn.system == "euler":
        vmax = max(float(np.abs(state.v).max()), 1e-300)
    dt, n_steps = time_step(scn, mesh, vmax)
    stepper = make_stepper(scn, ops, dt)
    series = DiagnosticSeries(dt=dt, n_steps=n_steps)

    def record(step, st, its, res):
        e = energy(st, ops, scn.rho)
        ec, ed = involution_errors(watched_field(st), ops)
        series.append(step * dt, e, ec, ed, its, res)
        if on_log is not None:
            on_log(step, step * dt, e, ec, ed, its, res)

    record(0, state, 0, 0.0)
    if on_state is not None and state_every:
        on_state(0, 0.0, state, ops)
    log.info("%s/%s N=%d n_e=%d n_fem=%d dt=%.6g steps=%d", scn.system, scn.name, scn.degree,
             mesh.n_e, ops.n_fem, dt, n_steps)
    for n in range(1, n_steps + 1):
        state, res = stepper.step(state)
        series.total_cg_iters += res.iterations
        if n % scn.log_every == 0 or n == n_steps:
            record(n, state, res.iterations, res.residual)
        if on_state is not None and state_every and n % state_every == 0:
            on_state(n, n * dt, state, ops)
    series.errors = final_errors(scn, ops, state, n_steps * dt)
    series.wall_time = time.perf_counter() - t0
    return state, series, ops
