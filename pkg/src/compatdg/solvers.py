"""Matrix-free conjugate gradients and the semi-implicit time steppers.

All linear systems (acoustics, Maxwell, Maxwell-GLM) use Crank-Nicolson in
time; the DG unknown is eliminated through the block-diagonal D, leaving an
SPD system for the FEM unknown. The incompressible Euler stepper is an
explicit DG convective predictor followed by a pressure projection.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .operators import CompatibleOperators
from .refelem import gauss_legendre_01, quadrature

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class CFLWarning(UserWarning):
    pass


@dataclass
class CGConfig:
    rel_tol: float = 1e-13
    abs_tol: float = 1e-300
    max_iter: int | None = None  # default 20 * n_unknowns
    preconditioner: str = "jacobi"  # or "none"

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class CGResult:
    iterations: int
    residual: float  # relative 2-norm of the recursive residual
    converged: bool
    history: list = field(default_factory=list, repr=False)


@dataclass
class StepReport:
    cg_iterations: int = 0
    residual: float = 0.0
    energy_before: float = float("nan")
    energy_after: float = float("nan")
    wall_time: float = 0.0


def cg_solve(apply, b, x0=None, cfg: CGConfig | None = None, diag=None):
    """Preconditioned CG for an SPD action. Arrays of any shape are treated
    as flat vectors. Stops when ||r|| <= max(rel_tol ||b||, abs_tol).

    Returns (x, CGResult). Non-convergence is flagged, not raised; a NaN
    raises SolverError.
    """
    cfg = cfg or CGConfig()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float, copy=True)
    max_iter = cfg.max_iter or 20 * b.size
    bnorm = np.linalg.norm(b)
    if not np.isfinite(bnorm) or not np.isfinite(x).all():
        raise SolverError("NaN/Inf in CG right-hand side or initial guess")
    target = max(cfg.rel_tol * bnorm, cfg.abs_tol)
    if bnorm == 0.0:
        return np.zeros_like(b), CGResult(0, 0.0, True)
    inv_diag = None
    if cfg.preconditioner == "jacobi" and diag is not None:
        inv_diag = 1.0 / np.asarray(diag, dtype=float).reshape(b.shape)
    r = b - apply(x)
    rnorm = np.linalg.norm(r)
    history = [rnorm / bnorm]
    best_x, best_r = x.copy(), rnorm
    if rnorm <= target:
        return x, CGResult(0, rnorm / bnorm, True, history)
    z = r * inv_diag if inv_diag is not None else r
    p = z.copy()
    rz = np.vdot(r, z)
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = np.vdot(p, Ap)
        if not np.isfinite(pAp):
            raise SolverError(f"NaN/Inf in CG at iteration {it}")
        if pAp <= 0:
            raise SolverError(f"operator not positive definite (p.Ap = {pAp:.3e}) at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        history.append(rnorm / bnorm)
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
        if rnorm <= target:
            return x, CGResult(it, rnorm / bnorm, True, history)
        z = r * inv_diag if inv_diag is not None else r
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    log.warning("CG hit max_iter=%d with residual %.3e", max_iter, best_r / bnorm)
    return best_x, CGResult(max_iter, best_r / bnorm, False, history)


def _check(res: CGResult, what):
    if not res.converged:
        raise SolverError(f"{what}: CG did not converge (residual {res.residual:.3e} after {res.iterations} its)")


def _solve_split(ops, dt, rhs, x0, cfg, diag, glm, what):
    """Solve the vector Schur system as two independent blocks.

    On z-invariant fields the out-of-plane component never mixes with the
    in-plane ones (curl E_3 is in-plane, curl and div of (E_1, E_2) only
    involve those two), and its block is exactly the scalar operator
    M + dt^2/4 G^T D^{-1} G. A block with zero data costs no iterations.
    """
    def plane(x):
        X = np.zeros((ops.n_fem, 3))
        X[:, :2] = x
        return ops.schur_apply_vector(X, dt, glm)[:, :2]

    E = np.empty_like(rhs)
    E[:, :2], res_a = cg_solve(plane, rhs[:, :2], x0[:, :2], cfg, diag[:, :2])
    _check(res_a, what + " (in-plane part)")
    E[:, 2], res_b = cg_solve(lambda x: ops.schur_apply_scalar(x, dt), rhs[:, 2], x0[:, 2], cfg, diag[:, 2])
    _check(res_b, what + " (out-of-plane part)")
    return E, CGResult(res_a.iterations + res_b.iterations, max(res_a.residual, res_b.residual), True)


# ---------------------------------------------------------------- states


@dataclass
class AcousticsState:
    v: np.ndarray  # DG (n_e, nd, 2)
    p: np.ndarray  # FEM (n_fem,)


@dataclass
class MaxwellState:
    B: np.ndarray  # DG (n_e, nd, 3)
    E: np.ndarray  # FEM (n_fem, 3)


@dataclass
class MaxwellGLMState:
    B: np.ndarray  # DG (n_e, nd, 3)
    q: np.ndarray  # DG (n_e, nd)
    E: np.ndarray  # FEM (n_fem, 3)
    p: np.ndarray  # FEM (n_fem,)


@dataclass
class EulerState:
    v: np.ndarray  # DG (n_e, nd, 2)
    p: np.ndarray  # FEM (n_fem,)


# ---------------------------------------------------------------- linear systems


class AcousticsStepper:
    """v_t + grad p = 0, p_t + div v = 0; v in U_h^N, p in W_h^{N+1}."""

    def __init__(self, ops: CompatibleOperators, dt: float, cg: CGConfig | None = None):
        self.ops, self.dt, self.cg = ops, dt, cg or CGConfig()
        self.diag = ops.diag_M() + 0.25 * dt * dt * ops.diag_laplacian()

    def step(self, s: AcousticsState):
        ops, dt = self.ops, self.dt
        rhs = ops.mass @ s.p + dt * ops.weak_grad_T(s.v) - 0.25 * dt * dt * ops.laplacian(s.p)
        p1, res = cg_solve(lambda x: ops.schur_apply_scalar(x, dt), rhs, s.p, self.cg, self.diag)
        _check(res, "acoustics pressure system")
        ph = 0.5 * (s.p + p1)
        v1 = s.v - dt * ops.solve_D(ops.weak_grad(ph))
        return AcousticsState(v1, p1), res


class MaxwellStepper:
    """B_t + curl E = 0, E_t - curl B = 0; B in U_h^N, E in W_h^{N+1}."""

    def __init__(self, ops: CompatibleOperators, dt: float, cg: CGConfig | None = None):
        self.ops, self.dt, self.cg = ops, dt, cg or CGConfig()
        self.diag = ops.diag_M()[:, None] + 0.25 * dt * dt * ops.diag_curlcurl()

    def step(self, s: MaxwellState):
        ops, dt = self.ops, self.dt
        rhs = ops.mass @ s.E + dt * ops.weak_curl_T(s.B) - 0.25 * dt * dt * ops.curlcurl(s.E)
        E1, res = _solve_split(ops, dt, rhs, s.E, self.cg, self.diag, False, "Maxwell electric field system")
        Eh = 0.5 * (s.E + E1)
        B1 = s.B - dt * ops.solve_D(ops.weak_curl(Eh))
        return MaxwellState(B1, E1), res


class MaxwellGLMStepper:
    """Maxwell with hyperbolic cleaning: B, q in U_h^N; E, p in W_h^{N+1}.

    The p and E systems decouple because G^T D^{-1} C = 0 holds exactly
    (discrete div curl = 0); p is solved first, then E, then B and q are
    updated explicitly.
    """

    def __init__(self, ops: CompatibleOperators, dt: float, cg: CGConfig | None = None):
        self.ops, self.dt, self.cg = ops, dt, cg or CGConfig()
        self.diag_p = ops.diag_M() + 0.25 * dt * dt * ops.diag_laplacian()
        self.diag_E = ops.diag_M()[:, None] + 0.25 * dt * dt * ops.diag_curlcurl(glm=True)

    def step(self, s: MaxwellGLMState):
        ops, dt = self.ops, self.dt
        c = 0.25 * dt * dt
        rhs_p = ops.mass @ s.p + dt * ops.weak_grad_T(s.B) - c * ops.laplacian(s.p)
        p1, res_p = cg_solve(lambda x: ops.schur_apply_scalar(x, dt), rhs_p, s.p, self.cg, self.diag_p)
        _check(res_p, "GLM scalar system")
        rhs_E = (ops.mass @ s.E + dt * ops.weak_curl_T(s.B) + dt * ops.weak_div_T(s.q)
                 - c * (ops.curlcurl(s.E) + ops.graddiv(s.E)))
        E1, res_E = _solve_split(ops, dt, rhs_E, s.E, self.cg, self.diag_E, True, "GLM electric field system")
        ph = 0.5 * (s.p + p1)
        Eh = 0.5 * (s.E + E1)
        gp = ops.weak_grad(ph)
        dB = ops.weak_curl(Eh)
        dB[..., :2] += gp
        B1 = s.B - dt * ops.solve_D(dB)
        q1 = s.q - dt * ops.solve_D(ops.weak_div(Eh))
        res = CGResult(res_p.iterations + res_E.iterations, max(res_p.residual, res_E.residual), True)
        return MaxwellGLMState(B1, q1, E1, p1), res


# ---------------------------------------------------------------- incompressible Euler


class EulerStepper:
    """Explicit DG convection with a Ducros flux, then projection onto the
    discretely divergence-free velocities through a pressure Poisson solve
    with one pinned pressure DOF."""

    def __init__(self, ops: CompatibleOperators, dt: float, rho: float = 1.0,
                 cg: CGConfig | None = None, pin_point=(0.0, 0.0), cfl_max: float = 0.25):
        self.ops, self.dt, self.rho = ops, dt, rho
        self.cg = cg or CGConfig(rel_tol=1e-12)
        self.cfl_max = cfl_max
        mesh = ops.mesh
        self.conn = mesh.connectivity()
        N = ops.dg.degree
        # volume tables
        Q = quadrature(3 * (N + 1))
        self.qw = Q.weights
        self.phi_q = ops.dg.ref.basis_at(Q.points)  # (q, nd)
        dphi = ops.dg.ref.grad_basis_at(Q.points)  # (q, nd, 2) reference
        self.dphi_q = np.einsum("qak,ekm->eqam", dphi, ops.Jinv)  # physical
        # edge tables: own side at s, neighbour side at 1 - s
        n_edge_pts = max(1, (3 * N + 2) // 2 + 1)
        s, w = gauss_legendre_01(n_edge_pts)
        self.ew = w
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        own, other = [], []
        for k in range(3):
            a, b = verts[k], verts[(k + 1) % 3]
            own.append(ops.dg.ref.basis_at(a + s[:, None] * (b - a)))
            other.append(ops.dg.ref.basis_at(a + (1.0 - s)[:, None] * (b - a)))
        self.phi_e = np.array(own)  # (3, qe, nd)
        self.phi_e_rev = np.array(other)
        P = mesh.vertices[mesh.triangles]
        t = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 1], P[:, 0] - P[:, 2]], axis=1)  # (n_e, 3, 2)
        self.elen = np.linalg.norm(t, axis=2)
        self.normal = np.stack([t[..., 1], -t[..., 0]], axis=-1) / self.elen[..., None]
        if (self.conn.neighbor < 0).any():
            raise SolverError("Euler stepper needs a fully periodic mesh")
        if not self.conn.reversed.all():
            raise SolverError("shared edges must be traversed in opposite directions")
        # pinned pressure DOF
        d = np.linalg.norm(ops.fem.coords - np.asarray(pin_point)[None, :], axis=1)
        self.pin = int(np.argmin(d))
        diag = ops.diag_laplacian().copy()
        diag[self.pin] = 1.0
        self.diag = diag
        self.h_min = float(self.elen.max(axis=1).min())

    def convective_residual(self, v):
        """int grad phi . (v x v) - int_{dT} phi fhat.n, without rho."""
        # volume
        vq = np.einsum("qa,eak->eqk", self.phi_q, v)
        flux = np.einsum("eqj,eqk->eqjk", vq, vq)
        wq = self.qw[None, :] * self.ops.detJ[:, None]
        vol = np.einsum("eq,eqaj,eqjk->eak", wq, self.dphi_q, flux)
        # surface
        nb, nbe = self.conn.neighbor, self.conn.neighbor_edge
        surf = np.zeros_like(v)
        for k in range(3):
            vin = np.einsum("qa,eak->eqk", self.phi_e[k], v)
            # neighbour trace, evaluated at the matching physical points
            vout = np.empty_like(vin)
            for kk in range(3):
                sel = nbe[:, k] == kk
                if sel.any():
                    vout[sel] = np.einsum("qa,eak->eqk", self.phi_e_rev[kk], v[nb[sel, k]])
            n = self.normal[:, k, :]
            avg = 0.5 * (vin + vout)
            vn = np.einsum("eqk,ek->eq", avg, n)
            fhat = vn[..., None] * avg - 0.5 * np.abs(vn)[..., None] * (vout - vin)
            wl = self.ew[None, :] * self.elen[:, k][:, None]
            surf += np.einsum("eq,qa,eqk->eak", wl, self.phi_e[k], fhat)
        return vol - surf

    def _poisson(self, x):
        x = x.copy()
        x[self.pin] = 0.0
        y = self.ops.laplacian(x)
        y[self.pin] = x[self.pin]
        return y

    def stable_dt(self, v):
        vmax = float(np.abs(v).max())
        N = self.ops.dg.degree
        return np.inf if vmax == 0 else self.cfl_max * self.h_min / ((2 * N + 1) * vmax)

    def step(self, s: EulerState):
        ops, dt, rho = self.ops, self.dt, self.rho
        limit = self.stable_dt(s.v)
        if dt > limit:
            log.debug("dt=%.3e above convective limit %.3e", dt, limit)
            warnings.warn("time step exceeds the convective CFL limit", CFLWarning, stacklevel=2)
        vstar = s.v + dt * ops.solve_D(self.convective_residual(s.v))
        rhs = (rho / dt) * ops.weak_grad_T(vstar)
        rhs[self.pin] = 0.0
        p1, res = cg_solve(self._poisson, rhs, s.p, self.cg, self.diag)
        _check(res, "pressure Poisson system")
        p1[self.pin] = 0.0
        v1 = vstar - (dt / rho) * ops.solve_D(ops.weak_grad(p1))
        self.last_vstar = vstar
        return EulerState(v1, p1), res


def run(stepper, state, n_steps, callback=None):
    """Advance n_steps, calling callback(step, state, StepReport)."""
    for n in range(1, n_steps + 1):
        t0 = time.perf_counter()
        state, res = stepper.step(state)
        rep = StepReport(res.iterations, res.residual, wall_time=time.perf_counter() - t0)
        if callback is not None:
            callback(n, state, rep)
    return state
