"""Finite-dimensional reduction: ansatz, kernel basis, and the phi solve.

The peak ansatz W transplants the half-space profile to the chart box and
the kernel fields Z^i transplant its tangential derivatives; the
correction phi is the fixed point of

    phi  <-  L^-1 ( N(phi) + R + S(phi) )

on the orthogonal complement of span{Z^i}, where L is the linearization
of the single-equation reformulation at W.  L is inverted through a
bordered (saddle) system that enforces the kernel constraints at solver
precision; the right-hand sides enter in weak form, so one bordered solve
replaces the istar-then-project composition exactly.

The nodal ansatz is polished by a short Newton run on the flat-metric
discrete equation before the cutoff is applied (build_ansatz(refine=True),
the default).  The sampled profile alone carries an O(h^2) discretization
residual that is identical for every eps on the eps-scaled grid and would
mask the metric-driven smallness of R and phi; polishing removes that
floor while changing W only at discretization order.  Flat-problem data
(W, Z^i) depend on the grid and eps only and are cached across charts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, minres

from .electrostatics import Electrostatics
from .errors import (
    ContractionDiverged,
    DegenerateKernel,
    IterationLimit,
    ResolutionError,
)
from .fields import EpsSpace, Field, Grid, MetricSamples
from .geometry import FermiChart, fermi_chart
from .ground_state import GroundState, kernel_eval

__all__ = [
    "RunOptions",
    "Ansatz",
    "KernelBasis",
    "ReductionState",
    "ReductionWorkspace",
    "cutoff_profile",
    "build_ansatz",
    "build_kernel",
    "project_orth",
    "term_R",
    "term_N",
    "term_S",
    "solve_phi",
]


@dataclass(frozen=True)
class RunOptions:
    """Numerical knobs shared by all reduction-grade runs."""

    z_extent: float = 10.5        # chart radius in units of eps
    nodes_per_eps: float = 6.0    # grid resolution of the spike core
    lin_tol: float = 1e-9         # relative tolerance of inner linear solves
    phi_tol: float = 1e-7         # eps-norm increment stopping threshold
    max_picard: int = 30
    psi_variant: str = "neumann_proca"
    far_bc: str = "robin"
    bound_tol: float = 1e-8
    fan_rays: int = 96
    refine_ansatz: bool = True


def smoothstep(t):
    """Quintic ramp: 1 on t <= 1/2, 0 on t >= 1, C^2 in between."""
    t = np.asarray(t, dtype=float)
    s = np.clip((t - 0.5) / 0.5, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def cutoff_profile(grid: Grid, R: float) -> np.ndarray:
    """Product cutoff chi(|ybar|/R) chi(y_n/R); gradient bounded by 4/R."""
    mesh = grid.meshgrid()
    rbar = np.sqrt(sum(m ** 2 for m in mesh[:-1]))
    return smoothstep(rbar / R) * smoothstep(mesh[-1] / R)


def f_power(u, p):
    """Nonlinearity f(u) = (u^+)^(p-1)."""
    return np.maximum(u, 0.0) ** (p - 1.0)


def df_power(u, p):
    """f'(u) = (p-1)(u^+)^(p-2); vanishes on u <= 0."""
    return (p - 1.0) * np.maximum(u, 0.0) ** (p - 2.0)


@dataclass
class Ansatz:
    chart: FermiChart
    eps: float
    W: Field
    R: float
    chi: np.ndarray
    peak_value: float


@dataclass
class KernelBasis:
    fields: list
    gram: np.ndarray
    gram_inv: np.ndarray
    space: EpsSpace

    def inner_with(self, u: np.ndarray) -> np.ndarray:
        return np.array([self.space.inner(z, u) for z in self.fields])


@dataclass
class ReductionState:
    ansatz: Ansatz
    basis: KernelBasis
    phi: Field
    trace: list
    norms: dict
    converged: bool
    workspace: "ReductionWorkspace" = field(repr=False, default=None)


# --------------------------------------------------------------------------
# flat-problem cache: nodal ansatz and kernel values per (grid, eps)
# --------------------------------------------------------------------------

_FLAT_CACHE: dict = {}
_FLAT_CACHE_MAX = 2


def _flat_key(grid: Grid, eps: float, gs: GroundState, refine: bool):
    return (grid.n, grid.shape, tuple(round(s, 14) for s in grid.spacings),
            round(eps, 14), round(gs.params.msq, 12), round(gs.params.p, 12),
            refine)


def _minres_true(op, b, M, tol, maxiter=600, x0=None, rounds=4):
    """MINRES with true-residual control.

    scipy's stopping test sees the preconditioned residual, which with a
    strong multigrid preconditioner underestimates the true one by orders
    of magnitude; iterate with refinement until || b - op x || <= tol ||b||.
    """
    bn = float(np.linalg.norm(b))
    if bn == 0.0:
        return np.zeros_like(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    for _ in range(rounds):
        r = b - op.matvec(x)
        if np.linalg.norm(r) <= tol * bn:
            return x
        dx, info = minres(op, r, rtol=1e-12, maxiter=maxiter, M=M)
        if info != 0:
            raise IterationLimit(f"minres failed (info={info})")
        x = x + dx
    r = b - op.matvec(x)
    if np.linalg.norm(r) <= 10.0 * tol * bn:
        return x
    raise IterationLimit(
        f"bordered solve stalled at {np.linalg.norm(r) / bn:.2e}")


def _newton_flat(space: EpsSpace, u0: np.ndarray, zs: list, p: float,
                 tol: float = 1e-10, maxiter: int = 14) -> np.ndarray:
    """Newton solve of the discrete flat equation A u = M f(u).

    Steps are constrained orthogonal to the translation modes zs (the
    linearization is near-singular along them); on the symmetric grid the
    residual has no such component, so this converges to the centered
    discrete ground state.
    """
    A = space.A_eps
    w = space.w_geom
    M_prec = space.op.preconditioner()
    N = space.grid.size
    B = np.column_stack([A @ z.ravel() for z in zs])
    B = B / np.linalg.norm(B, axis=0)
    m = B.shape[1]

    def pc(x):
        return np.concatenate([M_prec.matvec(x[:N]), x[N:]])

    P = LinearOperator((N + m, N + m), matvec=pc)
    u = u0.copy()
    scale = float(np.linalg.norm((w * f_power(u0, p)).ravel()))
    for _ in range(maxiter):
        res = A @ u.ravel() - (w * f_power(u, p)).ravel()
        res_rel = np.linalg.norm(res) / scale
        if res_rel < tol:
            return u
        diag = (w * df_power(u, p)).ravel()

        def mv(x, diag=diag):
            top = A @ x[:N] - diag * x[:N] + B @ x[N:]
            return np.concatenate([top, B.T @ x[:N]])

        op = LinearOperator((N + m, N + m), matvec=mv)
        # inexact forcing: enough accuracy for quadratic progress
        step_tol = min(1e-2, max(0.1 * res_rel, 1e-9))
        sol = _minres_true(op, np.concatenate([-res, np.zeros(m)]), P,
                           step_tol)
        u = u + sol[:N].reshape(space.grid.shape)
    raise IterationLimit("flat ansatz Newton did not converge")


def _flat_pack(grid: Grid, eps: float, gs: GroundState, refine: bool) -> dict:
    """Nodal values of the flat discrete ansatz and kernel fields."""
    key = _flat_key(grid, eps, gs, refine)
    if key in _FLAT_CACHE:
        return _FLAT_CACHE[key]
    z = grid.coords() / eps
    rad = np.sqrt(np.sum(z * z, axis=-1))
    W0 = gs.value(rad)
    n = grid.n
    Zs = [kernel_eval(gs, i, z) for i in range(1, n)]
    if refine:
        flat_metric = MetricSamples.flat(grid)
        flat_space = EpsSpace(flat_metric, eps, gs.params.msq)
        W = _newton_flat(flat_space, W0, Zs, gs.params.p)
    else:
        W = W0
    pack = {"W": W, "Zs": Zs}
    _FLAT_CACHE[key] = pack
    while len(_FLAT_CACHE) > _FLAT_CACHE_MAX:
        _FLAT_CACHE.pop(next(iter(_FLAT_CACHE)))
    return pack


# --------------------------------------------------------------------------
# ansatz and kernel
# --------------------------------------------------------------------------

def build_ansatz(chart: FermiChart, gs: GroundState, eps: float,
                 space: EpsSpace, refine: bool = True) -> Ansatz:
    """Peak ansatz W on the chart grid.

    Requires eps < R/10 (spike inside the cutoff plateau) and grid spacing
    at most eps/6 (core resolved).
    """
    grid = space.grid
    R = chart.R
    if not eps < R / 10.0:
        raise ResolutionError(f"need eps < R/10 = {R / 10:.4g}, got {eps}")
    if max(grid.spacings) > eps / 6.0 + 1e-12:
        raise ResolutionError(
            f"grid spacing {max(grid.spacings):.4g} exceeds eps/6")
    pack = _flat_pack(grid, eps, gs, refine)
    chi = cutoff_profile(grid, R)
    W = pack["W"] * chi
    if np.any(W < 0.0):
        raise ValueError("ansatz must be nonnegative")
    return Ansatz(chart=chart, eps=eps, W=Field(grid, W), R=R, chi=chi,
                  peak_value=float(W[tuple(s // 2 for s in grid.shape[:-1]) + (0,)]))


def build_kernel(chart: FermiChart, gs: GroundState, eps: float,
                 space: EpsSpace, cond_cap: float = 1e3) -> KernelBasis:
    """Transplanted tangential-derivative fields with their Gram matrix."""
    grid = space.grid
    pack = _flat_pack(grid, eps, gs, True)
    chi = cutoff_profile(grid, chart.R)
    fields_ = [z * chi for z in pack["Zs"]]
    m = len(fields_)
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            gram[i, j] = gram[j, i] = space.inner(fields_[i], fields_[j])
    cond = np.linalg.cond(gram)
    if cond > cond_cap:
        raise DegenerateKernel(f"Gram condition {cond:.2e} exceeds {cond_cap:.0e}")
    return KernelBasis(fields=fields_, gram=gram,
                       gram_inv=np.linalg.inv(gram), space=space)


def project_orth(basis: KernelBasis, u: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto the complement of span{Z^i}."""
    c = basis.gram_inv @ basis.inner_with(u)
    out = u.copy()
    for ci, z in zip(c, basis.fields):
        out = out - ci * z
    return out


# --------------------------------------------------------------------------
# workspace bundling chart, grid, spaces and solvers for one (xi, eps)
# --------------------------------------------------------------------------

class ReductionWorkspace:
    """Everything needed to run one reduction at a fixed (geometry, xi, eps)."""

    def __init__(self, geometry, xi, gs: GroundState, eps: float,
                 opts: RunOptions = RunOptions()):
        self.geometry = geometry
        self.xi = xi
        self.gs = gs
        self.eps = float(eps)
        self.opts = opts
        params = gs.params
        self.params = params
        R = opts.z_extent * eps
        kw = {} if geometry.kind == "synthetic" else {"n_rays": opts.fan_rays}
        self.chart = fermi_chart(geometry, xi, R, **kw)
        self.grid = Grid(params.n, R, R, eps / opts.nodes_per_eps)
        self.metric = self.chart.metric_samples(self.grid)
        self.space = EpsSpace(self.metric, eps, params.msq)
        self._electro = None
        self._ansatz = None
        self._basis = None

    @property
    def ansatz(self) -> Ansatz:
        if self._ansatz is None:
            self._ansatz = build_ansatz(self.chart, self.gs, self.eps,
                                        self.space,
                                        refine=self.opts.refine_ansatz)
        return self._ansatz

    @property
    def basis(self) -> KernelBasis:
        if self._basis is None:
            self._basis = build_kernel(self.chart, self.gs, self.eps,
                                       self.space)
        return self._basis

    @property
    def electro(self) -> Electrostatics:
        if self._electro is None:
            self._electro = Electrostatics(
                self.space, self.params.q, variant=self.opts.psi_variant,
                far_bc=self.opts.far_bc)
            self._electro.set_reference(self.ansatz.W.values)
        return self._electro

    def istar(self, v, x0=None):
        return self.space.istar(v, tol=self.opts.lin_tol, x0=x0)

    def coupling_density(self, u, psi_u):
        """g(u) = (q^2 psi^2 - 2 q psi) u."""
        q = self.params.q
        return (q ** 2 * psi_u ** 2 - 2.0 * q * psi_u) * u


# --------------------------------------------------------------------------
# the four terms and the bordered linear solve
# --------------------------------------------------------------------------

def term_R(ws: ReductionWorkspace) -> np.ndarray:
    """R = P ( istar[f(W)] - W ): metric + truncation residual of the ansatz."""
    W = ws.ansatz.W.values
    out = ws.istar(f_power(W, ws.params.p))
    return project_orth(ws.basis, out - W)


def term_N(ws: ReductionWorkspace, phi: np.ndarray) -> np.ndarray:
    """N(phi) = P istar[ f(W+phi) - f(W) - f'(W) phi ]."""
    W = ws.ansatz.W.values
    p = ws.params.p
    v = f_power(W + phi, p) - f_power(W, p) - df_power(W, p) * phi
    return project_orth(ws.basis, ws.istar(v))


def term_S(ws: ReductionWorkspace, phi: np.ndarray, psi_u=None) -> np.ndarray:
    """S(phi) = P istar[ omega^2 g(W+phi) ]."""
    W = ws.ansatz.W.values
    u = W + phi
    if psi_u is None:
        psi_u = ws.electro.psi(u, tol=ws.opts.lin_tol,
                               bound_tol=ws.opts.bound_tol)
    gval = ws.coupling_density(u, psi_u)
    return project_orth(ws.basis, ws.istar(ws.params.omega ** 2 * gval))


class _BorderedL:
    """Saddle system enforcing the kernel constraints on the L solve."""

    def __init__(self, ws: ReductionWorkspace):
        space = ws.space
        W = ws.ansatz.W.values
        self.N = space.grid.size
        self.m = len(ws.basis.fields)
        self.A_L = (space.A_eps
                    - sp.diags((space.w_geom * df_power(W, ws.params.p))
                               .ravel())).tocsr()
        self.B = np.column_stack([(space.A_eps @ z.ravel())
                                  for z in ws.basis.fields])
        # normalize the constraint columns for balanced conditioning
        self.bscale = np.linalg.norm(self.B, axis=0)
        self.B = self.B / self.bscale
        amg = space.op.preconditioner()

        def mv(x):
            phi, lam = x[:self.N], x[self.N:]
            top = self.A_L @ phi + self.B @ lam
            bot = self.B.T @ phi
            return np.concatenate([top, bot])

        def pc(x):
            return np.concatenate([amg.matvec(x[:self.N]), x[self.N:]])

        total = self.N + self.m
        self.op = LinearOperator((total, total), matvec=mv)
        self.pc = LinearOperator((total, total), matvec=pc)
        self._last = None

    def solve(self, rhs_weak: np.ndarray, tol: float, maxiter: int = 800):
        b = np.concatenate([rhs_weak.ravel(), np.zeros(self.m)])
        x = _minres_true(self.op, b, self.pc, tol, maxiter=maxiter,
                         x0=self._last)
        self._last = x
        return x[:self.N].reshape(rhs_weak.shape)


def solve_phi(ws: ReductionWorkspace, tol: float | None = None,
              max_iter: int | None = None) -> ReductionState:
    """Fixed-point solve of the orthogonal-complement equation.

    Picard iteration phi <- L^-1(N(phi) + R + S(phi)) starting from 0;
    stops when the eps-norm of the increment drops below tol.  Divergence
    (increment ratio >= 1 three times in a row) raises.
    """
    opts = ws.opts
    tol = opts.phi_tol if tol is None else tol
    max_iter = opts.max_picard if max_iter is None else max_iter
    space = ws.space
    params = ws.params
    W = ws.ansatz.W.values
    A = space.A_eps
    w = space.w_geom
    omega2 = params.omega ** 2
    use_coupling = omega2 > 0.0

    bord = _BorderedL(ws)
    AW = (A @ W.ravel()).reshape(W.shape)

    phi = np.zeros_like(W)
    psi_u = None
    trace = []
    diffs = []
    bad_streak = 0
    converged = False
    for it in range(max_iter):
        u = W + phi
        if use_coupling:
            psi_u = ws.electro.psi(u, tol=opts.lin_tol, x0=psi_u,
                                   bound_tol=opts.bound_tol)
            gval = ws.coupling_density(u, psi_u)
        else:
            gval = 0.0
        # weak right-hand side of L phi_new = N(phi) + R + S(phi)
        rhs = w * (f_power(u, params.p) - df_power(W, params.p) * phi
                   + omega2 * gval) - AW
        phi_new = bord.solve(rhs, tol=opts.lin_tol)
        diff = space.norm(phi_new - phi)
        ratio = diff / diffs[-1] if diffs else np.nan
        diffs.append(diff)
        trace.append({"iter": it, "phi_norm": space.norm(phi_new),
                      "increment": diff, "ratio": float(ratio)})
        phi = phi_new
        if len(diffs) >= 2 and diffs[-1] >= diffs[-2]:
            bad_streak += 1
            if bad_streak >= 3:
                raise ContractionDiverged(
                    f"increments grew {bad_streak} consecutive steps")
        else:
            bad_streak = 0
        if diff < tol:
            converged = True
            break
    if not converged:
        raise IterationLimit(f"no contraction below {tol} in {max_iter} steps")

    # <phi, Z^i>_eps from the (normalized) constraint columns
    ortho = (bord.B.T @ phi.ravel()) * bord.bscale / ws.eps ** params.n
    norms = {
        "phi": space.norm(phi),
        "R": space.norm(term_R(ws)),
        "N": space.norm(term_N(ws, phi)),
        "S": space.norm(term_S(ws, phi, psi_u=psi_u)) if use_coupling else 0.0,
        "kernel_orthogonality": float(np.abs(ortho).max()),
    }
    return ReductionState(ansatz=ws.ansatz, basis=ws.basis,
                          phi=Field(space.grid, phi), trace=trace,
                          norms=norms, converged=True, workspace=ws)
