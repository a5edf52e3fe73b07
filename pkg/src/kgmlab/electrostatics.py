"""The electrostatic map psi(u), its derivatives, and the Theta functional.

psi(u) solves the second equation of the system on the same truncated box
as u; it is not singularly perturbed, so the operator carries no eps^2.
Two variants:

* neumann_proca -- coefficient (1 + q^2 u^2), natural Neumann on the
  physical face y_n = 0;
* dirichlet -- coefficient q^2 u^2 (consistent with the full system's
  second equation; the alternative print with a single power of q is a
  notational slip), psi = 0 on the physical face.

On the artificial truncation faces the far field behaves like the
Newtonian monopole of the source, psi ~ A |y|^(2-n).  The default face
condition is the matched Robin condition

    d(psi)/d(nu) + (n-2) (y . nu) / |y|^2 psi = 0,

which is exact for that monopole on any face orientation and keeps the
truncation error at the next multipole order; plain Dirichlet and the
all-Neumann variant remain available (the latter traps the source flux in
the shrinking box and pollutes small-eps scalings, so it is not the
default).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .errors import BoundViolation, IterationLimit
from .fields import EpsSpace

__all__ = ["PSI_VARIANTS", "Electrostatics"]

PSI_VARIANTS = ("neumann_proca", "dirichlet")


class Electrostatics:
    """Solver bundle for one (space, q, variant, far_bc) combination.

    Reuses the space's metric stiffness; only the diagonal changes between
    solves.  A reference preconditioner (built from a typical coefficient,
    usually the ansatz) accelerates repeated solves with nearby u.
    """

    def __init__(self, space: EpsSpace, q: float, variant: str = "neumann_proca",
                 far_bc: str = "robin"):
        if variant not in PSI_VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if far_bc not in ("robin", "dirichlet", "neumann"):
            raise ValueError(f"unknown far-face condition {far_bc!r}")
        if q <= 0.0:
            raise ValueError("q must be positive")
        self.space = space
        self.grid = space.grid
        self.q = float(q)
        self.variant = variant
        self.far_bc = far_bc
        self._amg = None
        self._build_structure()

    # -- operator pieces -----------------------------------------------------
    def _build_structure(self):
        grid = self.grid
        n = grid.n
        K = self.space.K
        self._w = self.space.w_geom

        robin_diag = np.zeros(grid.shape)
        if self.far_bc == "robin":
            coords = grid.coords()
            w_all = grid.node_weights()
            r2 = np.sum(coords ** 2, axis=-1)
            for axis, side in grid.artificial_faces():
                mask = grid.face_mask(axis, side)
                nu_sign = -1.0 if side == 0 else 1.0
                beta = (n - 2.0) * nu_sign * coords[..., axis] / np.maximum(r2, 1e-30)
                edge_w = grid._axis_weights[axis][0 if side == 0 else -1]
                wface = w_all / edge_w
                robin_diag[mask] += (beta * wface
                                     * self.space.metric.sqrtg_nodes)[mask]
        self._robin_diag = robin_diag.ravel()

        dmask = np.zeros(grid.shape, dtype=bool)
        if self.far_bc == "dirichlet":
            for axis, side in grid.artificial_faces():
                dmask |= grid.face_mask(axis, side)
        if self.variant == "dirichlet":
            dmask |= grid.face_mask(n - 1, 0)
        self._dmask = dmask.ravel()
        self._keep = (~self._dmask).astype(float)

        if self._dmask.any():
            D = sp.diags(self._keep)
            self._K_bc = (D @ K @ D).tocsr()
        else:
            self._K_bc = K
        # eliminated rows keep a diagonal at the typical scale
        self._fix_diag = self._dmask * float(np.median(self._w))

    def _coeff(self, u: np.ndarray) -> np.ndarray:
        if self.variant == "neumann_proca":
            return 1.0 + self.q ** 2 * u ** 2
        return self.q ** 2 * u ** 2

    def operator(self, u: np.ndarray) -> sp.csr_matrix:
        diag = (self._w * self._coeff(u)).ravel() * self._keep \
            + self._robin_diag * self._keep + self._fix_diag
        return (self._K_bc + sp.diags(diag)).tocsr()

    def set_reference(self, u_ref: np.ndarray):
        """Build the AMG preconditioner on the operator at u_ref."""
        import pyamg
        ml = pyamg.smoothed_aggregation_solver(self.operator(u_ref),
                                               max_coarse=400)
        self._amg = ml.aspreconditioner(cycle="V")
        return self._amg

    def _solve(self, A, rhs, tol, x0=None, maxiter=600):
        b = rhs.ravel().copy()
        b[self._dmask] = 0.0
        if self._amg is None:
            import pyamg
            ml = pyamg.smoothed_aggregation_solver(A, max_coarse=400)
            M = ml.aspreconditioner(cycle="V")
        else:
            M = self._amg
        x, info = cg(A, b, x0=None if x0 is None else x0.ravel(),
                     rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            raise IterationLimit(f"psi solve failed (info={info})")
        return x.reshape(self.grid.shape)

    # -- public operations ----------------------------------------------------
    def psi(self, u: np.ndarray, tol: float = 1e-10, x0=None,
            bound_tol: float = 1e-8) -> np.ndarray:
        """Solve the variant's linear equation for psi(u).

        The returned field satisfies the box bound -bound_tol <= psi <=
        1/q + bound_tol nodally; a violation signals a discretization
        defect and raises.
        """
        u = np.asarray(u, dtype=float)
        rhs = self._w * self.q * u ** 2
        psi = self._solve(self.operator(u), rhs, tol, x0=x0)
        lo, hi = float(psi.min()), float(psi.max())
        if lo < -bound_tol or hi > 1.0 / self.q + bound_tol:
            raise BoundViolation(
                f"psi out of [0, 1/q]: min {lo:.3e}, max {hi:.3e}")
        return psi

    def derivative(self, u, h, psi_u=None, tol: float = 1e-10) -> np.ndarray:
        """Directional derivative V_u[h] of the map u -> psi(u)."""
        u = np.asarray(u, dtype=float)
        h = np.asarray(h, dtype=float)
        if psi_u is None:
            psi_u = self.psi(u, tol=tol)
        rhs = self._w * 2.0 * self.q * u * (1.0 - self.q * psi_u) * h
        return self._solve(self.operator(u), rhs, tol)

    def second(self, u, h, k, psi_u=None, v_h=None, v_k=None,
               tol: float = 1e-10) -> np.ndarray:
        """Second derivative T_u(h, k), symmetric in (h, k)."""
        u = np.asarray(u, dtype=float)
        h = np.asarray(h, dtype=float)
        k = np.asarray(k, dtype=float)
        if psi_u is None:
            psi_u = self.psi(u, tol=tol)
        if v_h is None:
            v_h = self.derivative(u, h, psi_u=psi_u, tol=tol)
        if v_k is None:
            v_k = self.derivative(u, k, psi_u=psi_u, tol=tol)
        q = self.q
        rhs = self._w * (-2.0 * q ** 2 * u * (k * v_h + h * v_k)
                         + 2.0 * q * (1.0 - q * psi_u) * h * k)
        return self._solve(self.operator(u), rhs, tol)

    def theta(self, u, psi_u=None, tol: float = 1e-10) -> float:
        """Theta(u) = 1/2 int (1 - q psi(u)) u^2 dmu_g."""
        u = np.asarray(u, dtype=float)
        if psi_u is None:
            psi_u = self.psi(u, tol=tol)
        return 0.5 * self.space.integral((1.0 - self.q * psi_u) * u * u)

    def theta_grad(self, u, h, psi_u=None, tol: float = 1e-10) -> float:
        """Theta'(u)[h] = int (1 - q psi(u))^2 u h dmu_g."""
        u = np.asarray(u, dtype=float)
        h = np.asarray(h, dtype=float)
        if psi_u is None:
            psi_u = self.psi(u, tol=tol)
        return self.space.integral((1.0 - self.q * psi_u) ** 2 * u * h)
