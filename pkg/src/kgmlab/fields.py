"""Discrete scalar fields on the truncated chart box.

The computational domain is the box [-R, R]^(n-1) x [0, R] around a
boundary point, replacing the half-ball of the continuum setting; the
smooth cutoff makes every ansatz field vanish before the artificial
faces.  Operators are assembled in weak form with multilinear (Q1)
elements: cell-centered sqrt(g) g^ij coefficients against exact reference
gradient integrals, plus trapezoidal (lumped) node weights for all
zeroth-order terms.  That keeps every bilinear form symmetric by
construction and Neumann faces natural.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .errors import (
    GridMismatch,
    GridTooLarge,
    IterationLimit,
    NonPositiveCoefficient,
)

__all__ = [
    "Grid",
    "Field",
    "MetricSamples",
    "EpsSpace",
    "EllipticOp",
    "assemble_stiffness",
    "assemble_op",
    "solve_linear",
]

_MAX_NODES_4D = 700_000


class Grid:
    """Tensor grid on [-Rt, Rt]^(n-1) x [0, Rn], uniform per axis.

    The normal axis is the last one and includes the y_n = 0 boundary
    face.  Spacing is rounded down so the extents are matched exactly.
    """

    def __init__(self, n: int, r_tangential: float, r_normal: float,
                 h_target: float):
        if n < 2:
            raise ValueError("need n >= 2")
        self.n = n
        k_t = max(2, int(np.ceil(r_tangential / h_target)))
        k_n = max(2, int(np.ceil(r_normal / h_target)))
        self.axes = []
        self.spacings = []
        for _ in range(n - 1):
            self.axes.append(np.linspace(-r_tangential, r_tangential, 2 * k_t + 1))
            self.spacings.append(r_tangential / k_t)
        self.axes.append(np.linspace(0.0, r_normal, k_n + 1))
        self.spacings.append(r_normal / k_n)
        self.shape = tuple(ax.size for ax in self.axes)
        self.size = int(np.prod(self.shape))
        self.r_tangential = r_tangential
        self.r_normal = r_normal
        if n >= 4 and self.size > _MAX_NODES_4D:
            raise GridTooLarge(
                f"{self.size} nodes exceeds the n>=4 cap {_MAX_NODES_4D}")

        # trapezoidal node weights per axis
        self._axis_weights = []
        for ax, h in zip(self.axes, self.spacings):
            w = np.full(ax.size, h)
            w[0] = w[-1] = h / 2.0
            self._axis_weights.append(w)

    def __eq__(self, other):
        return self is other

    def __hash__(self):
        return id(self)

    def node_weights(self) -> np.ndarray:
        """Tensor-product trapezoidal quadrature weights, node-shaped."""
        w = self._axis_weights[0]
        for aw in self._axis_weights[1:]:
            w = np.multiply.outer(w, aw)
        return w

    def meshgrid(self):
        return np.meshgrid(*self.axes, indexing="ij", sparse=True)

    def coords(self) -> np.ndarray:
        """Dense (shape + (n,)) array of node coordinates."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self):
        return [0.5 * (ax[:-1] + ax[1:]) for ax in self.axes]

    def cell_center_coords(self) -> np.ndarray:
        mesh = np.meshgrid(*self.cell_centers(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def face_mask(self, axis: int, side: int) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        idx = [slice(None)] * self.n
        idx[axis] = 0 if side == 0 else -1
        mask[tuple(idx)] = True
        return mask

    def artificial_faces(self):
        """(axis, side) pairs of truncation faces; y_n=0 is physical."""
        faces = []
        for d in range(self.n - 1):
            faces.append((d, 0))
            faces.append((d, 1))
        faces.append((self.n - 1, 1))
        return faces


@dataclass
class Field:
    """Nodal scalar field with a boundary-condition tag.

    The tag records which condition the field is meant to satisfy on the
    physical face ("neumann" or "dirichlet"); artificial faces are
    implied by the operator that produced the field.
    """

    grid: Grid
    values: np.ndarray
    bc: str = "neumann"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridMismatch(
                f"values shape {self.values.shape} != grid {self.grid.shape}")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.bc)

    def dump_binary(self, path):
        """Little-endian dump: magic, n, dims, spacings, row-major values."""
        with open(path, "wb") as fh:
            fh.write(b"KGMF")
            np.array([1, self.grid.n], dtype="<i8").tofile(fh)
            np.array(self.grid.shape, dtype="<i8").tofile(fh)
            np.array(self.grid.spacings, dtype="<f8").tofile(fh)
            self.values.astype("<f8").tofile(fh)

    def dump_csv_slice(self, path, axis: int, index: int):
        """CSV slice normal to `axis` at node `index` (coords + value)."""
        idx = [slice(None)] * self.grid.n
        idx[axis] = index
        sl = self.values[tuple(idx)]
        rest = [d for d in range(self.grid.n) if d != axis]
        mesh = np.meshgrid(*[self.grid.axes[d] for d in rest], indexing="ij")
        cols = [m.ravel() for m in mesh] + [sl.ravel()]
        header = ",".join([f"y{d + 1}" for d in rest] + ["value"])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def load_binary(path) -> tuple:
    """Inverse of Field.dump_binary; returns (dims, spacings, values)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != b"KGMF":
            raise ValueError("not a field dump")
        ver, n = np.fromfile(fh, dtype="<i8", count=2)
        dims = np.fromfile(fh, dtype="<i8", count=int(n))
        spac = np.fromfile(fh, dtype="<f8", count=int(n))
        vals = np.fromfile(fh, dtype="<f8").reshape(dims)
    return dims, spac, vals


@dataclass
class MetricSamples:
    """Metric data sampled on one grid.

    cell_coeffs maps (i, j) with i <= j to sqrt(g) g^ij at cell centers;
    absent keys are identically zero.  sqrtg_nodes weights the lumped
    zeroth-order terms and all plain integrals.
    """

    grid: Grid
    cell_coeffs: dict
    sqrtg_nodes: np.ndarray

    @classmethod
    def flat(cls, grid: Grid) -> "MetricSamples":
        cdims = tuple(s - 1 for s in grid.shape)
        coeffs = {(d, d): np.ones(cdims) for d in range(grid.n)}
        return cls(grid=grid, cell_coeffs=coeffs,
                   sqrtg_nodes=np.ones(grid.shape))


def _grad_pair_factor(a, b, i, j, h):
    """Exact integral of d_i phi_a d_j phi_b over one reference cell."""
    f = 1.0
    for d in range(len(h)):
        if d == i and d == j:
            f *= (1.0 if a[d] == b[d] else -1.0) / h[d]
        elif d == i:
            f *= 0.5 if a[d] == 1 else -0.5
        elif d == j:
            f *= 0.5 if b[d] == 1 else -0.5
        else:
            f *= h[d] * (1.0 / 3.0 if a[d] == b[d] else 1.0 / 6.0)
    return f


def assemble_stiffness(metric: MetricSamples) -> sp.csr_matrix:
    """CSR matrix of the form sum_ij int sqrt(g) g^ij d_i u d_j v.

    Fixed lexicographic assembly order keeps the matrix bitwise symmetric.
    """
    grid = metric.grid
    n = grid.n
    h = grid.spacings
    shape = grid.shape
    corners = list(itertools.product((0, 1), repeat=n))
    keys = sorted(metric.cell_coeffs.keys())

    acc = {}
    for a in corners:
        for b in corners:
            v_ab = None
            for (i, j) in keys:
                if i == j:
                    fac = _grad_pair_factor(a, b, i, j, h)
                else:
                    fac = (_grad_pair_factor(a, b, i, j, h)
                           + _grad_pair_factor(a, b, j, i, h))
                term = fac * metric.cell_coeffs[(i, j)]
                v_ab = term if v_ab is None else v_ab + term
            delta = tuple(bb - aa for aa, bb in zip(a, b))
            if delta not in acc:
                acc[delta] = np.zeros(shape)
            sl = tuple(slice(aa, aa + shape[d] - 1) for d, aa in enumerate(a))
            acc[delta][sl] += v_ab

    strides = np.array(
        [int(np.prod(shape[d + 1:], dtype=np.int64)) for d in range(n)],
        dtype=np.int64)
    lin = np.arange(grid.size, dtype=np.int64).reshape(shape)
    rows_list, cols_list, data_list = [], [], []
    for delta in sorted(acc.keys()):
        sl = tuple(slice(max(0, -dd), shape[d] - max(0, dd))
                   for d, dd in enumerate(delta))
        r = lin[sl].ravel()
        off = int(np.dot(delta, strides))
        rows_list.append(r)
        cols_list.append(r + off)
        data_list.append(acc[delta][sl].ravel())
    rows = np.concatenate(rows_list)
    cols = np.concatenate(cols_list)
    data = np.concatenate(data_list)
    A = sp.coo_matrix((data, (rows, cols)),
                      shape=(grid.size, grid.size)).tocsr()
    return A


@dataclass
class EllipticOp:
    """Assembled symmetric operator with its boundary configuration."""

    grid: Grid
    matrix: sp.csr_matrix
    lumped_weight: np.ndarray
    dirichlet_mask: np.ndarray | None = None
    _amg = None

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (self.matrix @ u.ravel()).reshape(self.grid.shape)

    def apply_strong(self, u: np.ndarray) -> np.ndarray:
        """Weak apply rescaled by the geometric lumped weight."""
        return self.apply(u) / self.lumped_weight

    def preconditioner(self) -> LinearOperator:
        if self._amg is None:
            import pyamg
            ml = pyamg.smoothed_aggregation_solver(
                self.matrix, max_coarse=400)
            self._amg = ml.aspreconditioner(cycle="V")
        return self._amg

    def solve(self, rhs: np.ndarray, tol: float = 1e-10,
              x0: np.ndarray | None = None, maxiter: int = 400,
              precond: LinearOperator | None = None) -> np.ndarray:
        b = rhs.ravel().copy()
        if self.dirichlet_mask is not None:
            b[self.dirichlet_mask.ravel()] = 0.0
        M = precond if precond is not None else self.preconditioner()
        x, info = cg(self.matrix, b, x0=None if x0 is None else x0.ravel(),
                     rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            raise IterationLimit(f"CG failed to converge (info={info})")
        return x.reshape(self.grid.shape)


def _eliminate_dirichlet(A: sp.csr_matrix, mask: np.ndarray) -> sp.csr_matrix:
    """Zero rows/columns of masked nodes, keep original diagonal there."""
    keep = (~mask.ravel()).astype(float)
    D = sp.diags(keep)
    diag = A.diagonal()
    fix = sp.diags(diag * mask.ravel().astype(float))
    return (D @ A @ D + fix).tocsr()


def assemble_op(metric: MetricSamples, eps: float, coeff: np.ndarray,
                second_order_factor: float | None = None,
                dirichlet_faces: tuple = (),
                robin: dict | None = None) -> EllipticOp:
    """Operator  -c2 div(sqrt(g) g^ij grad .) + coeff  in weak form.

    c2 defaults to eps^2 (the singularly perturbed operator); pass
    second_order_factor=1.0 for the electrostatic solves.  coeff is a
    nodal field, required nonnegative.  dirichlet_faces lists (axis, side)
    pairs to eliminate; robin maps (axis, side) to a nodal coefficient
    array beta adding the face term int beta u v dS.
    """
    grid = metric.grid
    coeff = np.asarray(coeff, dtype=float)
    if coeff.shape == ():
        coeff = np.full(grid.shape, float(coeff))
    if np.any(coeff < 0.0):
        raise NonPositiveCoefficient("zeroth-order coefficient must be >= 0")
    c2 = eps ** 2 if second_order_factor is None else second_order_factor
    K = assemble_stiffness(metric)
    w_geom = grid.node_weights() * metric.sqrtg_nodes
    A = (c2 * K + sp.diags((w_geom * coeff).ravel())).tocsr()

    if robin:
        rob = np.zeros(grid.shape)
        w_all = grid.node_weights()
        for (axis, side), beta in robin.items():
            mask = grid.face_mask(axis, side)
            # face quadrature weight: drop this axis' trapezoid factor (h/2)
            edge_w = grid._axis_weights[axis][0 if side == 0 else -1]
            wface = w_all / edge_w
            rob[mask] += (beta * wface * metric.sqrtg_nodes)[mask]
        A = (A + sp.diags(rob.ravel())).tocsr()

    dmask = None
    if dirichlet_faces:
        dmask = np.zeros(grid.shape, dtype=bool)
        for axis, side in dirichlet_faces:
            dmask |= grid.face_mask(axis, side)
        A = _eliminate_dirichlet(A, dmask)

    return EllipticOp(grid=grid, matrix=A, lumped_weight=w_geom,
                      dirichlet_mask=dmask)


def solve_linear(op: EllipticOp, rhs: np.ndarray, tol: float = 1e-10,
                 **kw) -> np.ndarray:
    return op.solve(rhs, tol=tol, **kw)


class EpsSpace:
    """Cached weak forms of one (grid, metric, eps, msq) combination.

    Provides the rescaled inner product and norms, the physical H^1 norm,
    and the embedding adjoint (one positive-definite solve).
    """

    def __init__(self, metric: MetricSamples, eps: float, msq: float):
        if msq <= 0.0:
            raise NonPositiveCoefficient("msq must be positive")
        self.metric = metric
        self.grid = metric.grid
        self.eps = float(eps)
        self.msq = float(msq)
        self.K = assemble_stiffness(metric)
        self.w_geom = self.grid.node_weights() * metric.sqrtg_nodes
        self.A_eps = (eps ** 2 * self.K
                      + sp.diags((msq * self.w_geom).ravel())).tocsr()
        self.op = EllipticOp(grid=self.grid, matrix=self.A_eps,
                             lumped_weight=self.w_geom)
        self._eps_n = eps ** self.grid.n

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != self.grid.shape:
            raise GridMismatch("field shape does not match the space grid")
        return u

    def inner(self, u, v) -> float:
        """<u, v>_eps with the eps^-n volume normalization."""
        u, v = self._check(u), self._check(v)
        return float(u.ravel() @ (self.A_eps @ v.ravel())) / self._eps_n

    def norm(self, u) -> float:
        return np.sqrt(max(self.inner(u, u), 0.0))

    def integral(self, u) -> float:
        """Plain metric integral int u dmu_g (no eps scaling)."""
        u = self._check(u)
        return float(np.sum(self.w_geom * u))

    def lp_norm(self, u, t: float) -> float:
        """| u |_{t,eps} = (eps^-n int |u|^t dmu_g)^(1/t)."""
        if t < 1.0:
            raise ValueError("need t >= 1")
        u = self._check(u)
        return float((np.sum(self.w_geom * np.abs(u) ** t)
                      / self._eps_n) ** (1.0 / t))

    def h1_norm_sq(self, u) -> float:
        """Physical H^1_g norm squared (unit mass coefficient)."""
        u = self._check(u)
        ur = u.ravel()
        return float(ur @ (self.K @ ur) + np.sum(self.w_geom * u * u))

    def grad_norm_sq(self, u) -> float:
        u = self._check(u)
        ur = u.ravel()
        return float(ur @ (self.K @ ur))

    def istar(self, v, tol: float = 1e-10, x0=None) -> np.ndarray:
        """Adjoint of the embedding: solve <u, phi>_eps = eps^-n int v phi."""
        v = self._check(v)
        rhs = self.w_geom * v
        return self.op.solve(rhs, tol=tol, x0=x0)
