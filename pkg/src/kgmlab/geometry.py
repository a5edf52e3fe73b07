"""Manifolds with boundary, boundary-adapted charts and curvature data.

Three catalog geometries:

* synthetic -- flat boundary R^(n-1) with a prescribed shape matrix; the
  chart metric is given directly by g^ij = Id + 2 h_ij y_n (+ optional
  quadratic term), so curvature is known exactly and geometry error is
  decoupled from PDE error.
* ball, spheroid -- solids bounded by quadric surfaces in R^3.  Charts use
  boundary normal coordinates built by geodesic shooting on the surface
  (ambient formulation, no pole singularities) plus the inward normal
  offset; the variational equations are integrated along a fan of rays and
  interpolated spectrally in the ray angle.

The shape-matrix sign convention is fixed operationally: the volume
element shrinks inward at rate (n-1) H, so the unit ball has H = +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import FocalRadiusExceeded, GeodesicShootingFailed
from .fields import Grid, MetricSamples

__all__ = [
    "SyntheticGeometry",
    "BallGeometry",
    "SpheroidGeometry",
    "BoundaryPoint",
    "FermiChart",
    "fermi_chart",
    "mean_curvature",
    "boundary_exp",
    "boundary_log",
    "transition_jacobian",
    "inverse_fermi",
]


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary in the geometry's global parametrization."""

    geometry: object
    params: tuple

    @property
    def ambient(self) -> np.ndarray:
        return self.geometry.embed(self.params)


class SyntheticGeometry:
    """Flat boundary with prescribed shape matrix h (optionally xi-scaled).

    h_scale, when given, maps boundary parameters to a positive scalar
    multiplying h; it makes the mean curvature vary over the boundary with
    exactly known critical points.
    """

    kind = "synthetic"

    def __init__(self, n: int, h: np.ndarray, quadratic: bool = False,
                 h_scale=None):
        if n not in (3, 4):
            raise ValueError("synthetic geometry supports n in {3, 4}")
        h = np.asarray(h, dtype=float)
        if h.shape != (n - 1, n - 1) or not np.allclose(h, h.T, atol=1e-14):
            raise ValueError("h must be a symmetric (n-1)x(n-1) matrix")
        self.n = n
        self.h0 = 0.5 * (h + h.T)
        self.quadratic = quadratic
        self.h_scale = h_scale

    def boundary_point(self, params) -> BoundaryPoint:
        params = tuple(float(v) for v in np.atleast_1d(params))
        if len(params) != self.n - 1:
            raise ValueError("wrong number of boundary parameters")
        return BoundaryPoint(self, params)

    def embed(self, params) -> np.ndarray:
        return np.array(params + (0.0,))

    def shape_matrix(self, xi: BoundaryPoint) -> np.ndarray:
        scale = 1.0 if self.h_scale is None else float(self.h_scale(np.asarray(xi.params)))
        return scale * self.h0

    def mean_curvature(self, xi: BoundaryPoint) -> float:
        return float(np.trace(self.shape_matrix(xi))) / (self.n - 1)

    def focal_radius(self) -> float:
        # positivity of Id + 2 h y_n only binds for negative curvatures;
        # xi-dependent scale functions are assumed bounded by 2
        ev = np.linalg.eigvalsh(self.h0)
        neg = max(0.0, -float(ev.min()))
        if self.h_scale is not None:
            neg *= 2.0
        return np.inf if neg == 0.0 else 0.45 / neg

    def exp(self, xi: BoundaryPoint, y) -> BoundaryPoint:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.boundary_point(tuple(np.asarray(xi.params) + y))

    def log(self, xi: BoundaryPoint, target: BoundaryPoint):
        return np.asarray(target.params) - np.asarray(xi.params)

    def boundary_distance(self, p1: BoundaryPoint, p2: BoundaryPoint) -> float:
        return float(np.linalg.norm(self.log(p1, p2)))


class _QuadricGeometry:
    """Common machinery for solids bounded by x^T A x = 1 in R^3."""

    n = 3

    def __init__(self, semi_axes):
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        if np.any(self.semi_axes <= 0.0):
            raise ValueError("semi-axes must be positive")
        self.A = np.diag(1.0 / self.semi_axes ** 2)

    # -- parametrization ---------------------------------------------------
    def embed(self, params) -> np.ndarray:
        theta, phi = params
        ax, ay, az = self.semi_axes
        return np.array([ax * math.sin(theta) * math.cos(phi),
                         ay * math.sin(theta) * math.sin(phi),
                         az * math.cos(theta)])

    def params_of(self, x) -> tuple:
        ax, ay, az = self.semi_axes
        rho = math.hypot(x[0] / ax, x[1] / ay)
        theta = math.atan2(rho, x[2] / az)
        phi = math.atan2(x[1] / ay, x[0] / ax)
        return (theta, phi)

    def boundary_point(self, params) -> BoundaryPoint:
        params = tuple(float(v) for v in np.atleast_1d(params))
        x = self.embed(params)
        defect = abs(x @ self.A @ x - 1.0)
        if defect > 1e-12:
            raise ValueError(f"point defect {defect:.2e} off the boundary")
        return BoundaryPoint(self, params)

    def surface_defect(self, x) -> float:
        return float(abs(x @ self.A @ x - 1.0))

    # -- normals and frames ------------------------------------------------
    def normal_out(self, x) -> np.ndarray:
        w = self.A @ x
        return w / np.linalg.norm(w)

    def dnormal_out(self, x) -> np.ndarray:
        """Jacobian of the outward unit normal at a surface point."""
        w = self.A @ x
        nw = np.linalg.norm(w)
        nu = w / nw
        return (np.eye(3) - np.outer(nu, nu)) @ self.A / nw

    def frame(self, xi: BoundaryPoint):
        """Deterministic orthonormal tangent frame at xi."""
        x = xi.ambient
        nu = self.normal_out(x)
        ref = np.array([0.0, 0.0, 1.0])
        t = np.cross(ref, nu)
        if np.linalg.norm(t) < 1e-8:
            t = np.cross(np.array([1.0, 0.0, 0.0]), nu)
        e1 = t / np.linalg.norm(t)
        e2 = np.cross(nu, e1)
        return e1, e2

    def shape_matrix(self, xi: BoundaryPoint) -> np.ndarray:
        x = xi.ambient
        e1, e2 = self.frame(xi)
        dn = self.dnormal_out(x)
        E = np.column_stack([e1, e2])
        return E.T @ dn @ E

    def mean_curvature(self, xi: BoundaryPoint) -> float:
        return float(np.trace(self.shape_matrix(xi))) / (self.n - 1)

    # -- geodesics on the boundary surface ----------------------------------
    def _geodesic_rhs(self, y):
        x, v = y[:3], y[3:6]
        w = self.A @ x
        m = w @ w
        s = v @ self.A @ v
        acc = -(s / m) * w
        return x, v, w, m, s, acc

    def _rhs_plain(self, t, y):
        x, v, w, m, s, acc = self._geodesic_rhs(y)
        return np.concatenate([v, acc])

    def _rhs_variational(self, t, y):
        x, v = y[:3], y[3:6]
        J, K = y[6:9], y[9:12]
        w = self.A @ x
        m = w @ w
        s = v @ self.A @ v
        acc = -(s / m) * w
        # d(acc)/dx [J] and d(acc)/dv [K]
        AJ = self.A @ J
        dx = -(s / m) * AJ + (2.0 * s / m ** 2) * (w @ AJ) * w
        dv = -(2.0 * (v @ self.A @ K) / m) * w
        return np.concatenate([v, acc, K, dx + dv])

    def exp(self, xi: BoundaryPoint, y, rtol=1e-12) -> BoundaryPoint:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        e1, e2 = self.frame(xi)
        v0 = y[0] * e1 + y[1] * e2
        speed = np.linalg.norm(v0)
        if speed < 1e-15:
            return xi
        y0 = np.concatenate([xi.ambient, v0])
        sol = solve_ivp(self._rhs_plain, (0.0, 1.0), y0, method="DOP853",
                        rtol=rtol, atol=1e-13)
        if not sol.success:
            raise GeodesicShootingFailed(sol.message)
        x = sol.y[:3, -1]
        # project tiny drift back onto the surface
        lam = self._foot_lambda(x)
        x = x / (1.0 + lam * np.diag(self.A))
        return self.boundary_point(self.params_of(x))

    def log(self, xi: BoundaryPoint, target: BoundaryPoint,
            tol=1e-11, maxiter=30) -> np.ndarray:
        """Invert the boundary exponential map by damped Newton."""
        xt = target.ambient
        e1, e2 = self.frame(xi)
        d = xt - xi.ambient
        y = np.array([d @ e1, d @ e2])
        if np.linalg.norm(y) < 1e-14:
            return np.zeros(2)
        delta = 1e-6 * max(np.linalg.norm(y), 1e-3)
        for _ in range(maxiter):
            cur = self.exp(xi, y).ambient
            res = cur - xt
            if np.linalg.norm(res) < tol:
                return y
            cols = []
            for k in range(2):
                dy = np.zeros(2)
                dy[k] = delta
                cols.append((self.exp(xi, y + dy).ambient
                             - self.exp(xi, y - dy).ambient) / (2 * delta))
            Jmat = np.column_stack(cols)
            step, *_ = np.linalg.lstsq(Jmat, res, rcond=None)
            y = y - step
        raise GeodesicShootingFailed("log map Newton did not converge")

    def boundary_distance(self, p1: BoundaryPoint, p2: BoundaryPoint) -> float:
        return float(np.linalg.norm(self.log(p1, p2)))

    # -- foot point / inverse Fermi -----------------------------------------
    def _foot_lambda(self, x) -> float:
        a = np.diag(self.A)

        def f(lam):
            s = x / (1.0 + lam * a)
            return s @ self.A @ s - 1.0

        from scipy.optimize import brentq
        lo = -0.999 / a.max()
        hi = 10.0 / a.min()
        flo, fhi = f(lo), f(hi)
        for _ in range(60):
            if flo > 0.0:
                break
            lo = 0.5 * (lo - 1.0 / a.max())
            flo = f(lo)
        if flo * fhi > 0.0:
            raise GeodesicShootingFailed("foot-point bracket failed")
        return brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16)

    def foot_point(self, x) -> tuple[np.ndarray, float]:
        """Closest boundary point and signed inward distance of x."""
        lam = self._foot_lambda(np.asarray(x, dtype=float))
        s = x / (1.0 + lam * np.diag(self.A))
        d = np.linalg.norm(x - s)
        inside = x @ self.A @ x < 1.0
        return s, (d if inside else -d)


class BallGeometry(_QuadricGeometry):
    kind = "ball"

    def __init__(self, radius: float = 1.0):
        super().__init__([radius, radius, radius])
        self.radius = float(radius)

    def focal_radius(self) -> float:
        return 0.9 * self.radius

    def curvature_critical_points(self):
        return []  # H is constant


class SpheroidGeometry(_QuadricGeometry):
    """Spheroid with semi-axes (ax, ax, az)."""

    kind = "spheroid"

    def __init__(self, ax: float = 1.0, az: float = 1.5):
        super().__init__([ax, ax, az])
        self.ax = float(ax)
        self.az = float(az)

    def focal_radius(self) -> float:
        kmax = max(self.az / self.ax ** 2, self.ax / self.az ** 2)
        return 0.95 * min(1.0 / kmax, math.pi / (2.0 * kmax))

    def poles(self):
        return [self.boundary_point((0.0, 0.0)),
                self.boundary_point((math.pi, 0.0))]

    def curvature_critical_points(self):
        return self.poles()


# ---------------------------------------------------------------------------
# charts
# ---------------------------------------------------------------------------

class FermiChart:
    """Boundary-adapted chart: y = (normal coords on dM, distance to dM).

    Guarantees g(0) = Id and g^{in} = delta_in exactly; the tangential
    metric block is quadratic in y_n with coefficients sampled from the
    boundary map and the normal field.
    """

    def __init__(self, geometry, xi: BoundaryPoint, R: float):
        self.geometry = geometry
        self.xi = xi
        self.R = float(R)
        self.n = geometry.n

    def mean_curvature(self) -> float:
        return self.geometry.mean_curvature(self.xi)

    def shape_matrix(self) -> np.ndarray:
        return self.geometry.shape_matrix(self.xi)

    # interface implemented by subclasses
    def metric_samples(self, grid: Grid) -> MetricSamples:
        raise NotImplementedError

    def metric_at(self, y) -> tuple:
        """(g, g_inv, sqrt_g) at chart points y of shape (..., n)."""
        raise NotImplementedError


class SyntheticChart(FermiChart):
    def __init__(self, geometry: SyntheticGeometry, xi, R):
        super().__init__(geometry, xi, R)
        self.h = geometry.shape_matrix(xi)

    def _ginv_tangential(self, yn):
        """g^ij tangential block at scalar/array normal heights."""
        yn = np.asarray(yn, dtype=float)
        d = self.n - 1
        eye = np.eye(d)
        out = (eye + 2.0 * np.multiply.outer(yn, self.h))
        if self.geometry.quadratic:
            out = out + 3.0 * np.multiply.outer(yn ** 2, self.h @ self.h)
        return out

    def metric_at(self, y):
        y = np.asarray(y, dtype=float)
        yn = y[..., -1]
        d = self.n - 1
        gt_inv = self._ginv_tangential(yn)
        gt = np.linalg.inv(gt_inv)
        det_inv = np.linalg.det(gt_inv)
        sqrtg = det_inv ** -0.5
        full_inv = np.zeros(y.shape[:-1] + (self.n, self.n))
        full = np.zeros_like(full_inv)
        full_inv[..., :d, :d] = gt_inv
        full_inv[..., d, d] = 1.0
        full[..., :d, :d] = gt
        full[..., d, d] = 1.0
        return full, full_inv, sqrtg

    def metric_samples(self, grid: Grid) -> MetricSamples:
        d = self.n - 1
        yn_cells = grid.cell_centers()[-1]
        gt_inv = self._ginv_tangential(yn_cells)      # (k, d, d)
        sqrtg_c = np.linalg.det(gt_inv) ** -0.5
        cdims = tuple(s - 1 for s in grid.shape)
        coeffs = {}
        tang_cdims = cdims[:-1]
        for i in range(d):
            for j in range(i, d):
                prof = sqrtg_c * gt_inv[:, i, j]
                if i != j and np.all(prof == 0.0):
                    continue
                arr = np.broadcast_to(prof, tang_cdims + prof.shape).copy()
                coeffs[(i, j)] = arr
        coeffs[(d, d)] = np.broadcast_to(
            sqrtg_c, tang_cdims + sqrtg_c.shape).copy()

        yn_nodes = grid.axes[-1]
        gt_inv_n = self._ginv_tangential(yn_nodes)
        sqrtg_prof = np.linalg.det(gt_inv_n) ** -0.5
        sqrtg_nodes = np.broadcast_to(
            sqrtg_prof, grid.shape[:-1] + sqrtg_prof.shape).copy()
        return MetricSamples(grid=grid, cell_coeffs=coeffs,
                             sqrtg_nodes=sqrtg_nodes)

    def map(self, y):
        y = np.asarray(y, dtype=float)
        base = np.asarray(self.xi.params)
        out = np.empty(y.shape)
        out[..., :-1] = base + y[..., :-1]
        out[..., -1] = y[..., -1]
        return out


class ShotFermiChart(FermiChart):
    """Chart on a quadric boundary built from a fan of surface geodesics.

    Each ray integrates the geodesic plus its angular variation; fields on
    the fan are interpolated spectrally in the ray angle and by cubic
    splines radially.  Beyond the fan radius (box corners, where every
    ansatz field vanishes) the radius is clamped.
    """

    def __init__(self, geometry, xi, R, n_rays: int = 96, n_radii: int = 129,
                 rtol: float = 1e-11):
        super().__init__(geometry, xi, R)
        self.e1, self.e2 = geometry.frame(xi)
        self.nu_in0 = -geometry.normal_out(xi.ambient)
        self._build_fan(n_rays, n_radii, rtol)

    def _build_fan(self, n_rays, n_radii, rtol):
        geom = self.geometry
        R = self.R
        s_grid = np.linspace(0.0, R, n_radii)
        psis = np.linspace(0.0, 2.0 * math.pi, n_rays, endpoint=False)
        X = np.empty((n_rays, n_radii, 3))
        T = np.empty_like(X)
        JP = np.empty_like(X)
        x0 = self.xi.ambient
        for k, psi in enumerate(psis):
            v0 = R * (math.cos(psi) * self.e1 + math.sin(psi) * self.e2)
            k0 = R * (-math.sin(psi) * self.e1 + math.cos(psi) * self.e2)
            y0 = np.concatenate([x0, v0, np.zeros(3), k0])
            sol = solve_ivp(geom._rhs_variational, (0.0, 1.0), y0,
                            method="DOP853", rtol=rtol, atol=1e-13,
                            t_eval=s_grid / R, dense_output=False)
            if not sol.success:
                raise GeodesicShootingFailed(sol.message)
            X[k] = sol.y[:3].T
            T[k] = sol.y[3:6].T / R
            JP[k] = sol.y[6:9].T
        self._s_grid = s_grid
        # spectral representation in the fan angle
        self._cX = CubicSpline(s_grid, np.fft.rfft(X, axis=0) / n_rays, axis=1)
        self._cT = CubicSpline(s_grid, np.fft.rfft(T, axis=0) / n_rays, axis=1)
        self._cJ = CubicSpline(s_grid, np.fft.rfft(JP, axis=0) / n_rays, axis=1)
        self._n_rays = n_rays

    def _fan_eval(self, spline, s, psi):
        """Evaluate a fan field at radii s and angles psi (same shape)."""
        c = spline(s)                       # (modes, N, 3) complex
        modes = c.shape[0]
        phase = np.exp(1j * np.outer(np.arange(modes), psi))  # (modes, N)
        vals = np.real(c[0]) + 2.0 * np.einsum(
            "mnc,mn->nc", c[1:], phase[1:]).real
        # correct the double-counted Nyquist mode for even ray counts
        if self._n_rays % 2 == 0:
            vals -= np.real(c[-1] * phase[-1][:, None])
        return vals

    def _tangential_data(self, ybar):
        """beta, d(beta)/dy_i and normal data at tangential offsets ybar."""
        ybar = np.asarray(ybar, dtype=float).reshape(-1, self.n - 1)
        s = np.hypot(ybar[:, 0], ybar[:, 1])
        s_eff = np.minimum(s, self.R * (1.0 - 1e-12))
        psi = np.arctan2(ybar[:, 1], ybar[:, 0])
        X = self._fan_eval(self._cX, s_eff, psi)
        Tt = self._fan_eval(self._cT, s_eff, psi)
        JP = self._fan_eval(self._cJ, s_eff, psi)
        small = s < 1e-9
        B = np.empty((ybar.shape[0], 3, 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            cu, su = ybar[:, 0] / s, ybar[:, 1] / s
        cu[small], su[small] = 1.0, 0.0
        # d beta/d y1 = T cos + J_psi * (-sin/s); d beta/d y2 = T sin + J_psi cos/s
        with np.errstate(invalid="ignore", divide="ignore"):
            jps = JP / s[:, None]
        B[:, :, 0] = Tt * cu[:, None] - jps * su[:, None]
        B[:, :, 1] = Tt * su[:, None] + jps * cu[:, None]
        B[small, :, 0] = self.e1
        B[small, :, 1] = self.e2
        X[small] = self.xi.ambient
        return X, B

    def _metric_coeff_blocks(self, ybar):
        """G0 + yn G1 + yn^2 G2 decomposition of the tangential block."""
        X, B = self._tangential_data(ybar)
        geom = self.geometry
        w = X @ geom.A.T
        nw = np.linalg.norm(w, axis=1, keepdims=True)
        nu = w / nw
        # d(nu_in)/dx applied to B columns
        AB = np.einsum("ij,njk->nik", geom.A, B)
        proj = AB - nu[:, :, None] * np.einsum("ni,nik->nk", nu, AB)[:, None, :]
        C = -proj / nw[:, :, None]
        G0 = np.einsum("nik,nil->nkl", B, B)
        G1 = np.einsum("nik,nil->nkl", B, C)
        G1 = G1 + np.swapaxes(G1, 1, 2)
        G2 = np.einsum("nik,nil->nkl", C, C)
        return G0, G1, G2

    @staticmethod
    def _invert_2x2(gt):
        det = gt[..., 0, 0] * gt[..., 1, 1] - gt[..., 0, 1] ** 2
        inv = np.empty_like(gt)
        inv[..., 0, 0] = gt[..., 1, 1] / det
        inv[..., 1, 1] = gt[..., 0, 0] / det
        inv[..., 0, 1] = -gt[..., 0, 1] / det
        inv[..., 1, 0] = inv[..., 0, 1]
        return inv, det

    def metric_at(self, y):
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1, self.n)
        G0, G1, G2 = self._metric_coeff_blocks(flat[:, :2])
        yn = flat[:, 2][:, None, None]
        gt = G0 + yn * G1 + yn ** 2 * G2
        ginv_t, det = self._invert_2x2(gt)
        g = np.zeros((flat.shape[0], 3, 3))
        ginv = np.zeros_like(g)
        g[:, :2, :2] = gt
        g[:, 2, 2] = 1.0
        ginv[:, :2, :2] = ginv_t
        ginv[:, 2, 2] = 1.0
        sqrtg = np.sqrt(det)
        shp = y.shape[:-1]
        return (g.reshape(shp + (3, 3)), ginv.reshape(shp + (3, 3)),
                sqrtg.reshape(shp))

    def metric_samples(self, grid: Grid) -> MetricSamples:
        d = self.n - 1
        # cell-centered coefficients
        tc = grid.cell_centers()
        Yc = np.stack(np.meshgrid(tc[0], tc[1], indexing="ij"), axis=-1)
        G0, G1, G2 = self._metric_coeff_blocks(Yc.reshape(-1, 2))
        yn_c = tc[2]
        cdims = tuple(s - 1 for s in grid.shape)
        coeffs = {key: np.empty(cdims) for key in
                  [(0, 0), (0, 1), (1, 1), (2, 2)]}
        for k, yn in enumerate(yn_c):
            gt = G0 + yn * G1 + yn ** 2 * G2
            ginv_t, det = self._invert_2x2(gt)
            sq = np.sqrt(det).reshape(cdims[:2])
            coeffs[(0, 0)][:, :, k] = sq * ginv_t[:, 0, 0].reshape(cdims[:2])
            coeffs[(0, 1)][:, :, k] = sq * ginv_t[:, 0, 1].reshape(cdims[:2])
            coeffs[(1, 1)][:, :, k] = sq * ginv_t[:, 1, 1].reshape(cdims[:2])
            coeffs[(2, 2)][:, :, k] = sq
        # nodal volume factor
        Yn = np.stack(np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij"),
                      axis=-1)
        G0n, G1n, G2n = self._metric_coeff_blocks(Yn.reshape(-1, 2))
        sqrtg_nodes = np.empty(grid.shape)
        for k, yn in enumerate(grid.axes[2]):
            gt = G0n + yn * G1n + yn ** 2 * G2n
            det = gt[:, 0, 0] * gt[:, 1, 1] - gt[:, 0, 1] ** 2
            sqrtg_nodes[:, :, k] = np.sqrt(det).reshape(grid.shape[:2])
        return MetricSamples(grid=grid, cell_coeffs=coeffs,
                             sqrtg_nodes=sqrtg_nodes)

    def boundary_map(self, ybar):
        """Ambient position of the boundary normal coordinates ybar."""
        X, _ = self._tangential_data(np.asarray(ybar, dtype=float))
        return X

    def map(self, y):
        """Ambient position of chart coordinates (ybar, y_n)."""
        y = np.asarray(y, dtype=float)
        flat = y.reshape(-1, self.n)
        X, _ = self._tangential_data(flat[:, :2])
        geom = self.geometry
        w = X @ geom.A.T
        nu_in = -w / np.linalg.norm(w, axis=1, keepdims=True)
        out = X + flat[:, 2][:, None] * nu_in
        return out.reshape(y.shape[:-1] + (3,))


def fermi_chart(geometry, xi: BoundaryPoint, R: float, **kw) -> FermiChart:
    """Build the boundary-adapted chart of radius R at xi."""
    bound = geometry.focal_radius()
    if R >= bound:
        raise FocalRadiusExceeded(
            f"chart radius {R} exceeds the safe bound {bound:.4g}")
    if isinstance(geometry, SyntheticGeometry):
        return SyntheticChart(geometry, xi, R)
    return ShotFermiChart(geometry, xi, R, **kw)


def mean_curvature(geometry, xi: BoundaryPoint) -> float:
    """H = trace(h) / (n-1) with the inward volume-decay sign convention."""
    return geometry.mean_curvature(xi)


def boundary_exp(geometry, xi: BoundaryPoint, y) -> BoundaryPoint:
    """Boundary geodesic from xi with initial velocity y, at time 1."""
    return geometry.exp(xi, y)


def boundary_log(geometry, xi: BoundaryPoint, target: BoundaryPoint):
    return geometry.log(xi, target)


def inverse_fermi(geometry, xi: BoundaryPoint, x) -> np.ndarray:
    """Chart coordinates (ybar, y_n) of an ambient point, chart based at xi."""
    if isinstance(geometry, SyntheticGeometry):
        x = np.asarray(x, dtype=float)
        base = np.asarray(xi.params)
        return np.concatenate([x[:-1] - base, x[-1:]])
    foot, dist = geometry.foot_point(np.asarray(x, dtype=float))
    ybar = geometry.log(xi, geometry.boundary_point(
        geometry.params_of(foot)))
    return np.concatenate([ybar, [dist]])


def transition_jacobian(geometry, xi0: BoundaryPoint,
                        delta: float = 1e-3) -> dict:
    """Finite-difference data for the chart transition maps at xi0.

    Returns the Jacobian of the boundary transition (expected -Id), the
    roundtrip defect of the same-chart transition, and the sensitivity of
    the normal coordinate to the base point (expected 0).
    """
    d = geometry.n - 1
    if isinstance(geometry, SyntheticGeometry):
        jac = -np.eye(d)
        return {"jacobian": jac, "same_chart_defect": 0.0,
                "normal_sensitivity": 0.0}

    jac = np.zeros((d, d))
    for j in range(d):
        dy = np.zeros(d)
        dy[j] = delta
        plus = geometry.log(geometry.exp(xi0, dy), xi0)
        minus = geometry.log(geometry.exp(xi0, -dy), xi0)
        jac[:, j] = (plus - minus) / (2.0 * delta)

    # same-chart roundtrip eta -> map -> inverse map
    rng = np.random.default_rng(7)
    defect = 0.0
    chart0 = fermi_chart(geometry, xi0, 0.9 * geometry.focal_radius())
    for _ in range(4):
        eta = rng.uniform(-0.2, 0.2, size=d) * geometry.focal_radius()
        eta_n = rng.uniform(0.0, 0.2) * geometry.focal_radius()
        target = chart0.map(np.concatenate([eta, [eta_n]]))
        back = inverse_fermi(geometry, xi0, target)
        defect = max(defect, float(np.max(np.abs(
            back - np.concatenate([eta, [eta_n]])))))

    # normal coordinate must not see the base point move
    eta = np.array([0.05, -0.04]) * geometry.focal_radius()
    eta_n = 0.1 * geometry.focal_radius()
    x_pt = chart0.map(np.concatenate([eta, [eta_n]]))
    sens = 0.0
    for j in range(d):
        dy = np.zeros(d)
        dy[j] = delta
        np_p = inverse_fermi(geometry, geometry.exp(xi0, dy), x_pt)[-1]
        np_m = inverse_fermi(geometry, geometry.exp(xi0, -dy), x_pt)[-1]
        sens = max(sens, abs(np_p - np_m) / (2.0 * delta))
    return {"jacobian": jac, "same_chart_defect": defect,
            "normal_sensitivity": sens}
