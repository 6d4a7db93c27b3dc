"""Unit-speed geodesics, parallel frames and tube (Fermi) charts.

A geodesic is integrated jointly with a parallel frame: the ODE state holds
the chart point, the velocity and the first n-1 frame columns (the last
column is the velocity itself), all advanced by one adaptive Runge-Kutta
integration and resampled onto a uniform arclength grid through the
integrator's dense interpolant.

Frame convention: columns F_1 .. F_n with F_n = velocity, so the directions
transverse to the ray sit in the leading (n-1) x (n-1) block of every
frame-expressed operator.  The Gram matrix g(F_j, F_k) is constant along the
path and is stored with it; the default initial frame is g-orthonormal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline

from . import manifold
from .errors import (DomainError, InjectivityError, InputError, SingularFrame,
                     StepError, ZeroVector)

GEO_ATOL = 1e-10        # integrator tolerances for all geodesic work
GEO_RTOL = 1e-10
UNIT_SPEED_TOL = 1e-8   # drift in |velocity|_g that marks a failed integration
FRAME_DET_FLOOR = 1e-12


def uniform_grid(r_max: float, dr: float) -> np.ndarray:
    """Uniform grid over [0, r_max] with step as close to dr as divisibility allows."""
    if r_max <= 0 or dr <= 0:
        raise InputError("r_max and dr must be positive")
    n_steps = max(1, int(round(r_max / dr)))
    return np.linspace(0.0, r_max, n_steps + 1)


@dataclass
class GeodesicPath:
    """A unit-speed geodesic with a parallel frame, sampled on r_grid."""
    metric: manifold.MetricField
    r_grid: np.ndarray            # (N,)
    points: np.ndarray            # (N, n)
    velocities: np.ndarray        # (N, n)
    frames: np.ndarray            # (N, n, n), columns F_1..F_n
    gram: np.ndarray              # (n, n), g(F_j, F_k), constant
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def r_max(self) -> float:
        return float(self.r_grid[-1])

    @property
    def dr(self) -> float:
        return float(self.r_grid[1] - self.r_grid[0])

    def gram_perp(self) -> np.ndarray:
        """Gram matrix of the transverse frame columns F_1..F_{n-1}."""
        return self.gram[:-1, :-1]

    def _spline(self, name: str, values: np.ndarray):
        if name not in self._splines:
            k = min(3, len(self.r_grid) - 1)
            flat = values.reshape(len(self.r_grid), -1)
            self._splines[name] = make_interp_spline(self.r_grid, flat, k=k)
        return self._splines[name]

    def _eval(self, name, values, shape, r):
        if r < self.r_grid[0] - 1e-9 or r > self.r_grid[-1] + 1e-9:
            raise InputError(f"r={r} outside path range [0, {self.r_max}]")
        r = min(max(r, self.r_grid[0]), self.r_grid[-1])
        return self._spline(name, values)(r).reshape(shape)

    def point(self, r):
        return self._eval("x", self.points, (self.n,), r)

    def velocity(self, r):
        return self._eval("v", self.velocities, (self.n,), r)

    def frame(self, r):
        return self._eval("F", self.frames, (self.n, self.n), r)


# ---------------------------------------------------------------------------
# frame construction and joint integration
# ---------------------------------------------------------------------------

def orthonormal_frame(m: manifold.MetricField, x, eta) -> np.ndarray:
    """g-orthonormal frame at x with the direction eta as the LAST column.

    Gram-Schmidt over the chart basis; the resulting Gram matrix is the
    identity, so transverse blocks need no raising or lowering downstream.
    """
    g, _ = manifold.eval_metric(m, x)
    eta = np.asarray(eta, dtype=float)
    ne = np.sqrt(max(eta @ g @ eta, 0.0))
    if ne < 1e-12:
        raise ZeroVector("frame direction has near-zero length")
    n = m.dim
    cols = [eta / ne]
    for i in range(n):
        if len(cols) == n:
            break
        w = np.zeros(n)
        w[i] = 1.0
        for c in cols:
            w = w - (c @ g @ w) * c
        nw = np.sqrt(max(w @ g @ w, 0.0))
        if nw > 1e-8:
            cols.append(w / nw)
    if len(cols) < n:
        raise SingularFrame("Gram-Schmidt failed to complete a basis")
    # direction last, transverse columns first
    return np.column_stack(cols[1:] + cols[:1])


def _exit_event(m: manifold.MetricField, n_rays: int = 1):
    n = m.dim

    def ev(_r, y):
        X = y.reshape(n_rays, -1)[:, :n]
        return min(m.boundary_margin(x) for x in X)

    ev.terminal = True
    ev.direction = -1.0
    return ev


def _joint_rhs(m: manifold.MetricField):
    n = m.dim

    def rhs(_r, y):
        x, v = y[:n], y[n:2 * n]
        gam = manifold.christoffel_batch(m, x[None, :])[0]
        out = np.empty_like(y)
        out[:n] = v
        out[n:2 * n] = -np.einsum("ijk,j,k->i", gam, v, v)
        if len(y) > 2 * n:
            cols = y[2 * n:].reshape(n - 1, n)
            out[2 * n:] = -np.einsum("ijk,j,ak->ai", gam, v, cols).ravel()
        return out

    return rhs


def shoot_geodesic(m: manifold.MetricField, x, eta, r_max: float, dr: float,
                   frame0: np.ndarray | None = None) -> GeodesicPath:
    """Integrate the unit-speed geodesic from (x, eta) with a parallel frame.

    Parameters
    ----------
    m : MetricField
    x : starting chart point
    eta : unit tangent at x (checked to 1e-10)
    r_max, dr : arclength range and grid step
    frame0 : optional initial frame, columns F_1..F_n with F_n = eta;
        default is the orthonormal frame from ``orthonormal_frame``.

    Raises
    ------
    DomainError if the ray exits the chart box before r_max,
    StepError if the integrator fails or unit speed drifts beyond 1e-8.
    """
    x = np.asarray(x, dtype=float)
    eta = np.asarray(eta, dtype=float)
    g, _ = manifold.eval_metric(m, x)
    speed = np.sqrt(max(eta @ g @ eta, 0.0))
    if abs(speed - 1.0) > 1e-10:
        raise InputError(f"direction must be unit length, |eta|_g = {speed:.3e}")
    if frame0 is None:
        frame0 = orthonormal_frame(m, x, eta)
    else:
        frame0 = np.asarray(frame0, dtype=float)
        if np.max(np.abs(frame0[:, -1] - eta)) > 1e-8:
            raise InputError("last frame column must equal the direction")
        if abs(np.linalg.det(frame0)) < FRAME_DET_FLOOR:
            raise SingularFrame("initial frame is singular")

    r_grid = uniform_grid(r_max, dr)
    n = m.dim
    y0 = np.concatenate([x, eta, frame0[:, :-1].T.ravel()])
    sol = solve_ivp(_joint_rhs(m), (0.0, r_grid[-1]), y0, method="RK45",
                    t_eval=r_grid, atol=GEO_ATOL, rtol=GEO_RTOL,
                    events=_exit_event(m), dense_output=False)
    if sol.status == 1:
        r_exit = float(sol.t_events[0][0])
        raise DomainError(f"geodesic exits chart at r = {r_exit:.6g} < {r_max}")
    if sol.status != 0:
        raise StepError(f"geodesic integration failed: {sol.message}")

    ys = sol.y.T                       # (N, state)
    points = ys[:, :n]
    velocities = ys[:, n:2 * n]
    trans = ys[:, 2 * n:].reshape(len(r_grid), n - 1, n)
    frames = np.empty((len(r_grid), n, n))
    frames[:, :, :-1] = np.transpose(trans, (0, 2, 1))
    frames[:, :, -1] = velocities

    gmats = manifold.metric_batch(m, points)
    speeds = np.sqrt(np.einsum("ki,kij,kj->k", velocities, gmats, velocities))
    if np.max(np.abs(speeds - 1.0)) > UNIT_SPEED_TOL:
        raise StepError(f"unit speed drifted to {np.max(np.abs(speeds - 1.0)):.3e}")

    gram = frame0.T @ g @ frame0
    return GeodesicPath(metric=m, r_grid=r_grid, points=points,
                        velocities=velocities, frames=frames, gram=gram)


def parallel_frame(m: manifold.MetricField, path: GeodesicPath,
                   frame0: np.ndarray) -> np.ndarray:
    """Transport an alternative initial frame along an existing path.

    Returns the (N, n, n) frame array; the path itself is not modified.
    Raises SingularFrame if det F(r) decays below 1e-12 * det F(0).
    """
    repl = shoot_geodesic(m, path.points[0], path.velocities[0],
                          path.r_max, path.dr, frame0=frame0)
    dets = np.abs(np.linalg.det(repl.frames))
    if dets.min() < FRAME_DET_FLOOR * dets[0]:
        raise SingularFrame("transported frame degenerated along the path")
    return repl.frames


def curvature_coeffs(m: manifold.MetricField, path: GeodesicPath) -> np.ndarray:
    """Transverse curvature coefficients along the path.

    At each grid node forms the directional curvature operator A = R(., v)v,
    expresses it in the parallel frame, and returns the leading
    (n-1) x (n-1) block as an (N, n-1, n-1) array.  The last row and column
    vanish identically because A annihilates the velocity.
    """
    N, n = path.points.shape
    det0 = abs(np.linalg.det(path.frames[0]))
    out = np.empty((N, n - 1, n - 1))
    for k in range(N):
        F = path.frames[k]
        if abs(np.linalg.det(F)) < FRAME_DET_FLOOR * det0:
            raise SingularFrame(f"frame singular at r = {path.r_grid[k]:.6g}")
        A = manifold.directional_curvature(m, path.points[k], path.velocities[k])
        out[k] = np.linalg.solve(F, A @ F)[:n - 1, :n - 1]
    return out


# ---------------------------------------------------------------------------
# batched endpoint shooting (no frames)
# ---------------------------------------------------------------------------

def shoot_points(m: manifold.MetricField, X0, V0, lengths):
    """Endpoints and end velocities of many geodesics integrated together.

    X0, V0 : (K, n) starts and initial velocities (any nonzero lengths)
    lengths : scalar or (K,) arclengths to advance each ray

    The rays are rescaled so all reach their target at parameter 1 and the
    whole fan advances as one ODE state, sharing adaptive steps.  Returns
    (end_points, end_velocities), the velocities rescaled back to the input
    parameterization.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    K, n = X0.shape
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (K,))
    gs = manifold.metric_batch(m, X0)
    speeds = np.sqrt(np.einsum("ki,kij,kj->k", V0, gs, V0))
    if np.any(speeds < 1e-12):
        raise ZeroVector("zero-length direction in fan")
    scale = lengths / speeds
    W0 = V0 * scale[:, None]

    def rhs(_t, y):
        Y = y.reshape(K, 2 * n)
        X, W = Y[:, :n], Y[:, n:]
        gam = manifold.christoffel_batch(m, X)
        acc = -np.einsum("bijk,bj,bk->bi", gam, W, W)
        return np.column_stack([W, acc]).ravel()

    y0 = np.column_stack([X0, W0]).ravel()
    sol = solve_ivp(rhs, (0.0, 1.0), y0, method="RK45",
                    atol=GEO_ATOL, rtol=GEO_RTOL,
                    events=_exit_event(m, n_rays=K))
    if sol.status == 1:
        raise DomainError("a ray in the fan exits the chart box")
    if sol.status != 0:
        raise StepError(f"fan integration failed: {sol.message}")
    Y = sol.y[:, -1].reshape(K, 2 * n)
    with np.errstate(divide="ignore", invalid="ignore"):
        Vend = np.where(scale[:, None] != 0.0, Y[:, n:] / scale[:, None], V0)
    return Y[:, :n], Vend


# ---------------------------------------------------------------------------
# Fermi (tube) chart around a geodesic
# ---------------------------------------------------------------------------

@dataclass
class FermiChart:
    """Tube coordinates (s, r) around a base geodesic.

    s is the (n-1)-vector of transverse frame coefficients, r the arclength
    along the base path.  The window (radius rho, r-interval) is the region
    where the map was checked to be injective by sampling.
    """
    base: GeodesicPath
    rho: float
    r_lo: float
    r_hi: float

    def contains(self, s, r) -> bool:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        return bool(np.linalg.norm(s) <= self.rho + 1e-12
                    and self.r_lo - 1e-12 <= r <= self.r_hi + 1e-12)


def fermi_map(chart: FermiChart, s, r):
    """Chart point of tube coordinates (s, r).

    Shoots a secondary geodesic from the base point gamma(r) along the
    transverse frame combination sum_k s^k F_k, for arclength equal to the
    g-length of that combination.  s = 0 returns the base point itself.
    """
    if not chart.contains(s, r):
        raise InjectivityError(f"(s={s}, r={r}) outside the checked tube window")
    path = chart.base
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x = path.point(r)
    w = path.frame(r)[:, :-1] @ s
    # measure with the metric at x: transport keeps the frame orthonormal
    # only up to integrator error, and the shooting gate is strict
    g, _ = manifold.eval_metric(path.metric, x)
    ell = np.sqrt(max(w @ g @ w, 0.0))
    if ell < 1e-14:
        return x
    eta = w / ell
    sec = shoot_geodesic(path.metric, x, eta, ell, max(ell / 8.0, 1e-3))
    return sec.points[-1]


def fermi_inverse(chart: FermiChart, target, guess=None):
    """Tube coordinates of a chart point, by damped Newton on the shooting map.

    Returns (s, r).  Raises InjectivityError when the iteration leaves the
    window or fails to converge.
    """
    path = chart.base
    n = path.n
    target = np.asarray(target, dtype=float)
    if guess is None:
        # nearest base node, then transverse frame coefficients of the offset
        k = int(np.argmin(np.linalg.norm(path.points - target, axis=1)))
        r0 = float(path.r_grid[k])
        s0 = np.linalg.solve(path.frames[k], target - path.points[k])[:n - 1]
    else:
        s0, r0 = np.asarray(guess[0], dtype=float), float(guess[1])
    z = np.concatenate([np.atleast_1d(s0), [r0]])
    z[-1] = np.clip(z[-1], chart.r_lo, chart.r_hi)
    if np.linalg.norm(z[:-1]) > chart.rho:
        z[:-1] *= 0.9 * chart.rho / np.linalg.norm(z[:-1])

    def residual(zz):
        return fermi_map(chart, zz[:-1], zz[-1]) - target

    fz = residual(z)
    h = 1e-6
    for _ in range(40):
        if np.linalg.norm(fz) < 1e-10:
            return z[:-1].copy(), float(z[-1])
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            zp, zm = z + e, z - e
            zp[-1] = min(zp[-1], chart.r_hi)
            zm[-1] = max(zm[-1], chart.r_lo)
            J[:, j] = (residual(zp) - residual(zm)) / (zp[j] - zm[j])
        try:
            step = np.linalg.solve(J, -fz)
        except np.linalg.LinAlgError as exc:
            raise InjectivityError(f"singular shooting Jacobian: {exc}") from exc
        lam = 1.0
        base_norm = np.linalg.norm(fz)
        while lam > 1e-4:
            zn = z + lam * step
            zn[-1] = np.clip(zn[-1], chart.r_lo, chart.r_hi)
            sn = np.linalg.norm(zn[:-1])
            if sn > chart.rho:
                zn[:-1] *= 0.95 * chart.rho / sn
            fn = residual(zn)
            if np.linalg.norm(fn) < base_norm:
                z, fz = zn, fn
                break
            lam *= 0.5
        else:
            raise InjectivityError("damped Newton stalled inverting the tube map")
    raise InjectivityError("tube-map inversion did not converge in 40 iterations")


def _tube_points(path: GeodesicPath, S, rs):
    """Batched tube map: chart points of rows (S[i], rs[i])."""
    K = len(rs)
    starts = np.stack([path.point(r) for r in rs])
    vels = np.stack([path.frame(rs[i])[:, :-1] @ S[i] for i in range(K)])
    gp = path.gram_perp()
    ells = np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", S, gp, S), 0.0))
    pts = starts.copy()
    nz = ells > 1e-14
    if np.any(nz):
        end, _ = shoot_points(path.metric, starts[nz], vels[nz], ells[nz])
        pts[nz] = end
    return pts


def build_fermi_chart(m: manifold.MetricField, path: GeodesicPath,
                      rho_max: float = 1.0, r_margin: float = 0.0,
                      n_samples: int = 120, seed: int = 0,
                      refine: int = 6) -> FermiChart:
    """Fermi chart with an empirically determined injectivity radius.

    The tube radius is found by bisection: a candidate rho passes when no
    two well-separated samples of the tube map land at nearly the same chart
    point and every sample stays in the domain.  The radius actually used is
    recorded on the returned chart.
    """
    r_lo, r_hi = r_margin, path.r_max - r_margin
    if r_hi <= r_lo:
        raise InputError("empty r-interval for the tube window")
    rng = np.random.default_rng(seed)
    nt = path.n - 1
    rs = rng.uniform(r_lo, r_hi, n_samples)
    dirs = rng.standard_normal((n_samples, nt))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = rng.uniform(0.3, 1.0, n_samples)

    def injective(rho: float) -> bool:
        try:
            pts = _tube_points(path, radii[:, None] * rho * dirs, rs)
        except DomainError:
            return False
        # parameter separation vs chart separation; folding drives the chart
        # distance of far-apart parameters toward zero
        for i in range(n_samples):
            d_par = np.abs(rs - rs[i]) + np.linalg.norm(
                radii[:, None] * rho * dirs - radii[i] * rho * dirs[i], axis=1)
            d_pt = np.linalg.norm(pts - pts[i], axis=1)
            far = d_par > 0.25 * rho
            if np.any(d_pt[far] < 0.02 * d_par[far]):
                return False
        return True

    lo, hi = 0.0, rho_max
    if injective(rho_max):
        lo = rho_max
    else:
        for _ in range(refine):
            mid = 0.5 * (lo + hi)
            if injective(mid):
                lo = mid
            else:
                hi = mid
    if lo == 0.0:
        raise InjectivityError("no injective tube radius found at this sampling")
    return FermiChart(base=path, rho=lo, r_lo=r_lo, r_hi=r_hi)
