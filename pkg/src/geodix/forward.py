"""Forward data: Jacobi propagation, wavefront shape operators, datasets.

All shape operators are produced from the linear matrix Jacobi equation

    d2j/dr2 + rc(r) j = 0,        rc = transverse curvature coefficients,

never from the Riccati equation, because Jacobi solutions stay regular
through caustics while S(r,t) = -(dj/dr) j^-1 has poles there.  The Riccati
march exists only as an independent cross-check route.

One pair of fundamental solutions per geodesic serves every source position:
with P(0) = I, dP(0) = 0, Q(0) = 0, dQ(0) = I, the point-source solution
centered at t is a constant right combination of P and Q, and the shape
operator observed at the surface is S(0, t) = Q(t)^-1 P(t).
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import make_interp_spline

from . import geodesics, manifold
from .errors import (BlowUp, ConjugatePoint, DomainError, EmptySurface,
                     GridMismatch, InputError, StepError)

DET_EPS = 1e-8          # conjugate-point threshold on |det j| / (t-r)^(n-1)
FUND_RTOL = 1e-12       # fundamental-solution integration tolerances
FUND_ATOL = 1e-12
BLOWUP_NORM = 1e8       # Riccati march abort threshold


# ---------------------------------------------------------------------------
# fundamental Jacobi solutions along one geodesic
# ---------------------------------------------------------------------------

@dataclass
class FundamentalJacobi:
    """Fundamental solution pair of the matrix Jacobi equation on a path.

    P(0) = I, dP(0) = 0 and Q(0) = 0, dQ(0) = I, sampled on the path grid
    and interpolated by cubic splines in between.
    """
    path: geodesics.GeodesicPath
    r_grid: np.ndarray
    P: np.ndarray           # (N, m, m)
    dP: np.ndarray
    Q: np.ndarray
    dQ: np.ndarray
    _splines: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def m(self) -> int:
        return self.P.shape[1]

    def _eval(self, name: str, values: np.ndarray, r):
        if name not in self._splines:
            flat = values.reshape(len(self.r_grid), -1)
            k = min(3, len(self.r_grid) - 1)
            self._splines[name] = make_interp_spline(self.r_grid, flat, k=k)
        r = np.clip(r, self.r_grid[0], self.r_grid[-1])
        return self._splines[name](r).reshape(np.shape(r) + (self.m, self.m))

    def eval_P(self, r):
        return self._eval("P", self.P, r)

    def eval_dP(self, r):
        return self._eval("dP", self.dP, r)

    def eval_Q(self, r):
        return self._eval("Q", self.Q, r)

    def eval_dQ(self, r):
        return self._eval("dQ", self.dQ, r)


def curvature_spline(m: manifold.MetricField, path: geodesics.GeodesicPath):
    """Cubic spline of the transverse curvature coefficients along the path."""
    rc = geodesics.curvature_coeffs(m, path)
    k = min(3, len(path.r_grid) - 1)
    return make_interp_spline(path.r_grid, rc.reshape(len(path.r_grid), -1), k=k)


def fundamental_jacobi(m: manifold.MetricField, path: geodesics.GeodesicPath,
                       rc_spline=None) -> FundamentalJacobi:
    """Integrate the fundamental Jacobi pair along the whole path."""
    if rc_spline is None:
        rc_spline = curvature_spline(m, path)
    mm = path.n - 1

    def rhs(r, y):
        rc = rc_spline(r).reshape(mm, mm)
        X = y.reshape(2, 2 * mm * mm)
        out = np.empty_like(X)
        out[0] = X[1]
        blocks = X[0].reshape(2, mm, mm)
        out[1] = -np.stack([rc @ blocks[0], rc @ blocks[1]]).reshape(-1)
        return out.ravel()

    y0 = np.zeros((2, 2, mm, mm))
    y0[0, 0] = np.eye(mm)     # P
    y0[1, 1] = np.eye(mm)     # dQ
    sol = solve_ivp(rhs, (path.r_grid[0], path.r_grid[-1]), y0.ravel(),
                    method="DOP853", t_eval=path.r_grid,
                    rtol=FUND_RTOL, atol=FUND_ATOL)
    if sol.status != 0:
        raise StepError(f"fundamental Jacobi integration failed: {sol.message}")
    ys = sol.y.T.reshape(len(path.r_grid), 2, 2, mm, mm)
    return FundamentalJacobi(path=path, r_grid=path.r_grid.copy(),
                             P=ys[:, 0, 0], Q=ys[:, 0, 1],
                             dP=ys[:, 1, 0], dQ=ys[:, 1, 1])


# ---------------------------------------------------------------------------
# point-source Jacobi matrices and shape operators
# ---------------------------------------------------------------------------

@dataclass
class JacobiMatrix:
    """Point-source Jacobi solution j(r) with j(t_center)=0, dj(t_center)=-I."""
    path: geodesics.GeodesicPath
    t_center: float
    fund: FundamentalJacobi
    C: np.ndarray           # j(r) = P(r) C + Q(r) D
    D: np.ndarray

    def j(self, r):
        return self.fund.eval_P(r) @ self.C + self.fund.eval_Q(r) @ self.D

    def dj(self, r):
        return self.fund.eval_dP(r) @ self.C + self.fund.eval_dQ(r) @ self.D

    def grid_j(self):
        return np.einsum("kij,jl->kil", self.fund.P, self.C) + \
            np.einsum("kij,jl->kil", self.fund.Q, self.D)

    def grid_dj(self):
        return np.einsum("kij,jl->kil", self.fund.dP, self.C) + \
            np.einsum("kij,jl->kil", self.fund.dQ, self.D)


@dataclass
class ShapeData:
    """Shape operator of the t-sphere wavefront observed at radius r."""
    r: float
    t: float
    S: np.ndarray
    K: np.ndarray | None    # S^-1 where S is invertible, else None


def point_source_jacobi(m: manifold.MetricField, path: geodesics.GeodesicPath,
                        t_center: float,
                        fund: FundamentalJacobi | None = None) -> JacobiMatrix:
    """Jacobi matrix of the point source sitting at arclength t_center.

    Defined on the whole path; the combination coefficients come from one
    well-posed linear solve, so nothing blows up at conjugate points.
    """
    if not (path.r_grid[0] - 1e-12 <= t_center <= path.r_grid[-1] + 1e-12):
        raise InputError(f"t_center={t_center} outside path range")
    if fund is None:
        fund = fundamental_jacobi(m, path)
    mm = fund.m
    phi = np.block([[fund.eval_P(t_center), fund.eval_Q(t_center)],
                    [fund.eval_dP(t_center), fund.eval_dQ(t_center)]])
    rhs = np.vstack([np.zeros((mm, mm)), -np.eye(mm)])
    CD = np.linalg.solve(phi, rhs)
    return JacobiMatrix(path=path, t_center=float(t_center), fund=fund,
                        C=CD[:mm], D=CD[mm:])


def shape_from_jacobi(jm: JacobiMatrix, r) -> ShapeData:
    """S(r, t_center) = -(dj/dr) j^-1 in the parallel frame of the path.

    Raises ConjugatePoint when |det j(r)| < 1e-8 * |t_center - r|^(n-1),
    i.e. when r is conjugate to the source along the geodesic.
    """
    j, dj = jm.j(r), jm.dj(r)
    mm = j.shape[0]
    gap = abs(jm.t_center - r)
    if abs(np.linalg.det(j)) < DET_EPS * max(gap, 1e-300) ** mm:
        raise ConjugatePoint(
            f"r={r:.6g} conjugate to source t={jm.t_center:.6g}")
    S = -dj @ np.linalg.inv(j)
    detS = np.linalg.det(S)
    K = np.linalg.inv(S) if abs(detS) > 1e-300 else None
    return ShapeData(r=float(r), t=jm.t_center, S=S, K=K)


def conjugate_points(jm: JacobiMatrix) -> list[float]:
    """Roots of det j(r) on the path, bisected to dr/10; excludes the source."""
    rg = jm.fund.r_grid
    dets = np.linalg.det(jm.grid_j())

    def det_at(r):
        return float(np.linalg.det(jm.j(r)))

    dr = rg[1] - rg[0]
    roots = []
    for k in range(len(rg) - 1):
        a, b = rg[k], rg[k + 1]
        fa, fb = dets[k], dets[k + 1]
        if a <= jm.t_center <= b or fa * fb > 0.0 or fa == 0.0 and fb == 0.0:
            continue
        while b - a > dr / 10.0:
            mid = 0.5 * (a + b)
            fm = det_at(mid)
            if fa * fm <= 0.0:
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        root = 0.5 * (a + b)
        if abs(root - jm.t_center) > dr:
            # a zero sitting on a grid node shows up from both sides
            if not roots or abs(root - roots[-1]) > dr / 2.0:
                roots.append(float(root))
    return roots


def riccati_march(m: manifold.MetricField, path: geodesics.GeodesicPath,
                  S_init, r0: float, r1: float, t_center: float = np.nan,
                  rc_spline=None) -> list[ShapeData]:
    """March dS/dr = S S + rc(r) from S(r0) to r1, in either direction.

    Returns ShapeData at every path grid node between r0 and r1 (endpoints
    included), ordered in march direction.  Cross-check route only; raises
    BlowUp past norm 1e8.
    """
    if r1 == r0:
        raise InputError("need r1 != r0")
    if rc_spline is None:
        rc_spline = curvature_spline(m, path)
    mm = path.n - 1

    def rhs(r, y):
        S = y.reshape(mm, mm)
        return (S @ S + rc_spline(r).reshape(mm, mm)).ravel()

    def blow(r, y):
        return np.max(np.abs(y)) - BLOWUP_NORM

    blow.terminal = True
    lo, hi = min(r0, r1), max(r0, r1)
    interior = path.r_grid[(path.r_grid > lo + 1e-12) & (path.r_grid < hi - 1e-12)]
    if r1 < r0:
        interior = interior[::-1]
    t_eval = np.concatenate([[r0], interior, [r1]])
    sol = solve_ivp(rhs, (r0, r1), np.asarray(S_init, dtype=float).ravel(),
                    method="DOP853", t_eval=t_eval, rtol=1e-10, atol=1e-10,
                    events=blow)
    if sol.status == 1:
        raise BlowUp(f"shape operator exceeded {BLOWUP_NORM:.0e} "
                     f"at r = {float(sol.t_events[0][0]):.6g}")
    if sol.status != 0:
        raise StepError(f"Riccati march failed: {sol.message}")
    out = []
    for rr, yy in zip(sol.t, sol.y.T):
        S = yy.reshape(mm, mm)
        detS = np.linalg.det(S)
        K = np.linalg.inv(S) if abs(detS) > 1e-300 else None
        out.append(ShapeData(r=float(rr), t=float(t_center), S=S, K=K))
    return out


# ---------------------------------------------------------------------------
# the wavefront dataset consumed by the inversion
# ---------------------------------------------------------------------------

@dataclass
class Sigma0Spec:
    """A spherical reference surface: sphere of radius t0 about a center.

    The surface is swept by rotating the base direction inside an
    orthonormal frame at the center; xhat rows are the rotation parameters
    (one angle for n=2, two for n=3).
    """
    center: np.ndarray
    base_direction: np.ndarray      # need not be unit; normalized internally
    t0: float
    xhat: np.ndarray                # (K, n-1) rotation parameters

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.base_direction = np.asarray(self.base_direction, dtype=float)
        self.xhat = np.atleast_2d(np.asarray(self.xhat, dtype=float))


def fan_directions(m: manifold.MetricField, spec: Sigma0Spec):
    """Unit directions eta(xhat) at the center, plus their xhat-derivatives.

    Returns (etas (K, n), deta (K, n-1, n)): deta[k, a] is the tangent
    vector d eta / d xhat_a, always g-orthogonal to eta(xhat_k).
    """
    E = geodesics.orthonormal_frame(m, spec.center,
                                    manifold.unit_vector(m, spec.center,
                                                         spec.base_direction))
    base, e1 = E[:, -1], E[:, 0]
    K = spec.xhat.shape[0]
    n = m.dim
    etas = np.empty((K, n))
    deta = np.empty((K, n - 1, n))
    if n == 2:
        a = spec.xhat[:, 0]
        etas[:] = np.cos(a)[:, None] * base + np.sin(a)[:, None] * e1
        deta[:, 0] = -np.sin(a)[:, None] * base + np.cos(a)[:, None] * e1
    else:
        e2 = E[:, 1]
        a, b = spec.xhat[:, 0], spec.xhat[:, 1]
        ca, sa = np.cos(a)[:, None], np.sin(a)[:, None]
        cb, sb = np.cos(b)[:, None], np.sin(b)[:, None]
        etas[:] = cb * (ca * base + sa * e1) + sb * e2
        deta[:, 0] = cb * (-sa * base + ca * e1)
        deta[:, 1] = -sb * (ca * base + sa * e1) + cb * e2
    return etas, deta


@dataclass
class WavefrontDataset:
    """Shape operators S(xhat, 0, t) of single-source wavefronts on Sigma0.

    mask[k, i] is True where the sample is defined (t_grid[i] not conjugate
    to the source along the ray of xhat k); masked samples hold NaN.
    Frames are recorded per xhat: columns F_1..F_{n-1} span the tangent of
    Sigma0 (coordinate basis of the xhat parametrization), F_n is the inward
    unit normal, and gram stores their constant inner products.
    """
    dim: int
    t0: float
    t_grid: np.ndarray              # (T,)
    xhat: np.ndarray                # (K, n-1)
    points: np.ndarray              # (K, n) surface points
    normals: np.ndarray             # (K, n) outward unit normals
    frames: np.ndarray              # (K, n, n)
    gram: np.ndarray                # (K, n, n)
    samples: np.ndarray             # (K, T, n-1, n-1)
    mask: np.ndarray                # (K, T) bool, True = valid
    mask_eps: float = DET_EPS
    noise_sigma: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if len(self.t_grid) > 1:
            steps = np.diff(self.t_grid)
            if steps.min() <= 0 or np.max(np.abs(steps - steps[0])) > 1e-12:
                raise GridMismatch("t_grid must be uniform and increasing")

    @property
    def delta_t(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def gram_perp(self, k: int) -> np.ndarray:
        return self.gram[k][:-1, :-1]


def _surface_entry(m, spec, t_grid, k, dr, mask_eps):
    """Everything the dataset records for one xhat: geometry plus samples."""
    etas, deta = fan_directions(m, spec)
    eta = etas[k]
    n = m.dim
    # center ray out to the surface point, carrying its own orthonormal frame
    center_path = geodesics.shoot_geodesic(m, spec.center, eta, spec.t0, dr)
    z = center_path.points[-1]
    nu = center_path.velocities[-1]
    # tangent basis of Sigma0 at z: Jacobi fields through the center with
    # initial rates d eta / d xhat, evaluated at t0 in the center-ray frame
    fundc = fundamental_jacobi(m, center_path)
    F0c = center_path.frames[0]
    w = np.linalg.solve(F0c, deta[k].T)[:n - 1, :]     # (m, n-1) frame comps
    tangents = center_path.frames[-1][:, :n - 1] @ (fundc.Q[-1] @ w)
    frame = np.empty((n, n))
    frame[:, :n - 1] = tangents
    frame[:, -1] = -nu                                  # inward ray direction
    gz = m.metric(z)
    gram = frame.T @ gz @ frame

    # inward data ray, in the surface frame, and its fundamental solutions
    ray = geodesics.shoot_geodesic(m, z, -nu, float(t_grid[-1]), dr, frame0=frame)
    fund = fundamental_jacobi(m, ray)
    Pt = fund.eval_P(t_grid)
    Qt = fund.eval_Q(t_grid)
    detQ = np.linalg.det(Qt)
    valid = np.abs(detQ) >= mask_eps * np.asarray(t_grid) ** (n - 1)
    samples = np.full((len(t_grid), n - 1, n - 1), np.nan)
    if np.any(valid):
        samples[valid] = np.linalg.solve(Qt[valid], Pt[valid])
    return z, nu, frame, gram, samples, valid


def forward_dataset(m: manifold.MetricField, spec: Sigma0Spec, t_grid,
                    dr: float = 0.005, mask_eps: float = DET_EPS,
                    noise_sigma: float = 0.0, seed: int = 0,
                    jobs: int = 1) -> WavefrontDataset:
    """Generate the wavefront dataset for a spherical reference surface.

    For each xhat the source center is reached by shooting the center ray,
    the surface tangent frame comes from Jacobi fields of the center fan
    (exact to integrator tolerance, no finite differences), and the samples
    are S(0, t) = Q(t)^-1 P(t) along the inward ray.  Optional additive
    Gaussian noise of scale noise_sigma perturbs every valid sample entry.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2 or t_grid[0] <= 0:
        raise InputError("t_grid must be 1-d with positive times")
    K, n = spec.xhat.shape[0], m.dim
    results = [None] * K
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_surface_entry, m, spec, t_grid, k, dr, mask_eps)
                    for k in range(K)]
            results = [f.result() for f in futs]
    else:
        for k in range(K):
            results[k] = _surface_entry(m, spec, t_grid, k, dr, mask_eps)

    points = np.stack([r[0] for r in results])
    normals = np.stack([r[1] for r in results])
    frames = np.stack([r[2] for r in results])
    gram = np.stack([r[3] for r in results])
    samples = np.stack([r[4] for r in results])
    mask = np.stack([r[5] for r in results])
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, noise_sigma, samples.shape)
        samples = np.where(mask[:, :, None, None], samples + noise, samples)
    return WavefrontDataset(dim=n, t0=float(spec.t0), t_grid=t_grid,
                            xhat=spec.xhat.copy(), points=points,
                            normals=normals, frames=frames, gram=gram,
                            samples=samples, mask=mask, mask_eps=mask_eps,
                            noise_sigma=noise_sigma,
                            meta={"center": spec.center.tolist(),
                                  "base_direction": spec.base_direction.tolist(),
                                  "metric": manifold.to_config(m)})


# ---------------------------------------------------------------------------
# dataset files: JSON envelope + CSV sample payload, byte-exact round-trip
# ---------------------------------------------------------------------------
# Every float is written through repr(), the shortest exact decimal form, so
# load followed by save reproduces the files byte for byte.

def _fmt(v) -> str:
    return repr(float(v))


def _nested(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def save_dataset(ds: WavefrontDataset, stem) -> tuple[str, str]:
    """Write <stem>.json (geometry) and <stem>.csv (samples); returns paths."""
    stem = os.fspath(stem)
    if stem.endswith(".json"):
        stem = stem[:-5]
    json_path, csv_path = stem + ".json", stem + ".csv"
    K, T = ds.samples.shape[:2]
    mm = ds.dim - 1
    env = {
        "format": "wavefront-dataset-v1",
        "dim": ds.dim,
        "t0": float(ds.t0),
        "t_grid": _nested(ds.t_grid),
        "xhat": _nested(ds.xhat),
        "points": _nested(ds.points),
        "normals": _nested(ds.normals),
        "frames": _nested(ds.frames),
        "gram": _nested(ds.gram),
        "mask_eps": float(ds.mask_eps),
        "noise_sigma": float(ds.noise_sigma),
        "meta": ds.meta,
        "n_xhat": K,
        "n_t": T,
    }
    with open(json_path, "w") as f:
        json.dump(env, f, sort_keys=True, indent=1)
        f.write("\n")
    header = ["xhat_index", "t_index"]
    header += [f"s_{i + 1}{j + 1}" for i in range(mm) for j in range(mm)]
    header.append("masked")
    lines = [",".join(header)]
    for k in range(K):
        for i in range(T):
            row = [str(k), str(i)]
            row += [_fmt(v) for v in ds.samples[k, i].ravel()]
            row.append("0" if ds.mask[k, i] else "1")
            lines.append(",".join(row))
    with open(csv_path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return json_path, csv_path


def load_dataset(path) -> WavefrontDataset:
    """Read a dataset written by save_dataset; accepts the stem or .json path."""
    path = os.fspath(path)
    if not path.endswith(".json"):
        path = path + ".json"
    with open(path) as f:
        env = json.load(f)
    if env.get("format") != "wavefront-dataset-v1":
        raise InputError(f"unrecognized dataset file {path}")
    csv_path = path[:-5] + ".csv"
    K, T, n = env["n_xhat"], env["n_t"], env["dim"]
    mm = n - 1
    samples = np.full((K, T, mm, mm), np.nan)
    mask = np.zeros((K, T), dtype=bool)
    with open(csv_path) as f:
        header = f.readline()
        expected_cols = 2 + mm * mm + 1
        for line in f:
            parts = line.strip().split(",")
            if len(parts) != expected_cols:
                raise InputError(f"malformed dataset row: {line!r}")
            k, i = int(parts[0]), int(parts[1])
            samples[k, i] = np.array([float(v) for v in parts[2:2 + mm * mm]]
                                     ).reshape(mm, mm)
            mask[k, i] = parts[-1] == "0"
    return WavefrontDataset(
        dim=n, t0=env["t0"], t_grid=np.array(env["t_grid"], dtype=float),
        xhat=np.array(env["xhat"], dtype=float),
        points=np.array(env["points"], dtype=float),
        normals=np.array(env["normals"], dtype=float),
        frames=np.array(env["frames"], dtype=float),
        gram=np.array(env["gram"], dtype=float),
        samples=samples, mask=mask, mask_eps=env["mask_eps"],
        noise_sigma=env["noise_sigma"], meta=env["meta"])


# ---------------------------------------------------------------------------
# oriented spherical surface families (appendix data)
# ---------------------------------------------------------------------------

@dataclass
class SphericalSurfaceSample:
    """Points and outward normals of one metric sphere, center withheld."""
    t: float
    points: np.ndarray          # (P, n)
    normals: np.ndarray         # (P, n) outward unit normals
    hidden_center: np.ndarray | None = None    # ground truth, tests only


def _fan(n: int, count: int, rng) -> np.ndarray:
    """Euclidean direction fan: uniform circle (n=2) or Fibonacci sphere."""
    if n == 2:
        a = rng.uniform(0.0, 2 * np.pi) + np.linspace(0, 2 * np.pi, count,
                                                      endpoint=False)
        return np.column_stack([np.cos(a), np.sin(a)])
    k = np.arange(count, dtype=float)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k + rng.uniform(0.0, 2 * np.pi)
    z = 1.0 - (2.0 * k + 1.0) / count
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def _shoot_tolerant(m, X0, V0, lengths):
    """Batched shooting that drops rays exiting the chart.

    Returns (ends, vels, ok).  Failing batches are split recursively so one
    runaway ray costs log factors, not a per-ray fallback.
    """
    K = X0.shape[0]
    try:
        ends, vels = geodesics.shoot_points(m, X0, V0, lengths)
        return ends, vels, np.ones(K, dtype=bool)
    except DomainError:
        if K == 1:
            return np.zeros_like(X0), np.zeros_like(V0), np.zeros(1, dtype=bool)
        h = K // 2
        e1, v1, o1 = _shoot_tolerant(m, X0[:h], V0[:h], lengths[:h])
        e2, v2, o2 = _shoot_tolerant(m, X0[h:], V0[h:], lengths[h:])
        return (np.vstack([e1, e2]), np.vstack([v1, v2]),
                np.concatenate([o1, o2]))


def sample_surface_family(m: manifold.MetricField, region_bounds, centers,
                          radii, pts_per_surface: int = 48,
                          seed: int = 0) -> list[SphericalSurfaceSample]:
    """Sample oriented metric spheres: points in the region, outward normals.

    For each (center, radius) a fan of unit directions is shot for arclength
    radius; endpoints inside region_bounds are kept with their outgoing ray
    velocities as outward normals.  Raises EmptySurface when a requested
    sphere leaves no point in the region.
    """
    region_bounds = np.asarray(region_bounds, dtype=float)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
    rng = np.random.default_rng(seed)
    out = []
    for y, t in zip(centers, radii):
        if t <= 0:
            raise InputError("surface radius must be positive")
        raw = _fan(m.dim, pts_per_surface, rng)
        g, _ = manifold.eval_metric(m, y)
        speeds = np.sqrt(np.einsum("ki,ij,kj->k", raw, g, raw))
        etas = raw / speeds[:, None]
        X0 = np.tile(y, (pts_per_surface, 1))
        ends, vels, ok = _shoot_tolerant(m, X0, etas,
                                         np.full(pts_per_surface, float(t)))
        inside = ok & np.all((ends >= region_bounds[:, 0])
                             & (ends <= region_bounds[:, 1]), axis=1)
        if not np.any(inside):
            raise EmptySurface(f"sphere (center={y.tolist()}, t={t}) misses region")
        out.append(SphericalSurfaceSample(t=float(t), points=ends[inside],
                                          normals=vels[inside],
                                          hidden_center=y.copy()))
    return out
