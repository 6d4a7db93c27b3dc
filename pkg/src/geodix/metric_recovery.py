"""Metric assembly over a fan of geodesics from the reference surface.

Each surface parameter x̂ owns one inward geodesic with a recovered
curvature profile.  The coordinate vector fields of the (x̂, r) chart are
Jacobi fields along these rays, pinned down by their surface values and by
the shape operator of the surface itself, which is exactly the data column
S(x̂, 0, t0).  Solving that linear Cauchy problem with the recovered
curvature gives the field coefficients 𝐣, and the chart metric follows as
g(∂_x̂, ∂_x̂) = 𝐣ᵀ ĝ 𝐣 with the measured surface gram ĝ.  The r-lines are
unit-speed geodesics orthogonal to the x̂-levels, so the remaining block
is g_rr = 1, g_rx̂ = 0 identically.

Ground truth comes from pushing the same chart through forward geodesic
fans and evaluating the true metric on finite-difference tangents, so the
comparison lives in one fixed coordinate system and needs no gauge fixing.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline

from .errors import (ConjugatePoint, DomainError, GridMismatch, InputError,
                     NumericalError)
from .forward import Sigma0Spec, WavefrontDataset, fan_directions
from .inversion import CurvatureProfile, reconstruct_along_geodesic
from .manifold import MetricField, christoffel_batch, metric_batch

FUND_RTOL = 1e-11
FUND_ATOL = 1e-12
XHAT_FD_STEP = 0.01


@dataclass
class ReconstructedChart:
    """Transverse metric block and Jacobi coefficients on the (x̂, r) grid.

    g_hat[k, i] is the (n-1)x(n-1) matrix of g(∂_x̂ʲ, ∂_x̂ᵏ) at parameter
    row k and radius node i; the full chart metric is block-diagonal with
    g_rr = 1.  jacobi_coeffs holds 𝐣(x̂, r; t0) per node (None for ground
    truth charts).  mask is True where the node is trustworthy; nodes near
    det 𝐣 = 0, where the chart map itself degenerates, are masked.
    """
    dim: int
    t0: float
    xhat: np.ndarray            # (K, n-1)
    r_grid: np.ndarray          # (N,)
    gram: np.ndarray            # (K, n-1, n-1) surface gram per row
    g_hat: np.ndarray           # (K, N, n-1, n-1)
    jacobi_coeffs: np.ndarray | None
    mask: np.ndarray            # (K, N) True = valid

    @property
    def mm(self) -> int:
        return self.dim - 1


@dataclass
class FermiSamples:
    """Metric in Fermi coordinates along one chart axis.

    axis_g is the transverse metric on the axis itself (equal to the
    surface gram when the conversion is exact).  For surfaces (dim 2) the
    off-axis table g_rr[i, j] holds the single nontrivial Fermi component
    at (r_grid[i], s_grid[j]); the transverse component is 1 and the cross
    term 0 by the Gauss lemma.
    """
    r_grid: np.ndarray
    axis_g: np.ndarray          # (N, m, m)
    axis_mask: np.ndarray       # (N,)
    gram: np.ndarray            # (m, m) reference value
    s_grid: np.ndarray | None = None
    g_rr: np.ndarray | None = None       # (N, len(s_grid))
    off_mask: np.ndarray | None = None


# ---------------------------------------------------------------------------
# recovery side
# ---------------------------------------------------------------------------

def _jacobi_table(profile: CurvatureProfile, S0: np.ndarray,
                  r_grid: np.ndarray):
    """j(r) on r_grid for the field with j(0) = I, j'(0) = -S0."""
    mm = S0.shape[0]
    rp = profile.r_grid
    rspl = profile.spline()

    def rhs(r, y):
        j, dj = y.reshape(2, mm, mm)
        R = rspl(np.clip(r, rp[0], rp[-1])).reshape(mm, mm)
        return np.concatenate([dj.ravel(), (-R @ j).ravel()])

    y0 = np.concatenate([np.eye(mm).ravel(), (-S0).ravel()])
    sol = solve_ivp(rhs, (r_grid[0], r_grid[-1]), y0, method="DOP853",
                    t_eval=r_grid, rtol=FUND_RTOL, atol=FUND_ATOL)
    if not sol.success:
        raise NumericalError(f"chart Jacobi integration failed: {sol.message}")
    blocks = sol.y.T.reshape(len(r_grid), 2, mm, mm)
    return blocks[:, 0], blocks[:, 1]


def _chart_row(args):
    (t_grid, samples, valid, i_t0, t0, r_grid, gram_perp, dr, strict_step,
     restart_offsets, declared_noise) = args
    res = reconstruct_along_geodesic(
        t_grid, samples, valid, r_max=float(r_grid[-1]), dr=dr,
        strict_step=strict_step, restart_offsets=restart_offsets,
        declared_noise=declared_noise)
    S0 = samples[i_t0]
    j, _ = _jacobi_table(res.profile, S0, r_grid)
    g_hat = np.einsum("nji,jk,nkl->nil", j, gram_perp, j)
    # mask where the chart map degenerates: the slope of det j turns its
    # magnitude into a distance-to-zero estimate, so one grid step of
    # margin is masked around every root regardless of scale
    d = np.linalg.det(j)
    slope = np.abs(np.gradient(d, r_grid))
    dist = np.abs(d) / np.maximum(slope, 1e-300)
    ok = (dist >= dr) & (np.abs(d) >= 1e-14)
    return g_hat, j, ok


def recover_chart(dataset: WavefrontDataset, t0: float, r_max: float,
                  dr: float | None = None, strict_step: bool = False,
                  restart_offsets=(), declared_noise: float = 0.0,
                  jobs: int = 1) -> ReconstructedChart:
    """Chart metric from the dataset alone: march, then linear assembly.

    t0 must be a node of the dataset's t grid with every x̂ row unmasked
    there, because S(x̂, 0, t0) doubles as the shape operator of the
    reference surface and seeds the coordinate Jacobi fields.
    """
    t_grid = dataset.t_grid
    dt = dataset.delta_t
    if dr is None:
        dr = dt
    i_t0 = int(np.argmin(np.abs(t_grid - t0)))
    if abs(t_grid[i_t0] - t0) > 1e-9:
        raise InputError(f"t0={t0:.6g} is not a dataset t node")
    if not dataset.mask[:, i_t0].all():
        raise InputError("surface shape column S(.,0,t0) is masked "
                         "for some x̂ rows")
    n_nodes = int(round(r_max / dr))
    r_grid = np.linspace(0.0, n_nodes * dr, n_nodes + 1)

    K = dataset.samples.shape[0]
    rows = [(t_grid, dataset.samples[k], dataset.mask[k], i_t0, float(t0),
             r_grid, dataset.gram_perp(k), dr, strict_step,
             tuple(restart_offsets), declared_noise) for k in range(K)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_chart_row, rows))
    else:
        out = [_chart_row(row) for row in rows]

    g_hat = np.stack([o[0] for o in out])
    jc = np.stack([o[1] for o in out])
    mask = np.stack([o[2] for o in out])
    gram = np.stack([dataset.gram_perp(k) for k in range(K)])
    return ReconstructedChart(dim=dataset.dim, t0=float(t0),
                              xhat=np.asarray(dataset.xhat, dtype=float),
                              r_grid=r_grid, gram=gram, g_hat=g_hat,
                              jacobi_coeffs=jc, mask=mask)


# ---------------------------------------------------------------------------
# ground truth side
# ---------------------------------------------------------------------------

def _fan_paths(m: MetricField, X0: np.ndarray, V0: np.ndarray,
               t_eval: np.ndarray):
    """Positions and velocities of a batch of geodesics at the given times.

    Integrates the whole fan as one state; the domain is checked after the
    fact on every returned node rather than per step.
    """
    B, n = X0.shape
    span = (0.0, float(t_eval[-1]))

    def rhs(t, y):
        st = y.reshape(B, 2, n)
        x, v = st[:, 0], st[:, 1]
        gam = christoffel_batch(m, x)
        acc = -np.einsum("bijk,bj,bk->bi", gam, v, v)
        return np.stack([v, acc], axis=1).ravel()

    y0 = np.stack([X0, V0], axis=1).ravel()
    sol = solve_ivp(rhs, span, y0, method="DOP853", t_eval=t_eval,
                    rtol=1e-11, atol=1e-12)
    if not sol.success:
        raise NumericalError(f"fan integration failed: {sol.message}")
    st = sol.y.T.reshape(len(t_eval), B, 2, n)
    pts, vel = st[:, :, 0], st[:, :, 1]
    for layer in pts:
        for p in layer:
            if m.boundary_margin(p) < 0.0:
                raise DomainError("ground-truth fan left the chart domain")
    return pts, vel


_STENCIL = np.array([-2.0, -1.0, 1.0, 2.0])
_D1_W = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0   # times 1/h, center dropped


def ground_truth_chart(m: MetricField, spec: Sigma0Spec,
                       xhat_grid: np.ndarray, r_grid: np.ndarray,
                       fd_step: float = XHAT_FD_STEP) -> ReconstructedChart:
    """True chart metric through forward fans and x̂ finite differences.

    Five-point first-derivative stencils across auxiliary rays at
    x̂ ± fd_step, x̂ ± 2 fd_step give the coordinate tangents; the true
    metric is evaluated at the center-ray points.
    """
    xhat_grid = np.atleast_2d(np.asarray(xhat_grid, dtype=float))
    r_grid = np.asarray(r_grid, dtype=float)
    K, mm = xhat_grid.shape
    if mm != m.dim - 1:
        raise InputError("xhat rows must have n-1 entries")

    # stencil rows: center first, then per axis the four offsets
    rows = [xhat_grid]
    for a in range(mm):
        for c in _STENCIL:
            shift = np.zeros(mm)
            shift[a] = c * fd_step
            rows.append(xhat_grid + shift)
    all_xhat = np.concatenate(rows, axis=0)

    probe = Sigma0Spec(center=spec.center, base_direction=spec.base_direction,
                       t0=spec.t0, xhat=all_xhat)
    etas, _ = fan_directions(m, probe)
    B = all_xhat.shape[0]
    centers = np.tile(np.asarray(spec.center, dtype=float), (B, 1))
    z_pts, z_vel = _fan_paths(m, centers, etas, np.array([spec.t0]))
    z, nu = z_pts[0], z_vel[0]

    pos, vel = _fan_paths(m, z, -nu, r_grid)      # (N, B, n)
    N = len(r_grid)
    ctr = pos[:, :K]                              # center rays per node
    g_at = metric_batch(m, ctr.reshape(N * K, -1)).reshape(N, K, m.dim, m.dim)

    tangents = np.empty((N, K, mm, m.dim))
    for a in range(mm):
        block = pos[:, K * (1 + 4 * a):K * (1 + 4 * a) + 4 * K]
        block = block.reshape(N, 4, K, m.dim)
        tangents[:, :, a] = np.einsum("s,nskd->nkd", _D1_W, block) / fd_step

    g_hat = np.einsum("nkad,nkde,nkbe->nkab", tangents, g_at, tangents)
    g_hat = np.transpose(g_hat, (1, 0, 2, 3))

    # Gauss-lemma block: radial directions are unit and orthogonal to the
    # x̂ tangents; surfaced as a hard check rather than stored fields
    v_ctr = vel[:, :K]
    g_rr = np.einsum("nkd,nkde,nke->nk", v_ctr, g_at, v_ctr)
    g_rx = np.einsum("nkad,nkde,nke->nka", tangents, g_at, v_ctr)
    if np.max(np.abs(g_rr - 1.0)) > 1e-6 or np.max(np.abs(g_rx)) > 1e-6:
        raise NumericalError("chart block structure violated: radial "
                             "directions are not unit-orthogonal")

    gram = g_hat[:, 0].copy()
    return ReconstructedChart(dim=m.dim, t0=float(spec.t0), xhat=xhat_grid,
                              r_grid=r_grid, gram=gram, g_hat=g_hat,
                              jacobi_coeffs=None,
                              mask=np.ones((K, N), dtype=bool))


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------

def chart_error(recovered: ReconstructedChart,
                truth: ReconstructedChart) -> dict:
    """Per-node relative Frobenius error report, JSON-ready."""
    if (recovered.xhat.shape != truth.xhat.shape
            or len(recovered.r_grid) != len(truth.r_grid)
            or np.max(np.abs(recovered.xhat - truth.xhat)) > 1e-9
            or np.max(np.abs(recovered.r_grid - truth.r_grid)) > 1e-9):
        raise GridMismatch("charts live on different grids")
    diff = np.linalg.norm(recovered.g_hat - truth.g_hat, axis=(2, 3))
    scale = np.linalg.norm(truth.g_hat, axis=(2, 3))
    rel = diff / np.maximum(scale, 1e-300)
    both = recovered.mask & truth.mask
    vals = rel[both]
    per_r = []
    for i in range(rel.shape[1]):
        col = rel[:, i][both[:, i]]
        per_r.append(float(col.max()) if col.size else None)
    return {
        "max_rel": float(vals.max()) if vals.size else None,
        "median_rel": float(np.median(vals)) if vals.size else None,
        "q90_rel": float(np.quantile(vals, 0.9)) if vals.size else None,
        "masked_frac": float(1.0 - recovered.mask.mean()),
        "per_r_profile": per_r,
    }


# ---------------------------------------------------------------------------
# Fermi conversion
# ---------------------------------------------------------------------------

def _axis_fermi(chart: ReconstructedChart, k: int):
    mm = chart.mm
    N = len(chart.r_grid)
    axis = np.full((N, mm, mm), np.nan)
    ok = chart.mask[k].copy()
    for i in range(N):
        if not ok[i]:
            continue
        j = chart.jacobi_coeffs[k, i]
        if abs(np.linalg.det(j)) < 1e-12:
            ok[i] = False
            continue
        jinv = np.linalg.inv(j)
        axis[i] = jinv.T @ chart.g_hat[k, i] @ jinv
    return axis, ok


def to_fermi(chart: ReconstructedChart, xhat_index: int,
             s_grid: np.ndarray | None = None) -> FermiSamples:
    """Metric in Fermi coordinates along the ray of one x̂ row.

    On the axis the Fermi coordinate vectors are the parallel frame, whose
    coefficients in the Jacobi basis are the columns of 𝐣⁻¹; the axis
    metric must reproduce the surface gram.  Off the axis (surfaces only)
    the recovered chart metric is interpolated and its own transverse
    geodesics are integrated, which turns chart data into Fermi components
    without touching the true metric.
    """
    if chart.jacobi_coeffs is None:
        raise InputError("chart carries no Jacobi coefficients")
    k = int(xhat_index)
    if not 0 <= k < chart.xhat.shape[0]:
        raise InputError("xhat_index out of range")
    axis, ok = _axis_fermi(chart, k)
    out = FermiSamples(r_grid=chart.r_grid.copy(), axis_g=axis, axis_mask=ok,
                       gram=chart.gram[k].copy())
    if s_grid is None:
        return out
    if chart.dim != 2:
        raise InputError("off-axis conversion is implemented for surfaces")
    if chart.xhat.shape[0] < 4:
        raise InputError("off-axis conversion needs at least 4 x̂ rows")
    out.s_grid = np.asarray(s_grid, dtype=float)
    out.g_rr, out.off_mask = _off_axis_fermi(chart, k, out.s_grid)
    return out


def _off_axis_fermi(chart: ReconstructedChart, k: int, s_grid: np.ndarray):
    """Fermi g_rr(r, s) by shooting transverse geodesics of the chart metric.

    With coordinates (x̂, r) and metric E dx̂² + dr², the r-derivative field
    restricted to a transverse geodesic is a Jacobi field with value γ̇ and
    zero derivative at the axis, and it stays normal to the geodesic, so a
    single scalar equation y'' + Ky = 0 with the Gauss curvature
    K = -(√E)_rr/√E carries the whole conversion.
    """
    xh = chart.xhat[:, 0]
    order = np.argsort(xh)
    xh_sorted = xh[order]
    E = chart.g_hat[order, :, 0, 0]
    if not chart.mask.all():
        raise ConjugatePoint("off-axis conversion needs a fully unmasked chart")
    spl = RectBivariateSpline(xh_sorted, chart.r_grid, E,
                              kx=min(3, len(xh_sorted) - 1), ky=3, s=0)
    x_lo, x_hi = xh_sorted[0], xh_sorted[-1]
    r_lo, r_hi = chart.r_grid[0], chart.r_grid[-1]
    x0 = xh[k]

    def curvature(x, r):
        sq = np.sqrt(max(spl(x, r)[0, 0], 1e-300))
        e_r = spl(x, r, dy=1)[0, 0]
        e_rr = spl(x, r, dy=2)[0, 0]
        # (√E)_rr = E_rr/(2√E) − E_r²/(4 E^{3/2})
        return -(e_rr / (2.0 * sq) - e_r ** 2 / (4.0 * sq ** 3)) / sq

    def rhs(s, y):
        x, r, vx, vr, w, dw = y
        xc = min(max(x, x_lo), x_hi)
        rc = min(max(r, r_lo), r_hi)
        e = spl(xc, rc)[0, 0]
        e_x = spl(xc, rc, dx=1)[0, 0]
        e_r = spl(xc, rc, dy=1)[0, 0]
        ax = -(e_x / (2.0 * e) * vx * vx + e_r / e * vx * vr)
        ar = 0.5 * e_r * vx * vx
        kap = curvature(xc, rc)
        return [vx, vr, ax, ar, dw, -kap * w]

    N = len(chart.r_grid)
    S = len(s_grid)
    g_rr = np.full((N, S), np.nan)
    mask = np.zeros((N, S), dtype=bool)
    for i, r0 in enumerate(chart.r_grid):
        e0 = spl(x0, r0)[0, 0]
        for sign in (1.0, -1.0):
            sel = (np.sign(s_grid) == sign) | (s_grid == 0.0)
            s_targets = np.abs(s_grid[sel])
            if not s_targets.size:
                continue
            s_end = float(s_targets.max())
            y0 = [x0, r0, sign / np.sqrt(e0), 0.0, 1.0, 0.0]
            if s_end == 0.0:
                sol_vals = np.array([[x0], [r0], [0], [0], [1.0], [0]])
                order_t = np.array([0])
            else:
                sol = solve_ivp(rhs, (0.0, s_end), y0, method="DOP853",
                                t_eval=np.sort(s_targets), rtol=1e-10,
                                atol=1e-12)
                if not sol.success:
                    continue
                sol_vals = sol.y
                order_t = np.argsort(np.argsort(s_targets))
            idx = np.flatnonzero(sel)
            for col, ii in zip(order_t, idx):
                x_s, r_s = sol_vals[0, col], sol_vals[1, col]
                if (x_lo + 1e-12 <= x_s <= x_hi - 1e-12
                        and r_lo <= r_s <= r_hi):
                    g_rr[i, ii] = sol_vals[4, col] ** 2
                    mask[i, ii] = True
    return g_rr, mask


# ---------------------------------------------------------------------------
# chart files
# ---------------------------------------------------------------------------

CHART_FORMAT = "reconstructed-chart-v1"


def save_chart(chart: ReconstructedChart, stem) -> tuple:
    """Write <stem>.json (geometry) and <stem>.csv (per-node values)."""
    stem = str(stem)
    if stem.endswith(".json"):
        stem = stem[:-5]
    json_path, csv_path = stem + ".json", stem + ".csv"
    mm = chart.mm
    envelope = {
        "format": CHART_FORMAT,
        "dim": chart.dim,
        "t0": repr(float(chart.t0)),
        "r_grid": [repr(float(v)) for v in chart.r_grid],
        "xhat": [[repr(float(v)) for v in row] for row in chart.xhat],
        "gram": [[repr(float(v)) for v in g.ravel()] for g in chart.gram],
        "has_jacobi": chart.jacobi_coeffs is not None,
    }
    with open(json_path, "w") as fh:
        json.dump(envelope, fh, indent=1, sort_keys=True)
        fh.write("\n")
    cols = [f"g_{i + 1}{j + 1}" for i in range(mm) for j in range(mm)]
    jcols = ([f"j_{i + 1}{j + 1}" for i in range(mm) for j in range(mm)]
             if chart.jacobi_coeffs is not None else [])
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["xhat_index", "r_index"] + cols + jcols + ["masked"])
        for k in range(chart.xhat.shape[0]):
            for i in range(len(chart.r_grid)):
                row = [str(k), str(i)]
                row += [repr(float(v)) for v in chart.g_hat[k, i].ravel()]
                if jcols:
                    row += [repr(float(v))
                            for v in chart.jacobi_coeffs[k, i].ravel()]
                row.append("0" if chart.mask[k, i] else "1")
                wr.writerow(row)
    return json_path, csv_path


def load_chart(path) -> ReconstructedChart:
    """Read a chart written by save_chart; accepts the stem or .json path."""
    path = str(path)
    if not path.endswith(".json"):
        path = path + ".json"
    with open(path) as fh:
        env = json.load(fh)
    if env.get("format") != CHART_FORMAT:
        raise InputError(f"not a chart file: {path}")
    dim = int(env["dim"])
    mm = dim - 1
    r_grid = np.array([float(v) for v in env["r_grid"]])
    xhat = np.array([[float(v) for v in row] for row in env["xhat"]])
    gram = np.array([[float(v) for v in g] for g in env["gram"]])
    gram = gram.reshape(-1, mm, mm)
    K, N = xhat.shape[0], len(r_grid)
    g_hat = np.full((K, N, mm, mm), np.nan)
    jc = np.full((K, N, mm, mm), np.nan) if env["has_jacobi"] else None
    mask = np.zeros((K, N), dtype=bool)
    with open(path[:-5] + ".csv", newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        for row in rd:
            k, i = int(row[0]), int(row[1])
            g_hat[k, i] = np.array([float(v)
                                    for v in row[2:2 + mm * mm]]).reshape(mm, mm)
            if jc is not None:
                jc[k, i] = np.array([
                    float(v)
                    for v in row[2 + mm * mm:2 + 2 * mm * mm]]).reshape(mm, mm)
            mask[k, i] = row[-1] == "0"
    return ReconstructedChart(dim=dim, t0=float(env["t0"]), xhat=xhat,
                              r_grid=r_grid, gram=gram, g_hat=g_hat,
                              jacobi_coeffs=jc, mask=mask)
