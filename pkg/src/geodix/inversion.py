"""Curvature recovery from shape-operator data along one geodesic.

The driver is the closed system for V^j(r, t) = (d/dt)^j K(r, t), j = 0..3,
where K is the inverse shape operator of the wavefront from the source at
arclength t.  Its r-derivative couples the V's only through the single
matrix R(r) = (1/2) V^3(r, r), which is exactly the transverse curvature,
so marching the system in r recovers the curvature profile node by node.

Beyond the first caustic the data S(0, t) is masked near conjugate times,
and S(r, t) itself has poles, so the march works in layers: recover R on a
short step, move the data origin from 0 to the step end by solving linear
Jacobi Cauchy problems with the already-recovered curvature, and restart.
Poles and masked bands cost nothing because the continuation is linear.

A worst-case step length t2 (a Banach fixed point argument) is available
via step_bound and enforced in strict mode; the default adaptive mode takes
a fixed fraction of the usable data window instead, which is far longer in
practice, and relies on the same joint-continuity checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import UnivariateSpline, make_interp_spline

from .errors import (BadBound, BlowUp, InputError, NoiseError, OutOfWindow,
                     SingularShape, WindowExhausted)

MIN_WINDOW_NODES = 7        # quintic fit / 7-point stencils need this many
DIAG_EXTRAP_NODES = 6       # how far below the window the diagonal may sit
MASK_MARGIN_NODES = 18      # 3 stencil widths (7-point stencil = 6 nodes)
DET_SPLIT_FLOOR = 1e-6      # split windows where |det S| collapses (K pole)
NOISE_FLOOR = 1e-11         # sigma-hat level expected from exact-data runs
DEFAULT_MAX_WINDOW = 2.0
DET_EPS = 1e-8              # continuation masking threshold on |det j|


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass
class VState:
    """K and its first three t-derivatives on a t-window, at origin r."""
    r: float
    t_grid: np.ndarray          # (W,)
    V0: np.ndarray              # (W, m, m)
    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.V0, self.V1, self.V2, self.V3])

    def norm_y(self) -> float:
        """sup over the window of the largest matrix entry, all orders."""
        return float(max(np.abs(v).max() for v in
                         (self.V0, self.V1, self.V2, self.V3)))


@dataclass
class StepControl:
    """Worst-case step cap from the fixed-point contraction argument."""
    curvature_bound: float      # prior bound on the curvature norm
    ball_radius: float          # radius of the fixed-point ball
    lipschitz: float            # Lipschitz constant of the quadratic map
    t2: float                   # safe step length


@dataclass
class CurvatureProfile:
    """Recovered transverse curvature matrices on a uniform r grid."""
    r_grid: np.ndarray
    R: np.ndarray               # (N, m, m)

    def spline(self):
        k = min(3, len(self.r_grid) - 1)
        return make_interp_spline(self.r_grid, self.R.reshape(len(self.r_grid), -1),
                                  k=k)


@dataclass
class ReconstructionResult:
    """Full output of the layer-stripping loop along one geodesic."""
    profile: CurvatureProfile
    joints: list                # r positions where the data origin moved
    joint_jumps: list           # |R jump| measured across each joint
    strips: list                # (r_origin, samples, valid) including r=0
    k_bound: float              # final curvature bound used


# ---------------------------------------------------------------------------
# step bound
# ---------------------------------------------------------------------------

def step_bound(curvature_bound: float, ball_radius: float) -> StepControl:
    """Step cap t2 = min(pi/(4 sqrt(K)), 1/L, R/(2(1+4R^3))) / 2, L = 6 R^2.

    The Lipschitz constant of the quadratic V-map on the ball of radius R
    is declared as 6 R^2; a direct bound of the differential gives 12 R^2,
    and the extra 1/2 prefactor on t2 absorbs the factor-two gap, so the
    cap stays conservative either way.
    """
    if curvature_bound <= 0.0:
        raise BadBound("curvature bound must be positive")
    if ball_radius < 1.0:
        raise BadBound("ball radius must be at least 1")
    lip = 6.0 * ball_radius ** 2
    t2 = 0.5 * min(np.pi / (4.0 * np.sqrt(curvature_bound)),
                   1.0 / lip,
                   ball_radius / (2.0 * (1.0 + 4.0 * ball_radius ** 3)))
    return StepControl(curvature_bound=float(curvature_bound),
                       ball_radius=float(ball_radius), lipschitz=lip, t2=t2)


# ---------------------------------------------------------------------------
# initial data on a window
# ---------------------------------------------------------------------------

def _sigma_hat(K: np.ndarray) -> float:
    """Robust white-noise scale from 7th differences of each K entry.

    Seventh differences kill smooth content down to O(dt^7) while
    amplifying white noise by sqrt(binom(7,k)^2 summed) = sqrt(3432);
    the median of magnitudes then ignores the near-pole tail of a window
    where the smooth part steepens, and isolated glitches.
    """
    W = K.shape[0]
    if W < 10:
        return 0.0
    coef = np.array([1.0, -7.0, 21.0, -35.0, 35.0, -21.0, 7.0, -1.0])
    flat = K.reshape(W, -1)
    d7 = sum(c * flat[i:W - 7 + i] for i, c in enumerate(coef))
    mad = np.median(np.abs(d7 - np.median(d7, axis=0)), axis=0)
    return float(np.max(mad) / 0.6745 / np.sqrt(3432.0))


def _fd_derivatives(t_win: np.ndarray, K: np.ndarray):
    """7-point stencil derivatives for windows too short for spline fits."""
    W = len(t_win)
    flat = K.reshape(W, -1)
    out = []
    for order in (1, 2, 3):
        d = np.empty_like(flat)
        for i in range(W):
            lo = min(max(i - 3, 0), W - 7)
            idx = np.arange(lo, lo + 7)
            # one-sided / interior weights from the local Vandermonde system
            A = np.vander(t_win[idx] - t_win[i], 7, increasing=True).T
            rhs = np.zeros(7)
            rhs[order] = float(np.prod(np.arange(1, order + 1)))
            w = np.linalg.solve(A, rhs)
            d[i] = w @ flat[idx]
        out.append(d.reshape(K.shape))
    return out


def initial_vstate(t_grid, samples, window, r: float = 0.0,
                   declared_noise: float = 0.0) -> VState:
    """V-state at origin r from shape samples S(r, t) on a clean window.

    window is an index array into t_grid (contiguous, unmasked).  K = S^-1
    per node; t-derivatives come from a quintic spline fit per matrix entry
    (interpolating for exact data, smoothing when noise is declared), with
    7-point finite-difference stencils as the short-window fallback.

    Raises SingularShape if S is not invertible on the window, NoiseError
    if the data is rougher than exact arithmetic can explain and no noise
    level was declared.
    """
    window = np.asarray(window, dtype=int)
    if len(window) < MIN_WINDOW_NODES:
        raise WindowExhausted(f"window of {len(window)} nodes at r={r:.6g}, "
                              f"need {MIN_WINDOW_NODES}")
    t_win = np.asarray(t_grid, dtype=float)[window]
    S = np.asarray(samples, dtype=float)[window]
    dets = np.linalg.det(S)
    if np.min(np.abs(dets)) < 1e-12:
        raise SingularShape(f"shape operator singular inside window at r={r:.6g}")
    K = np.linalg.inv(S)

    sig = _sigma_hat(K)
    floor = NOISE_FLOOR * max(1.0, np.abs(K).max())
    if declared_noise <= 0.0 and sig > 10.0 * floor:
        raise NoiseError(
            f"window roughness sigma~{sig:.2e} exceeds exact-data level "
            f"{floor:.2e}; declare a noise level to enable smoothing")

    W, mm = len(t_win), K.shape[1]
    if W >= 12:
        V1 = np.empty_like(K)
        V2 = np.empty_like(K)
        V3 = np.empty_like(K)
        V0 = np.empty_like(K)
        for i in range(mm):
            for j in range(mm):
                y = K[:, i, j]
                if declared_noise > 0.0:
                    spl = UnivariateSpline(t_win, y, k=5,
                                           s=W * declared_noise ** 2)
                else:
                    spl = make_interp_spline(t_win, y, k=5)
                V0[:, i, j] = spl(t_win)
                V1[:, i, j] = spl.derivative(1)(t_win)
                V2[:, i, j] = spl.derivative(2)(t_win)
                V3[:, i, j] = spl.derivative(3)(t_win)
    else:
        V0 = K.copy()
        V1, V2, V3 = _fd_derivatives(t_win, K)
    return VState(r=float(r), t_grid=t_win, V0=V0, V1=V1, V2=V2, V3=V3)


# ---------------------------------------------------------------------------
# diagonal evaluation and the closed system
# ---------------------------------------------------------------------------

def _diag(t_win: np.ndarray, V3: np.ndarray, r: float) -> np.ndarray:
    """Cubic Lagrange interpolation of V3 at t = r on the 4 nearest nodes.

    The window starts a few nodes above r, so evaluation just below the
    first node is the normal case; extrapolation is allowed down to
    DIAG_EXTRAP_NODES below the window and refused beyond.
    """
    dt = t_win[1] - t_win[0]
    if r < t_win[0] - DIAG_EXTRAP_NODES * dt - 1e-12 or r > t_win[-1] + dt + 1e-12:
        raise OutOfWindow(f"diagonal t={r:.6g} beyond window "
                          f"[{t_win[0]:.6g}, {t_win[-1]:.6g}]")
    j = int(np.searchsorted(t_win, r)) - 2
    j = max(0, min(j, len(t_win) - 4))
    ts = t_win[j:j + 4]
    out = np.zeros_like(V3[0])
    for a in range(4):
        w = 1.0
        for b in range(4):
            if a != b:
                w *= (r - ts[b]) / (ts[a] - ts[b])
        out += w * V3[j + a]
    return out


def diag_eval(V: VState) -> np.ndarray:
    """V3 at the diagonal t = V.r; half of this is the curvature R(V.r)."""
    return _diag(V.t_grid, V.V3, V.r)


def vsystem_rhs(V, R: np.ndarray):
    """r-derivatives of (V0..V3) given the diagonal curvature matrix R.

    V may be a VState or the raw (4, W, m, m) stack.  The map is quadratic
    in the V entries: every term is Vj R Vk with j + k equal to the output
    order, with binomial weights from differentiating the product.
    """
    A = V.stack() if isinstance(V, VState) else np.asarray(V)
    V0, V1, V2, V3 = A
    P0, P1, P2, P3 = V0 @ R, V1 @ R, V2 @ R, V3 @ R
    eye = np.eye(A.shape[-1])
    d0 = -eye - P0 @ V0
    d1 = -(P1 @ V0 + P0 @ V1)
    d2 = -(P2 @ V0 + P0 @ V2 + 2.0 * P1 @ V1)
    d3 = -(P3 @ V0 + P0 @ V3 + 3.0 * P2 @ V1 + 3.0 * P1 @ V2)
    return np.stack([d0, d1, d2, d3])


def march_vsystem(v_init: VState, r_span, dr: float,
                  control: StepControl | None = None):
    """RK4 march of the V-system over r_span, emitting R(r) per node.

    The diagonal matrix R is re-evaluated at every RK4 stage from the
    staged V3.  When a StepControl is supplied the span must respect its
    t2 cap and the trajectory must stay inside its ball (strict mode);
    otherwise the ball is set from the initial state.

    Returns (trajectory, profile): VStates at the nodes and the curvature
    profile sampled on them.
    """
    r0, r1 = float(r_span[0]), float(r_span[1])
    if r1 <= r0:
        raise InputError("need increasing r_span")
    if abs(v_init.r - r0) > 1e-9:
        raise InputError("v_init.r must match the span start")
    if control is not None:
        if r1 - r0 > control.t2 + 1e-12:
            raise InputError(f"span {r1 - r0:.4g} exceeds step cap "
                             f"{control.t2:.4g}")
        ball = control.ball_radius
    else:
        ball = 2.0 * v_init.norm_y() + 1.0

    n_steps = max(1, int(round((r1 - r0) / dr)))
    h = (r1 - r0) / n_steps
    t_win = v_init.t_grid
    A = v_init.stack()
    mm = A.shape[-1]

    def usable(r):
        if int(np.sum(t_win >= r - 1e-12)) < 5:
            raise OutOfWindow(f"fewer than 5 window nodes ahead of r={r:.6g}")

    def emit(r, A):
        return VState(r=r, t_grid=t_win, V0=A[0].copy(), V1=A[1].copy(),
                      V2=A[2].copy(), V3=A[3].copy())

    traj = [emit(r0, A)]
    rs = [r0]
    Rs = [0.5 * _diag(t_win, A[3], r0)]
    r = r0
    for _ in range(n_steps):
        usable(r)
        k1 = vsystem_rhs(A, Rs[-1])
        Ah = A + 0.5 * h * k1
        k2 = vsystem_rhs(Ah, 0.5 * _diag(t_win, Ah[3], r + 0.5 * h))
        Ah = A + 0.5 * h * k2
        k3 = vsystem_rhs(Ah, 0.5 * _diag(t_win, Ah[3], r + 0.5 * h))
        Ae = A + h * k3
        k4 = vsystem_rhs(Ae, 0.5 * _diag(t_win, Ae[3], r + h))
        A = A + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        r = r + h
        if np.abs(A).max() > ball:
            raise BlowUp(f"V-state left the radius-{ball:.3g} ball at r={r:.6g}")
        traj.append(emit(r, A))
        rs.append(r)
        Rs.append(0.5 * _diag(t_win, A[3], r))
    profile = CurvatureProfile(r_grid=np.array(rs), R=np.stack(Rs))
    return traj, profile


# ---------------------------------------------------------------------------
# moving the data origin with recovered curvature
# ---------------------------------------------------------------------------

FUND_RTOL = 1e-11
FUND_ATOL = 1e-12


@dataclass
class _FundState:
    """Fundamental Jacobi pair for j'' = -R j, grown incrementally in r.

    A has (value, slope) = (I, 0) at r = 0 and B has (0, I); any Jacobi
    field along the ray is A j(0) + B j'(0), so one integration serves all
    sources at once.  extend() continues the same initial value problem
    over the newest recovered-R segment instead of restarting from zero.
    """
    r: float
    A: np.ndarray
    dA: np.ndarray
    B: np.ndarray
    dB: np.ndarray

    @classmethod
    def identity(cls, mm: int):
        eye = np.eye(mm)
        return cls(r=0.0, A=eye.copy(), dA=np.zeros((mm, mm)),
                   B=np.zeros((mm, mm)), dB=eye.copy())

    def extend(self, profile: CurvatureProfile, r1: float) -> None:
        if r1 <= self.r + 1e-12:
            return
        mm = self.A.shape[0]
        rp = profile.r_grid
        if self.r < rp[0] - 1e-9 or r1 > rp[-1] + 1e-9:
            raise InputError("profile does not cover the extension span")
        rspl = profile.spline()

        def rhs(r, y):
            blocks = y.reshape(4, mm, mm)
            R = rspl(np.clip(r, rp[0], rp[-1])).reshape(mm, mm)
            out = np.empty_like(blocks)
            out[0] = blocks[1]
            out[1] = -R @ blocks[0]
            out[2] = blocks[3]
            out[3] = -R @ blocks[2]
            return out.ravel()

        y0 = np.stack([self.A, self.dA, self.B, self.dB]).ravel()
        sol = solve_ivp(rhs, (self.r, r1), y0, method="DOP853",
                        rtol=FUND_RTOL, atol=FUND_ATOL, dense_output=False)
        if not sol.success:
            raise BlowUp(f"fundamental Jacobi integration failed: {sol.message}")
        self.A, self.dA, self.B, self.dB = sol.y[:, -1].reshape(4, mm, mm)
        self.r = float(r1)


def _strip_shape(fund: _FundState, t_grid, samples0, valid0,
                 mask_eps: float = DET_EPS):
    """Shape data at origin fund.r from the original data at origin 0.

    Each source at t > fund.r defines the Jacobi Cauchy data j(0) = I,
    j'(0) = -S(0, t); the new shape is -j'(r1) j(r1)^{-1}.  Nodes where
    det j(r1) vanishes (source conjugate to the new origin) are masked,
    not fatal, exactly like the native data mask.
    """
    r1 = fund.r
    t_grid = np.asarray(t_grid, dtype=float)
    dt = t_grid[1] - t_grid[0]
    mm = fund.A.shape[0]
    W = len(t_grid)
    S_new = np.full((W, mm, mm), np.nan)
    valid_new = np.zeros(W, dtype=bool)
    ahead = np.asarray(valid0) & (t_grid > r1 + dt / 2.0)
    if not ahead.any():
        return S_new, valid_new
    S0 = np.asarray(samples0, dtype=float)[ahead]
    j = fund.A[None] - np.einsum("ij,njk->nik", fund.B, S0)
    dj = fund.dA[None] - np.einsum("ij,njk->nik", fund.dB, S0)
    dets = np.abs(np.linalg.det(j))
    scale = np.maximum(t_grid[ahead] - r1, dt) ** mm
    ok = dets >= mask_eps * scale
    out = np.full_like(S0, np.nan)
    if ok.any():
        out[ok] = -np.einsum("nij,njk->nik", dj[ok], np.linalg.inv(j[ok]))
    idx = np.flatnonzero(ahead)
    S_new[idx] = out
    valid_new[idx] = ok
    return S_new, valid_new


def continue_past_step(profile: CurvatureProfile, t1: float, t_grid,
                       samples, valid, mask_eps: float = DET_EPS):
    """Shape data S(t1, t) from S(0, t) given the curvature on [0, t1].

    Standalone form of the continuation used inside the layer loop: it
    integrates the fundamental pair from r = 0 every call, so prefer the
    incremental path for many joints on one ray.

    Returns (samples, valid) on the full t_grid; entries at t <= t1 and
    at sources conjugate to t1 are masked.
    """
    if t1 < profile.r_grid[0] - 1e-9 or t1 > profile.r_grid[-1] + 1e-9:
        raise InputError("t1 outside the recovered profile span")
    mm = np.asarray(samples).shape[-1]
    fund = _FundState.identity(mm)
    fund.extend(profile, t1)
    return _strip_shape(fund, t_grid, samples, valid, mask_eps)


# ---------------------------------------------------------------------------
# layer-stripping outer loop
# ---------------------------------------------------------------------------

def pick_window(r0: float, t_grid, samples, valid, k_bound: float,
                max_window: float = DEFAULT_MAX_WINDOW):
    """Index window [r0 + 4 dt, r0 + min(max_window, pi/(4 sqrt(K)))].

    The run is cut at the first masked node (backing off three stencil
    widths so the fit never leans on near-mask samples) and at the first
    node where |det S| collapses, which flags a K pole between this origin
    and the data.  Below the Rauch angle pi/(2 sqrt(K)) the determinant
    cannot vanish, so the cap leaves real margin.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dt = t_grid[1] - t_grid[0]
    cap = min(max_window, np.pi / (4.0 * np.sqrt(max(k_bound, 1e-300))))
    lo = r0 + 4.0 * dt - 1e-12
    hi = r0 + cap + 1e-12
    idx = np.flatnonzero((t_grid >= lo) & (t_grid <= hi))
    keep = []
    S = np.asarray(samples, dtype=float)
    ok = np.asarray(valid, dtype=bool)
    for i in idx:
        if not ok[i]:
            keep = keep[:max(0, len(keep) - MASK_MARGIN_NODES)]
            break
        if abs(np.linalg.det(S[i])) < DET_SPLIT_FLOOR:
            break
        keep.append(int(i))
    return np.asarray(keep, dtype=int)


def _grid_step(target: float, dr: float, strict: bool) -> float:
    if strict and target < dr:
        # the cap is finer than the output grid; honoring it wins over
        # keeping nodes grid-aligned
        return target
    n = (int(np.floor(target / dr + 1e-9)) if strict
         else int(round(target / dr)))
    return max(1, n) * dr


def reconstruct_along_geodesic(t_grid, samples, valid, r_max: float,
                               dr: float | None = None,
                               max_window: float = DEFAULT_MAX_WINDOW,
                               k_prior: float | None = None,
                               strict_step: bool = False,
                               restart_offsets=(),
                               declared_noise: float = 0.0,
                               mask_eps: float = DET_EPS) -> ReconstructionResult:
    """Recover the curvature profile R(r) on [0, r_max] from S(0, t) data.

    The loop alternates three moves: fit a V-state on the widest clean
    window above the current origin, march the closed system a fraction
    of that window (or the strict t2 cap), then slide the data origin to
    the march end by linear continuation and restart.  The curvature
    bound steering the window cap starts from a bootstrap estimate
    4 |R(origin)| (floored at 0.01) unless a prior is supplied, and only
    grows as larger curvature is met.

    restart_offsets forces joints at the given r values, which keeps
    different masking scenarios aligned when comparing runs.

    Raises WindowExhausted when no admissible window remains before
    r_max, reporting how far the march got; the exception carries the
    partial result (or None) as .partial and the last origin as .reached,
    so callers can still emit everything recovered up to the stall.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < MIN_WINDOW_NODES:
        raise InputError("need at least a window of t samples")
    dt_all = np.diff(t_grid)
    if np.max(np.abs(dt_all - dt_all[0])) > 1e-9:
        raise InputError("t_grid must be uniform")
    dt = float(dt_all[0])
    if dr is None:
        dr = dt
    samples0 = np.asarray(samples, dtype=float)
    valid0 = np.asarray(valid, dtype=bool)
    if samples0.shape[0] != len(t_grid) or valid0.shape[0] != len(t_grid):
        raise InputError("samples/valid length must match t_grid")
    mm = samples0.shape[-1]
    offsets = sorted(float(o) for o in restart_offsets)

    fund = _FundState.identity(mm)
    S_cur, valid_cur = samples0, valid0
    strips = [(0.0, samples0, valid0)]
    joints: list = []
    jumps: list = []
    r_cur = 0.0
    kb = k_prior
    prof_r: list = []
    prof_R: list = []

    def exhausted(reason: str):
        err = WindowExhausted(
            f"{reason} at r={r_cur:.6g} (reached {r_cur:.6g} of {r_max:.6g})")
        err.reached = r_cur
        err.partial = None
        if prof_r:
            err.partial = ReconstructionResult(
                profile=CurvatureProfile(r_grid=np.asarray(prof_r),
                                         R=np.stack(prof_R)),
                joints=joints, joint_jumps=jumps, strips=strips,
                k_bound=float(kb if kb is not None else 0.0))
        return err

    while r_cur < r_max - 1e-9:
        win = pick_window(r_cur, t_grid, S_cur, valid_cur,
                          kb if kb is not None else 1.0, max_window)
        if len(win) < MIN_WINDOW_NODES:
            raise exhausted("no admissible data window")
        V = initial_vstate(t_grid, S_cur, win, r=r_cur,
                           declared_noise=declared_noise)
        if kb is None:
            # bootstrap: the window cap needs a curvature scale before the
            # first march, so read it off the first diagonal sample
            kb = max(4.0 * np.linalg.norm(diag_eval(V) / 2.0, 2), 1e-2)
            win = pick_window(r_cur, t_grid, S_cur, valid_cur, kb, max_window)
            if len(win) < MIN_WINDOW_NODES:
                raise exhausted("no admissible data window after bootstrap")
            V = initial_vstate(t_grid, S_cur, win, r=r_cur,
                               declared_noise=declared_noise)

        control = step_bound(kb, 2.0 * V.norm_y() + 1.0)
        w_len = V.t_grid[-1] - r_cur
        target = control.t2 if strict_step else 0.6 * w_len
        target = min(target, r_max - r_cur)
        nxt = next((o for o in offsets if o > r_cur + 1e-9), None)
        if nxt is not None:
            target = min(target, nxt - r_cur)
        step = _grid_step(target, dr, strict_step)
        _, seg = march_vsystem(V, (r_cur, r_cur + step), dr,
                               control if strict_step else None)

        if prof_r:
            jumps.append(float(np.abs(seg.R[0] - prof_R[-1]).max()))
            joints.append(r_cur)
            prof_r.extend(seg.r_grid[1:])
            prof_R.extend(seg.R[1:])
        else:
            prof_r.extend(seg.r_grid)
            prof_R.extend(seg.R)

        r_cur = float(seg.r_grid[-1])
        kb = max(kb, 4.0 * np.linalg.norm(seg.R[-1], 2))
        if r_cur >= r_max - 1e-9:
            break
        fund.extend(seg, r_cur)
        S_cur, valid_cur = _strip_shape(fund, t_grid, samples0, valid0,
                                        mask_eps)
        strips.append((r_cur, S_cur, valid_cur))

    profile = CurvatureProfile(r_grid=np.asarray(prof_r),
                               R=np.stack(prof_R))
    return ReconstructionResult(profile=profile, joints=joints,
                                joint_jumps=jumps, strips=strips,
                                k_bound=float(kb if kb is not None else 0.0))
