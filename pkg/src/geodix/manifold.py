"""Riemannian metric fields on a single chart, with curvature tensors.

A metric field is a small parametric object: a named kind from the catalog
plus parameters, a box domain, and a derivative mode.  Everything downstream
(geodesics, wavefront data, inversion) consumes metrics only through
``eval_metric``, ``christoffel``, ``riemann`` and ``directional_curvature``,
so alternative charts or kinds can be added without touching the solvers.

Catalog kinds
-------------
euclidean              identity metric on a box
constant_curvature     polar model chart of the sphere (kappa > 0),
                       hyperbolic plane/space (kappa < 0) or flat polar
conformal              g = c(x)^-2 I with a Gaussian lens profile c
depth_profile          g = v(z)^-2 I, wave speed linear in the last coordinate
anisotropic_diagonal   g = diag(a_1(x) .. a_n(x)), Gaussian bump per entry

Index conventions: ``dmetric(x)[l, j, k]`` is the partial of g_jk along
coordinate l; ``d2metric(x)[a, b, j, k]`` the second partial.  The Riemann
tensor follows

    R^i_jkl = d_k Gamma^i_jl - d_l Gamma^i_jk
              + Gamma^p_jl Gamma^i_pk - Gamma^p_jk Gamma^i_pl

and the curvature operator in direction v is A^i_k = R^i_jkl v^j v^l, so
A v = 0 identically and eigenvalues of A on v-orthogonal vectors are
sectional curvatures.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetric, DomainError, InputError, ZeroVector

EIG_FLOOR = 1e-12          # positive definiteness threshold
DEFAULT_FD_STEP = 1e-5     # central difference step for mode="fd"

KINDS = ("euclidean", "constant_curvature", "conformal", "depth_profile",
         "anisotropic_diagonal")


@dataclass
class MetricField:
    """A parametric metric on a box chart.

    Attributes
    ----------
    kind : str
        Catalog kind name.
    dim : int
        Chart dimension n (2 or 3).
    params : dict
        Kind-specific parameters, plain floats and lists only so the
        object serializes and pickles cleanly.
    bounds : ndarray, shape (n, 2)
        Chart domain, per-axis [lo, hi].
    mode : str
        "analytic" uses closed-form metric derivatives, "fd" replaces them
        with central finite differences of the metric values.
    fd_step : float
        Step for mode="fd".
    """
    kind: str
    dim: int
    params: dict
    bounds: np.ndarray
    mode: str = "analytic"
    fd_step: float = DEFAULT_FD_STEP

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float)
        if self.kind not in KINDS:
            raise InputError(f"unknown metric kind {self.kind!r}")
        if self.bounds.shape != (self.dim, 2):
            raise InputError("bounds must have shape (dim, 2)")
        if self.mode not in ("analytic", "fd"):
            raise InputError(f"unknown derivative mode {self.mode!r}")

    # the heavy lifting is dispatched on kind by module-level functions so
    # the dataclass stays a plain data carrier
    def metric(self, x):
        return _metric_value(self, np.asarray(x, dtype=float))

    def dmetric(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "fd":
            return _fd_dmetric(self, x)
        return _metric_d1(self, x)

    def d2metric(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "fd":
            return _fd_d2metric(self, x)
        return _metric_d2(self, x)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.bounds[:, 0]) and np.all(x <= self.bounds[:, 1]))

    def boundary_margin(self, x) -> float:
        """Signed distance to the box boundary (positive inside)."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.bounds[:, 0]), np.min(self.bounds[:, 1] - x)))


@dataclass
class CurvatureTensors:
    """Riemann tensor at a point, both index positions."""
    point: np.ndarray
    up: np.ndarray       # R^i_jkl, shape (n, n, n, n)
    low: np.ndarray      # R_ijkl = g_ip R^p_jkl


# ---------------------------------------------------------------------------
# catalog constructors
# ---------------------------------------------------------------------------

def euclidean(dim: int, half_width: float = 8.0) -> MetricField:
    b = np.array([[-half_width, half_width]] * dim, dtype=float)
    return MetricField("euclidean", dim, {}, b)


def constant_curvature(kappa: float, dim: int, rho_min: float = 0.15,
                       rho_margin: float = 0.15, phi_span: float = 1e6) -> MetricField:
    """Polar model chart of the constant curvature space.

    Coordinates are (rho, phi) for n=2 and (rho, theta, phi) for n=3 with

        g = d rho^2 + s(rho)^2 d phi^2                      (n=2)
        g = d rho^2 + s(rho)^2 (d theta^2 + sin^2 theta d phi^2)

    where s = sin(sqrt(kappa) rho)/sqrt(kappa) for kappa > 0, the sinh
    analogue for kappa < 0 and s = rho for kappa = 0.  The radial axis stays
    clear of the coordinate singularities at rho = 0 (and rho = pi/sqrt(kappa)
    on the sphere); phi is treated as unbounded, i.e. the chart lives on the
    universal cover of the punctured model space.
    """
    if kappa > 0:
        rho_hi = np.pi / np.sqrt(kappa) - rho_margin
    else:
        rho_hi = 25.0
    if rho_hi <= rho_min:
        raise InputError("empty radial domain for this kappa / margin")
    rows = [[rho_min, rho_hi]]
    if dim == 3:
        rows.append([rho_min, np.pi - rho_margin])   # theta
    rows.append([-phi_span, phi_span])               # phi
    return MetricField("constant_curvature", dim, {"kappa": float(kappa)},
                       np.array(rows, dtype=float))


def conformal(dim: int, c0: float = 1.0, amp: float = -0.4,
              center=None, width2: float = 1.0, half_width: float = 8.0) -> MetricField:
    """Isotropic wave-speed metric g = c(x)^-2 I with a Gaussian lens.

    c(x) = c0 + amp * exp(-|x - center|^2 / width2).  amp < 0 gives a slow
    (focusing) lens.  c must stay positive on the box.
    """
    if center is None:
        center = [0.0] * dim
    p = {"c0": float(c0), "amp": float(amp),
         "center": [float(v) for v in center], "width2": float(width2)}
    if c0 <= 0 or c0 + min(amp, 0.0) <= 0:
        raise InputError("wave speed must stay positive")
    b = np.array([[-half_width, half_width]] * dim, dtype=float)
    return MetricField("conformal", dim, p, b)


def depth_profile(dim: int, v0: float = 1.0, grad: float = 0.3,
                  half_width: float = 8.0) -> MetricField:
    """g = v(z)^-2 I with v linear in the last coordinate (depth)."""
    if v0 <= 0:
        raise InputError("v0 must be positive")
    b = np.array([[-half_width, half_width]] * dim, dtype=float)
    if grad != 0.0:
        # keep v >= 0.1 * v0 on the box
        z_floor = (0.1 * v0 - v0) / grad
        if grad > 0:
            b[-1, 0] = max(b[-1, 0], z_floor)
        else:
            b[-1, 1] = min(b[-1, 1], z_floor)
    return MetricField("depth_profile", dim, {"v0": float(v0), "grad": float(grad)}, b)


def anisotropic_diagonal(dim: int, base=None, amp=None, center=None,
                         width2: float = 1.5, half_width: float = 8.0) -> MetricField:
    """Diagonal metric g = diag(a_i(x)), a_i = base_i + amp_i * Gaussian."""
    if base is None:
        base = [1.0 + 0.3 * i for i in range(dim)]
    if amp is None:
        amp = [0.3 if i % 2 == 0 else -0.2 for i in range(dim)]
    if center is None:
        center = [0.0] * dim
    base = [float(v) for v in base]
    amp = [float(v) for v in amp]
    if any(b + min(a, 0.0) <= 0 for b, a in zip(base, amp)):
        raise InputError("diagonal entries must stay positive")
    p = {"base": base, "amp": amp, "center": [float(v) for v in center],
         "width2": float(width2)}
    b = np.array([[-half_width, half_width]] * dim, dtype=float)
    return MetricField("anisotropic_diagonal", dim, p, b)


def from_config(cfg: dict) -> MetricField:
    """Build a catalog metric from a config mapping {kind, dim, params...}."""
    if "kind" not in cfg or "dim" not in cfg:
        raise InputError("metric config needs 'kind' and 'dim'")
    kind, dim = cfg["kind"], int(cfg["dim"])
    params = dict(cfg.get("params", {}))
    mode = cfg.get("mode", "analytic")
    builders = {
        "euclidean": euclidean,
        "constant_curvature": constant_curvature,
        "conformal": conformal,
        "depth_profile": depth_profile,
        "anisotropic_diagonal": anisotropic_diagonal,
    }
    if kind not in builders:
        raise InputError(f"unknown metric kind {kind!r}")
    m = builders[kind](dim=dim, **params)
    m.mode = mode
    if "fd_step" in cfg:
        m.fd_step = float(cfg["fd_step"])
    return m


def to_config(m: MetricField) -> dict:
    cfg = {"kind": m.kind, "dim": m.dim, "params": dict(m.params)}
    if m.mode != "analytic":
        cfg["mode"] = m.mode
    return cfg


# ---------------------------------------------------------------------------
# metric values and derivatives per kind
# ---------------------------------------------------------------------------

def _gaussian_profile(x, center, width2, base, amp):
    """value, gradient and Hessian of base + amp*exp(-|x-c|^2/w2)."""
    d = x - np.asarray(center)
    e = np.exp(-(d @ d) / width2)
    val = base + amp * e
    grad = amp * e * (-2.0 / width2) * d
    hess = amp * e * (4.0 / width2 ** 2 * np.outer(d, d)
                      - 2.0 / width2 * np.eye(len(x)))
    return val, grad, hess


def _cc_radial(kappa, rho):
    """s(rho), s'(rho) with s'' = -kappa s.  Accepts scalar or array rho."""
    if kappa > 0:
        rk = np.sqrt(kappa)
        return np.sin(rk * rho) / rk, np.cos(rk * rho)
    if kappa < 0:
        rk = np.sqrt(-kappa)
        return np.sinh(rk * rho) / rk, np.cosh(rk * rho)
    return rho, np.ones_like(np.asarray(rho, dtype=float))


def _check_domain(m: MetricField, x):
    if x.shape != (m.dim,):
        raise InputError(f"expected point of dim {m.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("point has non-finite coordinates")
    if not m.contains(x):
        raise DomainError(f"point {x.tolist()} outside chart domain")


def _metric_value(m: MetricField, x):
    # no domain check here: integrators probe slightly past the boundary
    # while bracketing exit events, and the catalog formulas extend there
    n = m.dim
    if m.kind == "euclidean":
        return np.eye(n)
    if m.kind == "constant_curvature":
        s, _ = _cc_radial(m.params["kappa"], x[0])
        if n == 2:
            return np.diag([1.0, s * s])
        return np.diag([1.0, s * s, s * s * np.sin(x[1]) ** 2])
    if m.kind == "conformal":
        c, _, _ = _gaussian_profile(x, m.params["center"], m.params["width2"],
                                    m.params["c0"], m.params["amp"])
        return np.eye(n) / c ** 2
    if m.kind == "depth_profile":
        v = m.params["v0"] + m.params["grad"] * x[-1]
        return np.eye(n) / v ** 2
    # anisotropic_diagonal
    vals = [_gaussian_profile(x, m.params["center"], m.params["width2"],
                              m.params["base"][i], m.params["amp"][i])[0]
            for i in range(n)]
    return np.diag(vals)


def _metric_d1(m: MetricField, x):
    """dg[l, j, k] = d_l g_jk, closed forms."""
    n = m.dim
    dg = np.zeros((n, n, n))
    if m.kind == "euclidean":
        return dg
    if m.kind == "constant_curvature":
        kappa = m.params["kappa"]
        s, ds = _cc_radial(kappa, x[0])
        dg[0, 1, 1] = 2.0 * s * ds
        if n == 3:
            st, ct = np.sin(x[1]), np.cos(x[1])
            dg[0, 2, 2] = 2.0 * s * ds * st * st
            dg[1, 2, 2] = 2.0 * s * s * st * ct
        return dg
    if m.kind in ("conformal", "depth_profile"):
        c, gc, _ = _speed_profile(m, x)
        for l in range(n):
            dg[l] = (-2.0 * gc[l] / c ** 3) * np.eye(n)
        return dg
    # anisotropic_diagonal
    for i in range(n):
        _, grad, _ = _gaussian_profile(x, m.params["center"], m.params["width2"],
                                       m.params["base"][i], m.params["amp"][i])
        dg[:, i, i] = grad
    return dg


def _metric_d2(m: MetricField, x):
    """d2g[a, b, j, k] = d_a d_b g_jk, closed forms."""
    n = m.dim
    d2 = np.zeros((n, n, n, n))
    if m.kind == "euclidean":
        return d2
    if m.kind == "constant_curvature":
        kappa = m.params["kappa"]
        s, ds = _cc_radial(kappa, x[0])
        dss = -kappa * s
        d2[0, 0, 1, 1] = 2.0 * (ds * ds + s * dss)
        if n == 3:
            st, ct = np.sin(x[1]), np.cos(x[1])
            d2[0, 0, 2, 2] = 2.0 * (ds * ds + s * dss) * st * st
            d2[0, 1, 2, 2] = d2[1, 0, 2, 2] = 4.0 * s * ds * st * ct
            d2[1, 1, 2, 2] = 2.0 * s * s * (ct * ct - st * st)
        return d2
    if m.kind in ("conformal", "depth_profile"):
        c, gc, hc = _speed_profile(m, x)
        eye = np.eye(n)
        for a in range(n):
            for b in range(n):
                coef = 6.0 * gc[a] * gc[b] / c ** 4 - 2.0 * hc[a, b] / c ** 3
                d2[a, b] = coef * eye
        return d2
    # anisotropic_diagonal
    for i in range(n):
        _, _, hess = _gaussian_profile(x, m.params["center"], m.params["width2"],
                                       m.params["base"][i], m.params["amp"][i])
        d2[:, :, i, i] = hess
    return d2


def _speed_profile(m: MetricField, x):
    """c(x), grad c, Hess c for the isotropic kinds."""
    if m.kind == "conformal":
        return _gaussian_profile(x, m.params["center"], m.params["width2"],
                                 m.params["c0"], m.params["amp"])
    v = m.params["v0"] + m.params["grad"] * x[-1]
    g = np.zeros(m.dim)
    g[-1] = m.params["grad"]
    return v, g, np.zeros((m.dim, m.dim))


# ---------------------------------------------------------------------------
# finite-difference derivative mode
# ---------------------------------------------------------------------------

def _fd_dmetric(m: MetricField, x):
    n, h = m.dim, m.fd_step
    dg = np.empty((n, n, n))
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        dg[l] = (_metric_value(m, x + e) - _metric_value(m, x - e)) / (2.0 * h)
    return dg


def _fd_d2metric(m: MetricField, x):
    """Richardson-extrapolated central second differences."""
    # roundoff in a second difference grows like eps/h^2, so the step must
    # be much larger than the first-derivative one; sqrt(fd_step) lands near
    # the optimum for the extrapolated stencil
    n, h = m.dim, np.sqrt(m.fd_step)

    def second(a, b, step):
        ea = np.zeros(n); ea[a] = step
        eb = np.zeros(n); eb[b] = step
        if a == b:
            return (_metric_value(m, x + ea) - 2.0 * _metric_value(m, x)
                    + _metric_value(m, x - ea)) / step ** 2
        return (_metric_value(m, x + ea + eb) - _metric_value(m, x + ea - eb)
                - _metric_value(m, x - ea + eb) + _metric_value(m, x - ea - eb)
                ) / (4.0 * step ** 2)

    d2 = np.empty((n, n, n, n))
    for a in range(n):
        for b in range(a, n):
            coarse = second(a, b, h)
            fine = second(a, b, h / 2.0)
            val = (4.0 * fine - coarse) / 3.0
            d2[a, b] = val
            d2[b, a] = val
    return d2


# ---------------------------------------------------------------------------
# public tensor operations
# ---------------------------------------------------------------------------

def eval_metric(m: MetricField, x):
    """Metric and inverse metric at x.

    Returns
    -------
    (g, g_inv) : pair of (n, n) arrays

    Raises
    ------
    DomainError
        x outside the chart box.
    DegenerateMetric
        smallest eigenvalue of g below 1e-12.
    """
    x = np.asarray(x, dtype=float)
    _check_domain(m, x)
    g = m.metric(x)
    w = np.linalg.eigvalsh(g)
    if w.min() < EIG_FLOOR:
        raise DegenerateMetric(f"metric eigenvalue {w.min():.3e} at {np.asarray(x).tolist()}")
    return g, np.linalg.inv(g)


def christoffel(m: MetricField, x):
    """Christoffel symbols Gamma[i, j, k] = Gamma^i_jk at x."""
    g, g_inv = eval_metric(m, x)
    dg = m.dmetric(x)
    # d_k g_jp + d_j g_kp - d_p g_jk, arranged with p first
    t = np.einsum("kjp->pjk", dg) + np.einsum("jkp->pjk", dg) - dg
    return 0.5 * np.einsum("ip,pjk->ijk", g_inv, t)


def _dchristoffel(m: MetricField, x):
    """dGamma[l, i, j, k] = d_l Gamma^i_jk."""
    g, g_inv = eval_metric(m, x)
    dg = m.dmetric(x)
    d2g = m.d2metric(x)
    t = (np.einsum("kjp->pjk", dg) + np.einsum("jkp->pjk", dg) - dg)
    # d_l of the bracket, same arrangement with leading l
    dt = (np.einsum("lkjp->lpjk", d2g) + np.einsum("ljkp->lpjk", d2g)
          - np.einsum("lpjk->lpjk", d2g))
    # d_l g^ip = -g^ia (d_l g_ab) g^bp
    dginv = -np.einsum("ia,lab,bp->lip", g_inv, dg, g_inv)
    return 0.5 * (np.einsum("lip,pjk->lijk", dginv, t)
                  + np.einsum("ip,lpjk->lijk", g_inv, dt))


def riemann(m: MetricField, x) -> CurvatureTensors:
    """Riemann curvature tensor at x (see module docstring for conventions)."""
    x = np.asarray(x, dtype=float)
    g, _ = eval_metric(m, x)
    gam = christoffel(m, x)
    dgam = _dchristoffel(m, x)
    up = (np.einsum("kijl->ijkl", dgam) - np.einsum("lijk->ijkl", dgam)
          + np.einsum("pjl,ipk->ijkl", gam, gam)
          - np.einsum("pjk,ipl->ijkl", gam, gam))
    low = np.einsum("ip,pjkl->ijkl", g, up)
    return CurvatureTensors(point=x, up=up, low=low)


def directional_curvature(m: MetricField, x, v):
    """Curvature operator A = R(., v)v as an (n, n) matrix, A^i_k = R^i_jkl v^j v^l.

    Raises ZeroVector when |v|_g < 1e-12.  A annihilates v itself and its
    restriction to the g-orthogonal complement of v is g-self-adjoint.
    """
    v = np.asarray(v, dtype=float)
    g, _ = eval_metric(m, x)
    if np.sqrt(max(v @ g @ v, 0.0)) < 1e-12:
        raise ZeroVector("direction has near-zero length")
    R = riemann(m, x).up
    return np.einsum("ijkl,j,l->ik", R, v, v)


def norm(m: MetricField, x, v) -> float:
    g, _ = eval_metric(m, x)
    return float(np.sqrt(max(np.asarray(v) @ g @ np.asarray(v), 0.0)))


def unit_vector(m: MetricField, x, v):
    """Rescale v to unit g-length."""
    nv = norm(m, x, v)
    if nv < 1e-12:
        raise ZeroVector("cannot normalize a near-zero vector")
    return np.asarray(v, dtype=float) / nv


def sectional_curvature(m: MetricField, x, u, v) -> float:
    """Sectional curvature of span(u, v) at x."""
    g, _ = eval_metric(m, x)
    low = riemann(m, x).low
    num = np.einsum("ijkl,i,j,k,l->", low, u, v, u, v)
    den = (u @ g @ u) * (v @ g @ v) - (u @ g @ v) ** 2
    if abs(den) < 1e-14:
        raise ZeroVector("u, v do not span a plane")
    return float(num / den)


# ---------------------------------------------------------------------------
# batched evaluation over many points at once
# ---------------------------------------------------------------------------
# Used by the geodesic integrators when a whole fan of rays advances in one
# ODE state.  No domain or definiteness guards here: exit events own the
# boundary, and the catalog formulas extend smoothly a little past it.

def _gaussian_profile_batch(X, center, width2, base, amp):
    d = X - np.asarray(center)
    e = np.exp(-np.sum(d * d, axis=1) / width2)
    val = base + amp * e
    grad = (amp * e * (-2.0 / width2))[:, None] * d
    hess = (amp * e)[:, None, None] * (
        (4.0 / width2 ** 2) * np.einsum("ki,kj->kij", d, d)
        - (2.0 / width2) * np.eye(X.shape[1]))
    return val, grad, hess


def _speed_profile_batch(m, X):
    if m.kind == "conformal":
        return _gaussian_profile_batch(X, m.params["center"], m.params["width2"],
                                       m.params["c0"], m.params["amp"])
    v = m.params["v0"] + m.params["grad"] * X[:, -1]
    g = np.zeros_like(X)
    g[:, -1] = m.params["grad"]
    return v, g, np.zeros((X.shape[0], m.dim, m.dim))


def metric_batch(m: MetricField, X):
    """Metric at each row of X; returns (K, n, n)."""
    X = np.asarray(X, dtype=float)
    K, n = X.shape
    if m.kind == "euclidean":
        return np.broadcast_to(np.eye(n), (K, n, n)).copy()
    if m.kind == "constant_curvature":
        s, _ = _cc_radial(m.params["kappa"], X[:, 0])
        g = np.zeros((K, n, n))
        g[:, 0, 0] = 1.0
        g[:, 1, 1] = s * s
        if n == 3:
            g[:, 2, 2] = s * s * np.sin(X[:, 1]) ** 2
        return g
    if m.kind in ("conformal", "depth_profile"):
        c, _, _ = _speed_profile_batch(m, X)
        return np.einsum("k,ij->kij", c ** -2.0, np.eye(n))
    g = np.zeros((K, n, n))
    for i in range(n):
        val, _, _ = _gaussian_profile_batch(X, m.params["center"], m.params["width2"],
                                            m.params["base"][i], m.params["amp"][i])
        g[:, i, i] = val
    return g


def dmetric_batch(m: MetricField, X):
    """First metric derivatives at each row of X; returns (K, n, n, n)."""
    X = np.asarray(X, dtype=float)
    K, n = X.shape
    dg = np.zeros((K, n, n, n))
    if m.kind == "euclidean":
        return dg
    if m.kind == "constant_curvature":
        kappa = m.params["kappa"]
        s, ds = _cc_radial(kappa, X[:, 0])
        dg[:, 0, 1, 1] = 2.0 * s * ds
        if n == 3:
            st, ct = np.sin(X[:, 1]), np.cos(X[:, 1])
            dg[:, 0, 2, 2] = 2.0 * s * ds * st * st
            dg[:, 1, 2, 2] = 2.0 * s * s * st * ct
        return dg
    if m.kind in ("conformal", "depth_profile"):
        c, gc, _ = _speed_profile_batch(m, X)
        return np.einsum("kl,ij->klij", -2.0 * gc / (c ** 3)[:, None], np.eye(n))
    for i in range(n):
        _, grad, _ = _gaussian_profile_batch(X, m.params["center"], m.params["width2"],
                                             m.params["base"][i], m.params["amp"][i])
        dg[:, :, i, i] = grad
    return dg


def christoffel_batch(m: MetricField, X):
    """Christoffel symbols at each row of X; returns (K, n, n, n), axes (b, i, j, k)."""
    g = metric_batch(m, X)
    dg = dmetric_batch(m, X)
    g_inv = np.linalg.inv(g)
    t = (np.einsum("bkjp->bpjk", dg) + np.einsum("bjkp->bpjk", dg) - dg)
    return 0.5 * np.einsum("bip,bpjk->bijk", g_inv, t)
