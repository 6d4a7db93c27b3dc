"""Geometry of a region from unlabeled samples of metric spheres.

Each observed surface is a metric sphere of known radius t whose center is
withheld: the data are sampled points with unit normals, and nothing links
a sample to the sphere it came from beyond the per-surface grouping.  Two
points on one sphere of radius t are joined by a path of length at most 2t
through the hidden center, so hop chains across overlapping spheres bound
the distance between any two covered points from above, and the bound
tightens as the family densifies.  Everything else is built on top of that
one primitive: chain distances to fixed landmarks give local coordinates,
pairwise chain distances of a probe cloud give a least-squares metric at a
point, and a focusing test along the normal flow recovers which side of a
surface faces its hidden center.

Graph queries and orientation tests are read-only after the one-time graph
build, so callers may issue them from parallel workers freely.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from . import geodesics, manifold
from .errors import (DegenerateLandmarks, Disconnected, DomainError,
                     IllConditioned, InputError, InsufficientSamples,
                     SnapError)
from .forward import SphericalSurfaceSample

FAMILY_SUFFIX = ".json"
TRUTH_SUFFIX = ".truth.json"
COND_LIMIT = 1e3
FIT_COND_LIMIT = 1e8


@dataclass
class SurfaceFamily:
    """Unlabeled sphere samples inside a box region.

    surfaces : list of SphericalSurfaceSample; hidden centers are never read
        by any operation here (they exist only for test sidecars).
    region : (n, 2) box that must contain every sampled point.
    """
    surfaces: list
    region: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.region = np.atleast_2d(np.asarray(self.region, dtype=float))
        if not self.surfaces:
            raise InputError("family needs at least one surface")
        n = self.region.shape[0]
        for j, s in enumerate(self.surfaces):
            pts = np.asarray(s.points, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != n:
                raise InputError(f"surface {j}: points must be (P, {n})")
            lo_ok = np.all(pts >= self.region[:, 0] - 1e-12)
            hi_ok = np.all(pts <= self.region[:, 1] + 1e-12)
            if not (lo_ok and hi_ok):
                raise InputError(f"surface {j} has samples outside the region")

    @property
    def dim(self) -> int:
        return self.region.shape[0]


# ---------------------------------------------------------------------------
# hop graph
# ---------------------------------------------------------------------------

@dataclass
class _HopGraph:
    tree: cKDTree
    node_of: np.ndarray         # sample index -> graph node
    csr: csr_matrix
    nn_median: float
    merge_radius: float


def _nn_median(tree: cKDTree, pts: np.ndarray, rng_cap: int = 2000) -> float:
    sub = pts if len(pts) <= rng_cap else pts[:: max(1, len(pts) // rng_cap)]
    d, _ = tree.query(sub, k=2)
    return float(np.median(d[:, 1]))


def _cross_nn_median(tree, pts, owner, rng_cap: int = 1500) -> float:
    """Median distance from a sample to the nearest sample of another surface."""
    step = max(1, len(pts) // rng_cap)
    sub = np.arange(0, len(pts), step)
    k = min(len(pts), 24)
    d, idx = tree.query(pts[sub], k=k)
    best = np.full(len(sub), np.inf)
    for col in range(1, k):
        hit = (owner[idx[:, col]] != owner[sub]) & ~np.isfinite(best)
        best[hit] = d[hit, col]
    finite = best[np.isfinite(best)]
    if finite.size == 0:
        raise Disconnected("no sample has a neighbor on another surface")
    return float(np.median(finite))


def _build_graph(fam: SurfaceFamily, merge_radius) -> _HopGraph:
    pts = np.vstack([np.asarray(s.points, dtype=float) for s in fam.surfaces])
    counts = [len(s.points) for s in fam.surfaces]
    owner = np.repeat(np.arange(len(counts)), counts)
    tree = cKDTree(pts)
    if merge_radius is None:
        # a lone surface has nothing to link to; any radius works
        merge_radius = (0.0 if len(fam.surfaces) == 1
                        else _cross_nn_median(tree, pts, owner))
    merge_radius = float(merge_radius)

    # one star node per surface, spokes of weight t: two samples joined
    # through a star are 2t apart, which is the chain hop weight.  A sample
    # lying within merge_radius of another surface's sample counts as a
    # point of that surface too, so it gets a spoke to the second star;
    # chains can then switch surfaces only by paying full hops, never by
    # creeping through close pairs for free.
    n_pts = len(pts)
    radii = np.array([s.t for s in fam.surfaces], dtype=float)
    rows = [np.arange(n_pts)]
    cols = [n_pts + owner]
    w = [radii[owner]]

    pairs = tree.query_pairs(merge_radius, output_type="ndarray")
    if len(pairs):
        a, b = pairs[:, 0], pairs[:, 1]
        cross = owner[a] != owner[b]
        a, b = a[cross], b[cross]
        rows.append(np.concatenate([a, b]))
        cols.append(n_pts + np.concatenate([owner[b], owner[a]]))
        w.append(radii[np.concatenate([owner[b], owner[a]])])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = np.concatenate(w)

    order = np.lexsort((w, cols, rows))
    rows, cols, w = rows[order], cols[order], w[order]
    keep = np.ones(len(rows), dtype=bool)
    keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    n_nodes = n_pts + len(counts)
    csr = csr_matrix((w[keep], (rows[keep], cols[keep])),
                     shape=(n_nodes, n_nodes))
    return _HopGraph(tree=tree, node_of=np.arange(n_pts), csr=csr,
                     nn_median=_nn_median(tree, pts),
                     merge_radius=merge_radius)


def _graph(fam: SurfaceFamily, merge_radius=None) -> _HopGraph:
    key = ("graph", None if merge_radius is None else float(merge_radius))
    if key not in fam._cache:
        fam._cache[key] = _build_graph(fam, merge_radius)
    return fam._cache[key]


def _snap(gr: _HopGraph, x, snap_radius) -> int:
    x = np.asarray(x, dtype=float)
    d, i = gr.tree.query(x)
    if snap_radius is None:
        snap_radius = 4.0 * max(gr.merge_radius, gr.nn_median)
    if d > snap_radius:
        raise SnapError(f"nearest sample is {d:.4g} away, beyond the snap "
                        f"radius {snap_radius:.4g}")
    return int(gr.node_of[i])


def _dists_from(fam, x, merge_radius, snap_radius) -> np.ndarray:
    gr = _graph(fam, merge_radius)
    src = _snap(gr, x, snap_radius)
    return dijkstra(gr.csr, directed=False, indices=src)


def chain_distance(fam: SurfaceFamily, x, z, merge_radius=None,
                   snap_radius=None) -> float:
    """Shortest hop-chain weight between x and z, an upper distance bound.

    x and z snap to their nearest samples; consecutive chain points share a
    surface of radius t and contribute 2t.  Samples of different surfaces
    closer than merge_radius count as shared points (default: the median
    nearest cross-surface spacing, so the graph just connects).
    """
    gr = _graph(fam, merge_radius)
    src = _snap(gr, x, snap_radius)
    dst = _snap(gr, z, snap_radius)
    d = dijkstra(gr.csr, directed=False, indices=src, min_only=False)[dst]
    if not np.isfinite(d):
        raise Disconnected("no chain of overlapping surfaces joins x and z")
    return float(d)


def distance_coordinates(fam: SurfaceFamily, x, landmarks, step=None,
                         merge_radius=None, snap_radius=None,
                         cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Chain distances to n landmarks, checked to be local coordinates.

    The map y -> (d(y, z_1), ..., d(y, z_n)) is probed by finite differences
    of size step (default three nearest-neighbor spacings, below which the
    snapped distances are piecewise constant) around x; a sampled Jacobian
    with condition number above cond_limit raises DegenerateLandmarks.
    """
    x = np.asarray(x, dtype=float)
    landmarks = np.atleast_2d(np.asarray(landmarks, dtype=float))
    n = fam.dim
    if landmarks.shape != (n, n):
        raise InputError(f"need exactly {n} landmarks of dimension {n}")
    gr = _graph(fam, merge_radius)
    per_lm = [_dists_from(fam, z, merge_radius, snap_radius)
              for z in landmarks]
    coords = np.array([d[_snap(gr, x, snap_radius)] for d in per_lm])
    if not np.all(np.isfinite(coords)):
        raise Disconnected("a landmark is not chain-connected to x")

    if step is None:
        step = 3.0 * gr.nn_median
    jac = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        hi = [d[_snap(gr, x + e, snap_radius)] for d in per_lm]
        lo = [d[_snap(gr, x - e, snap_radius)] for d in per_lm]
        jac[:, i] = (np.array(hi) - np.array(lo)) / (2.0 * step)
    if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > cond_limit:
        raise DegenerateLandmarks("sampled distance-coordinate Jacobian is "
                                  "degenerate near x")
    return coords


def estimate_metric_from_distances(fam: SurfaceFamily, x, cloud,
                                   landmarks=None, merge_radius=None,
                                   snap_radius=None) -> np.ndarray:
    """Least-squares metric at x from pairwise chain distances of a cloud.

    Fits d(y, y')^2 ~ g_ij (y - y')^i (y - y')^j over all probe pairs.  The
    probe coordinates are the chart positions of the cloud by default
    (validation mode); passing landmarks switches to the distance
    coordinates those landmarks induce, so the result is expressed in the
    chart an observer could actually build.
    """
    x = np.asarray(x, dtype=float)
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    n = fam.dim
    if cloud.shape[0] < n * (n + 1):
        raise InsufficientSamples(f"need at least {n * (n + 1)} probe points,"
                                  f" got {cloud.shape[0]}")
    gr = _graph(fam, merge_radius)
    nodes = np.array([_snap(gr, y, snap_radius) for y in cloud])
    dmat = dijkstra(gr.csr, directed=False, indices=nodes)[:, nodes]

    if landmarks is None:
        coords = cloud
    else:
        landmarks = np.atleast_2d(np.asarray(landmarks, dtype=float))
        per_lm = np.array([_dists_from(fam, z, merge_radius, snap_radius)
                           for z in landmarks])
        coords = per_lm[:, nodes].T

    iu, ju = np.triu_indices(n)
    rows, rhs = [], []
    for a in range(len(cloud)):
        for b in range(a + 1, len(cloud)):
            if nodes[a] == nodes[b]:
                continue
            delta = coords[a] - coords[b]
            mono = delta[iu] * delta[ju]
            mono[iu != ju] *= 2.0
            rows.append(mono)
            rhs.append(dmat[a, b] ** 2)
    rows = np.asarray(rows)
    if rows.shape[0] < len(iu):
        raise InsufficientSamples("too few distinct probe pairs after snapping")
    sol, _, rank, sv = np.linalg.lstsq(rows, np.asarray(rhs), rcond=None)
    if rank < len(iu) or sv[0] / sv[-1] > FIT_COND_LIMIT:
        raise IllConditioned("probe cloud does not determine the quadratic "
                             "form (degenerate pair directions)")
    g = np.zeros((n, n))
    g[iu, ju] = sol
    g[ju, iu] = sol
    return g


# ---------------------------------------------------------------------------
# witness families
# ---------------------------------------------------------------------------

def chain_centers(m: manifold.MetricField, a, b, radius_range, rng):
    """Centers and radii of a tangent sphere chain along the segment a-b.

    Consecutive spheres touch at points of the segment and their diameters
    sum to the metric length of the segment, which is the configuration
    that attains the chain-distance infimum.  Placement walks the chart
    segment by metric arclength, so it is exact for metrics whose
    geodesics are chart-straight (euclidean, constant conformal factors)
    and a first-order surrogate otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo, hi = float(radius_range[0]), float(radius_range[1])
    # metric length of the chart segment by dense trapezoid
    q = np.linspace(0.0, 1.0, 257)
    seg = a[None, :] + q[:, None] * (b - a)[None, :]
    d_chart = np.linalg.norm(b - a)
    gseg = manifold.metric_batch(m, seg)
    tv = (b - a) / d_chart
    speed = np.sqrt(np.einsum("i,kij,j->k", tv, gseg, tv))
    length = float(np.trapezoid(speed, dx=d_chart / (len(q) - 1)))

    count = max(1, int(round(length / (lo + hi))))
    for _ in range(64):
        radii = rng.uniform(lo, hi, count)
        radii *= length / (2.0 * radii.sum())
        if lo <= radii.min() and radii.max() <= hi:
            break
    else:
        raise InputError("segment length incompatible with the radius range")
    arcs = np.empty(count)
    arcs[0] = radii[0]
    for j in range(1, count):
        arcs[j] = arcs[j - 1] + radii[j - 1] + radii[j]
    # invert arclength -> chart parameter on the dense segment table
    cum = np.concatenate([[0.0], np.cumsum(
        0.5 * (speed[1:] + speed[:-1]) * d_chart / (len(q) - 1))])
    params = np.interp(arcs, cum, q)
    centers = a[None, :] + params[:, None] * (b - a)[None, :]
    return centers, radii


def chain_witness_family(m: manifold.MetricField, pairs, region_bounds,
                         radius_range=(0.02, 0.05), pts_per_surface=48,
                         pad_to=None, pad_extra=0, pad_box=None, seed=0):
    """Family of tangent chains along given point pairs, plus padding.

    Returns (SurfaceFamily, centers, radii).  pad_to adds uniformly placed
    extra spheres inside pad_box until the family has exactly pad_to
    members, so a fixed surface budget can be honored; pad_extra instead
    adds that many on top of whatever the chains used.
    """
    rng = np.random.default_rng(seed)
    centers, radii = [], []
    for a, b in pairs:
        c, r = chain_centers(m, a, b, radius_range, rng)
        centers.append(c)
        radii.append(r)
    centers = np.vstack(centers)
    radii = np.concatenate(radii)
    if pad_to is not None and len(radii) > pad_to:
        raise InputError(f"chains already use {len(radii)} spheres, "
                         f"over the budget {pad_to}")
    extra = pad_extra if pad_to is None else pad_to - len(radii)
    if extra:
        box = np.atleast_2d(np.asarray(
            pad_box if pad_box is not None else region_bounds, dtype=float))
        pc = rng.uniform(box[:, 0], box[:, 1], size=(extra, box.shape[0]))
        pr = rng.uniform(radius_range[0], radius_range[1], size=extra)
        centers = np.vstack([centers, pc])
        radii = np.concatenate([radii, pr])
    from .forward import sample_surface_family
    surfaces = sample_surface_family(m, region_bounds, centers, radii,
                                     pts_per_surface=pts_per_surface,
                                     seed=seed + 1)
    fam = SurfaceFamily(surfaces=surfaces, region=region_bounds)
    return fam, centers, radii


# ---------------------------------------------------------------------------
# orientation of a surface
# ---------------------------------------------------------------------------

@dataclass
class OrientationResult:
    """Which unit normals at x0 flow like outward sphere normals.

    n1 : (k, n) passing normals (the membership set; k is 0, 1, or 2)
    center_direction : unit vector from x0 toward the hidden center when
        exactly one normal passes, else None
    foci : (k, n) estimated centers, one per passing normal
    spreads : per-candidate worst focus spread, keyed +1/-1 relative to
        the queried zeta0
    """
    n1: np.ndarray
    center_direction: np.ndarray | None
    foci: np.ndarray
    spreads: dict


def _flow_straight(g: np.ndarray, X, V, lengths):
    speeds = np.sqrt(np.einsum("ki,ij,kj->k", V, g, V))
    ends = X + (lengths / speeds)[:, None] * V
    return ends, V


def _flow_metric(m, X, V, lengths):
    speeds = np.sqrt(np.einsum("ki,kij,kj->k", V, manifold.metric_batch(m, X),
                               V))
    return geodesics.shoot_points(m, X, V / speeds[:, None], lengths)


def orientation_test(fam: SurfaceFamily, surface: SphericalSurfaceSample,
                     x0, zeta0, eps: float = 0.02, flow_steps: int = 2,
                     metric=None, eps_focus=None) -> OrientationResult:
    """Decide which of the normals +-zeta0 points away from the hidden center.

    Each candidate field is flowed by s in {+-eps, +-eps/2}; the flowed
    surface, were it a sphere of radius t+s, would focus at one point when
    its samples are shot inward (against the candidate) for t+s.  A
    candidate passes when every flow keeps the worst focus spread below
    eps_focus.  The true outward normal always passes; the opposite one
    lands on a sphere of diameter about 4t and fails, except in closed
    geometries where both flows focus (both normals are then members).

    metric selects how flow geodesics are shot: a MetricField integrates
    them exactly (validation mode), while an (n, n) matrix treats the
    metric as locally constant, which is what an
    estimate_metric_from_distances result gives (end-to-end mode).

    A candidate whose flow or backshot leaves the chart box cannot focus
    inside the region and fails outright, so keep the arc away from chart
    boundaries when both normals are expected to pass.
    """
    x0 = np.asarray(x0, dtype=float)
    zeta0 = np.asarray(zeta0, dtype=float)
    pts = np.asarray(surface.points, dtype=float)
    nrm = np.asarray(surface.normals, dtype=float)
    if len(pts) < 10:
        raise InsufficientSamples(f"surface has {len(pts)} samples near x0, "
                                  "need 10")
    t = float(surface.t)

    i0 = int(np.argmin(np.linalg.norm(pts - x0, axis=1)))
    s0 = 1.0 if float(nrm[i0] @ zeta0) >= 0.0 else -1.0
    zeta_at_x0 = s0 * nrm[i0]

    if metric is None:
        raise InputError("pass the ambient metric or an "
                         "estimate_metric_from_distances result")
    if isinstance(metric, manifold.MetricField):
        flow = lambda X, V, ell: _flow_metric(metric, X, V, ell)
    else:
        g_const = np.asarray(metric, dtype=float)
        flow = lambda X, V, ell: _flow_straight(g_const, X, V, ell)

    if eps_focus is None:
        d2, _ = cKDTree(pts).query(pts, k=2)
        nn = float(np.median(d2[:, 1]))
        # sagitta scale: radial wobble smaller than this is invisible at
        # the sampling density, so it is the effective noise floor
        eps_focus = 3.0 * (nn ** 2 / (8.0 * t) + 1e-9)

    s_values = [sg * eps / (2 ** k)
                for k in range(flow_steps) for sg in (1.0, -1.0)]
    spreads = {}
    foci = {}
    for cand in (1.0, -1.0):
        V = cand * s0 * nrm
        worst = 0.0
        focus = None
        for s in s_values:
            if t + s <= 0:
                raise InputError(f"flow step {s} exceeds the radius {t}")
            try:
                moved, vel = flow(pts, V, np.full(len(pts), abs(s)) * np.sign(s))
                ends, _ = flow(moved, -vel, np.full(len(pts), t + s))
            except DomainError:
                worst = np.inf
                break
            center = ends.mean(axis=0)
            worst = max(worst, float(np.max(
                np.linalg.norm(ends - center, axis=1))))
            focus = center
        spreads[int(cand)] = worst
        foci[int(cand)] = focus

    passing = [c for c in (1, -1) if spreads[c] <= eps_focus]
    n1 = np.array([c * zeta_at_x0 for c in passing]).reshape(-1, len(x0))
    center_direction = None
    if len(passing) == 1:
        d = -passing[0] * zeta_at_x0
        center_direction = d / np.linalg.norm(d)
    return OrientationResult(n1=n1, center_direction=center_direction,
                             foci=np.array([foci[c] for c in passing]
                                           ).reshape(-1, len(x0)),
                             spreads=spreads)


# ---------------------------------------------------------------------------
# family files
# ---------------------------------------------------------------------------

def save_family(surfaces, stem) -> str:
    """Write the family as a JSON list of {t, points, normals}.

    Hidden centers, when present, go to a separate <stem>.truth.json
    sidecar so the main file carries nothing an observer would not have.
    """
    if isinstance(surfaces, SurfaceFamily):
        surfaces = surfaces.surfaces
    stem = os.fspath(stem)
    if stem.endswith(FAMILY_SUFFIX):
        stem = stem[: -len(FAMILY_SUFFIX)]
    doc = [{"t": float(s.t),
            "points": np.asarray(s.points, dtype=float).tolist(),
            "normals": np.asarray(s.normals, dtype=float).tolist()}
           for s in surfaces]
    path = stem + FAMILY_SUFFIX
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    centers = [s.hidden_center for s in surfaces]
    if any(c is not None for c in centers):
        side = {"centers": [None if c is None
                            else np.asarray(c, dtype=float).tolist()
                            for c in centers]}
        with open(stem + TRUTH_SUFFIX, "w") as fh:
            json.dump(side, fh, sort_keys=True, indent=1)
            fh.write("\n")
    return path


def load_family(path, region=None) -> SurfaceFamily:
    """Read a family file; region defaults to the samples' bounding box."""
    path = os.fspath(path)
    if not path.endswith(FAMILY_SUFFIX):
        path = path + FAMILY_SUFFIX
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, list) or not doc or not all(
            isinstance(e, dict) and {"t", "points", "normals"} <= set(e)
            for e in doc):
        raise InputError(f"not a surface family file: {path}")
    surfaces = [SphericalSurfaceSample(
        t=float(e["t"]),
        points=np.asarray(e["points"], dtype=float),
        normals=np.asarray(e["normals"], dtype=float)) for e in doc]
    if region is None:
        pts = np.vstack([s.points for s in surfaces])
        region = np.column_stack([pts.min(axis=0), pts.max(axis=0)])
    return SurfaceFamily(surfaces=surfaces, region=region)


def load_truth_sidecar(path) -> list:
    """Hidden centers from the sidecar next to a family file (tests only)."""
    path = os.fspath(path)
    if path.endswith(FAMILY_SUFFIX):
        path = path[: -len(FAMILY_SUFFIX)]
    with open(path + TRUTH_SUFFIX) as fh:
        side = json.load(fh)
    return [None if c is None else np.asarray(c, dtype=float)
            for c in side["centers"]]
