"""Release gate: ten end-to-end checks, one printed verdict line each.

Every threshold here is pinned; run with -s to watch the verdict lines.
The heavy artifacts (pipeline runs, the sphere march, the disk family)
are built once and shared between gates.
"""
import dataclasses
import json
import os
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.interpolate import make_interp_spline

from geodix import cli, forward, geodesics, inversion, manifold, surfacedata
from geodix.errors import GeodixError

_memo = {}


def verdict(tag, ok, detail):
    line = f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared builds
# ---------------------------------------------------------------------------

def flat_pipeline(dim):
    key = f"flat{dim}"
    if key not in _memo:
        d = tempfile.mkdtemp()
        raw = {
            "metric": {"kind": "euclidean", "dim": dim, "params": {}},
            "dim": dim,
            "sigma0": {"center": [0.0] * dim,
                       "base_direction": [1.0] + [0.0] * (dim - 1),
                       "t0": 1.0, "xhat_extent": 0.2, "xhat_step": 0.2},
            "grids": {"dt": 0.01, "dr": 0.01, "t_max": 2.2, "r_max": 0.8},
            "output": {"dir": d},
        }
        p = os.path.join(d, "config.json")
        Path(p).write_text(json.dumps(raw))
        t0 = time.monotonic()
        for sub in ("forward", "invert", "recover", "compare"):
            assert cli.main([sub, "--config", p]) == 0
        wall = time.monotonic() - t0
        tab = np.genfromtxt(os.path.join(d, "curvature.csv"),
                            delimiter=",", skip_header=1, comments="#")
        rep = json.loads(Path(d, "compare_report.json").read_text())
        _memo[key] = np.abs(tab[:, 2:]).max(), rep["max_rel"], wall
    return _memo[key]


def sphere_march(dt):
    """Single ray on the unit sphere, data past both caustics, march to 2pi."""
    key = f"sphere{dt}"
    if key not in _memo:
        m = manifold.constant_curvature(1.0, 2, rho_min=0.05)
        spec = forward.Sigma0Spec(center=[np.pi / 2, 0.0],
                                  base_direction=[0.0, 1.0],
                                  t0=1.0, xhat=np.array([[0.0]]))
        t_grid = np.arange(1, int(round(7.8 / dt))) * dt
        t0 = time.monotonic()
        ds = forward.forward_dataset(m, spec, t_grid, dr=dt)
        res = inversion.reconstruct_along_geodesic(
            ds.t_grid, ds.samples[0], ds.mask[0], r_max=2.0 * np.pi, dr=dt)
        wall = time.monotonic() - t0
        _memo[key] = ds, res, wall
    return _memo[key]


def hexagon(x0, radius):
    th = np.linspace(0.0, 2.0 * np.pi, 7)[:-1]
    ring = np.c_[radius * np.cos(th), radius * np.sin(th)]
    return np.vstack([x0, np.asarray(x0, dtype=float) + ring])


def disk_benchmark():
    """300 spheres of radii 0.02..0.05 in the unit disk, 20 query pairs."""
    if "disk" not in _memo:
        rng = np.random.default_rng(7)
        pairs = [(np.array([-0.4, 0.0]), np.array([0.4, 0.0]))]
        while len(pairs) < 20:
            p = rng.uniform(-0.55, 0.55, 2)
            q = rng.uniform(-0.55, 0.55, 2)
            d = np.linalg.norm(q - p)
            if (0.3 <= d <= 0.85 and np.linalg.norm(p) < 0.6
                    and np.linalg.norm(q) < 0.6):
                pairs.append((p, q))
        probes = hexagon(np.zeros(2), 0.048)
        probe_pairs = [(probes[i], probes[j])
                       for i in range(7) for j in range(i + 1, 7)]
        t0 = time.monotonic()
        fam, _, radii = surfacedata.chain_witness_family(
            manifold.euclidean(2), pairs + probe_pairs,
            [[-1.0, 1.0], [-1.0, 1.0]], radius_range=(0.02, 0.05),
            pad_to=300, pad_box=[[-0.6, 0.6], [-0.6, 0.6]],
            pts_per_surface=96, seed=7)
        _memo["disk"] = fam, pairs, probes, radii, time.monotonic() - t0
    return _memo["disk"]


def lens_ray():
    if "lens" not in _memo:
        m = manifold.conformal(2, amp=-0.4, width2=1.0)
        x0 = np.array([-3.0, 0.35])
        eta = manifold.unit_vector(m, x0, np.array([1.0, 0.0]))
        path = geodesics.shoot_geodesic(m, x0, eta, r_max=3.5, dr=0.005)
        _memo["lens"] = m, path
    return _memo["lens"]


# ---------------------------------------------------------------------------
# the gates
# ---------------------------------------------------------------------------

def test_gate_01_flat_pipeline_2d_and_3d():
    r2, rel2, w2 = flat_pipeline(2)
    r3, rel3, w3 = flat_pipeline(3)
    ok = (r2 <= 1e-6 and r3 <= 1e-6 and rel2 <= 1e-5 and rel3 <= 1e-5
          and w2 + w3 < 60.0)
    verdict("flat pipeline 2d+3d", ok,
            f"max|R| {max(r2, r3):.1e} <= 1e-6, chart rel "
            f"{max(rel2, rel3):.1e} <= 1e-5, {w2 + w3:.1f}s < 60s")


def test_gate_02_caustic_crossing_march():
    ds, res, wall = sphere_march(0.01)
    r_err = np.abs(res.profile.R - 1.0).max()
    t0 = time.monotonic()
    S1, v1 = inversion.continue_past_step(res.profile, 1.2, ds.t_grid,
                                          ds.samples[0], ds.mask[0])
    wall += time.monotonic() - t0
    gap = ds.t_grid - 1.2
    true = 1.0 / np.tan(gap[v1])
    # arccot-weighted error stays meaningful across the cot poles
    weighted = (np.abs(S1[v1][:, 0, 0] - true) / (1.0 + true ** 2)).max()
    plain = np.abs(S1[v1][:, 0, 0] - true)[np.abs(true) <= 1.0].max()
    crossed = bool((gap[v1] > np.pi).any())
    ok = (res.profile.r_grid[-1] >= 2.0 * np.pi - 1e-9
          and r_err <= 1e-3 and weighted <= 1e-4 and plain <= 1e-4
          and crossed and wall < 120.0)
    verdict("caustic crossing to 2pi", ok,
            f"|R-1| {r_err:.1e} <= 1e-3, continuation {weighted:.1e}"
            f"/{plain:.1e} <= 1e-4, past-pole data {crossed}, "
            f"{wall:.1f}s < 120s")


def test_gate_03_near_coincidence_expansion_order():
    # fine path resolution so the gap=1e-3 residual sits above solver noise
    m = manifold.conformal(2, amp=-0.4, width2=1.0)
    x0 = np.array([-1.2, 0.05])
    eta = manifold.unit_vector(m, x0, np.array([1.0, 0.0]))
    path = geodesics.shoot_geodesic(m, x0, eta, r_max=1.5, dr=0.002)
    t_src = 1.2
    jm = forward.point_source_jacobi(m, path, t_src)
    A = geodesics.curvature_coeffs(m, path)
    R_src = make_interp_spline(path.r_grid, A[:, 0, 0], k=3)(t_src)
    gaps = np.logspace(-3, -1, 9)
    resid = np.array([abs(forward.shape_from_jacobi(jm, t_src - g).K[0, 0]
                          - g - g ** 3 / 3.0 * R_src) for g in gaps])
    slope = np.polyfit(np.log(gaps), np.log(resid), 1)[0]
    verdict("inverse-shape cubic defect order", slope >= 3.8,
            f"log-log slope {slope:.2f} >= 3.8 over gaps 1e-3..1e-1")


def test_gate_04_curvature_route_consistency():
    m, path = lens_ray()
    fund = forward.fundamental_jacobi(m, path)
    t_grid = path.r_grid[1:]
    P = np.stack([fund.eval_P(t) for t in t_grid])
    Q = np.stack([fund.eval_Q(t) for t in t_grid])
    S = np.linalg.solve(Q, P)
    valid = np.abs(np.linalg.det(Q)) >= 1e-8 * np.maximum(t_grid, 0.005)
    res = inversion.reconstruct_along_geodesic(t_grid, S, valid, r_max=2.0)
    A = geodesics.curvature_coeffs(m, path)
    truth = make_interp_spline(path.r_grid, A[:, 0, 0], k=3)
    err = np.abs(res.profile.R[:, 0, 0] - truth(res.profile.r_grid)).max()
    verdict("marched vs frame curvature", err <= 1e-3,
            f"max err {err:.1e} <= 1e-3 on r in [0, 2]")


def test_gate_05_riccati_jacobi_agree_on_catalog():
    catalog = [
        manifold.euclidean(2),
        manifold.euclidean(3),
        manifold.constant_curvature(1.0, 2),
        manifold.constant_curvature(1.0, 3),
        manifold.constant_curvature(-1.0, 2),
        manifold.constant_curvature(0.0, 2),
        manifold.conformal(2, amp=-0.4, width2=1.3),
        manifold.conformal(3, amp=0.25, width2=2.0),
        manifold.depth_profile(2, v0=1.0, grad=0.3),
        manifold.depth_profile(3, v0=2.0, grad=-0.4),
        manifold.anisotropic_diagonal(2),
        manifold.anisotropic_diagonal(3),
    ]
    rng = np.random.default_rng(42)
    worst = 0.0
    for m in catalog:
        err = None
        for _ in range(40):
            lo = np.maximum(m.bounds[:, 0], -4.0)
            hi = np.minimum(m.bounds[:, 1], 4.0)
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            x0 = mid + (2.0 * rng.random(m.dim) - 1.0) * 0.25 * half
            v = manifold.unit_vector(m, x0, rng.standard_normal(m.dim))
            try:
                p = geodesics.shoot_geodesic(m, x0, v, r_max=1.6, dr=0.004)
                jm = forward.point_source_jacobi(m, p, 1.5)
                start = forward.shape_from_jacobi(jm, 0.3)
                marched = forward.riccati_march(m, p, start.S, 0.3, 1.2,
                                                t_center=1.5)
            except GeodixError:
                continue
            err = max(np.max(np.abs(sd.S - forward.shape_from_jacobi(jm, sd.r).S))
                      for sd in marched[:: max(1, len(marched) // 7)])
            break
        assert err is not None, f"no usable ray found for {m.kind} dim {m.dim}"
        worst = max(worst, err)
    verdict("riccati vs jacobi on catalog", worst <= 1e-6,
            f"worst of {len(catalog)} metrics {worst:.1e} <= 1e-6")


def test_gate_06_anisotropic_single_window():
    m = manifold.anisotropic_diagonal(2)
    x0 = np.array([0.3, -0.2])
    v = manifold.unit_vector(m, x0, np.array([1.0, 0.4]))
    path = geodesics.shoot_geodesic(m, x0, v, r_max=3.0, dr=0.005)
    fund = forward.fundamental_jacobi(m, path)
    t_grid = path.r_grid[1:]
    P = np.stack([fund.eval_P(t) for t in t_grid])
    Q = np.stack([fund.eval_Q(t) for t in t_grid])
    S = np.linalg.solve(Q, P)
    win = np.flatnonzero((t_grid >= 4 * 0.005 - 1e-12) & (t_grid <= 1.2))
    V = inversion.initial_vstate(t_grid, S, win)
    _, prof = inversion.march_vsystem(V, (0.0, 0.3), 0.005)
    A = geodesics.curvature_coeffs(m, path)
    truth = make_interp_spline(path.r_grid, A[:, 0, 0], k=3)
    err = np.abs(prof.R[:, 0, 0] - truth(prof.r_grid)).max()
    verdict("anisotropic window recovery", err <= 5e-3,
            f"max err {err:.1e} <= 5e-3 on one window")


def test_gate_07_step_bound_value_and_monotonicity():
    ctl = inversion.step_bound(1.0, 2.0)
    value_ok = (ctl.lipschitz == pytest.approx(24.0)
                and ctl.t2 == pytest.approx(1.0 / 66.0, rel=1e-12)
                and abs(ctl.t2 - 0.01515) <= 5e-6)
    mono_ok = True
    ks = [0.01, 0.1, 1.0, 4.0, 25.0]
    balls = [1.0, 1.5, 2.0, 4.0, 10.0]
    for ball in balls:
        t2s = [inversion.step_bound(k, ball).t2 for k in ks]
        mono_ok &= all(a >= b for a, b in zip(t2s, t2s[1:]))
    for k in ks:
        t2s = [inversion.step_bound(k, ball).t2 for ball in balls]
        mono_ok &= all(a >= b for a, b in zip(t2s, t2s[1:]))
    verdict("guaranteed step size", value_ok and mono_ok,
            f"t2 {ctl.t2:.6f} = 0.01515, L {ctl.lipschitz:.0f}, monotone")


def test_gate_08_disk_distance_benchmark():
    fam, pairs, probes, radii, wall = disk_benchmark()
    t0 = time.monotonic()
    worst = 0.0
    for a, b in pairs:
        true = np.linalg.norm(b - a)
        est = surfacedata.chain_distance(fam, a, b, merge_radius=0.003)
        worst = max(worst, abs(est - true) / true)
    g = surfacedata.estimate_metric_from_distances(fam, np.zeros(2), probes,
                                                   merge_radius=0.003)
    g_err = np.abs(g - np.eye(2)).max()
    wall += time.monotonic() - t0
    rr = (min(radii), max(radii))
    ok = (len(radii) == 300 and rr[0] >= 0.02 and rr[1] <= 0.05
          and worst <= 0.02 and g_err <= 0.05 and wall < 60.0)
    verdict("disk distance recovery", ok,
            f"300 spheres r {rr[0]:.3f}..{rr[1]:.3f}, 20 pairs worst "
            f"{worst:.2%} <= 2%, metric {g_err:.1e} <= 5%, {wall:.1f}s < 60s")


def test_gate_09_orientation_selection():
    m = manifold.euclidean(2)
    region = [[-2.0, 2.0], [-2.0, 2.0]]
    rng = np.random.default_rng(12)
    centers = rng.uniform(-0.8, 0.8, (50, 2))
    radii = rng.uniform(0.1, 0.5, 50)
    surfs = forward.sample_surface_family(m, region, centers, radii,
                                          pts_per_surface=48, seed=13)
    fam = surfacedata.SurfaceFamily(surfaces=surfs, region=region)
    hits = 0
    for i, s in enumerate(surfs):
        j = int(rng.integers(len(s.points)))
        x0 = np.asarray(s.points[j], dtype=float)
        zeta0 = np.asarray(s.normals[j], dtype=float)
        if rng.random() < 0.5:
            zeta0 = -zeta0
        res = surfacedata.orientation_test(fam, s, x0, zeta0,
                                           metric=np.eye(2))
        true_dir = centers[i] - x0
        true_dir /= np.linalg.norm(true_dir)
        if (len(res.n1) == 1 and res.center_direction is not None
                and np.abs(res.center_direction - true_dir).max() < 1e-6):
            hits += 1

    ms = manifold.constant_curvature(1.0, 2, rho_min=0.05)
    eq_region = [[0.05, 2.99], [-8.0, 8.0]]
    s = forward.sample_surface_family(ms, eq_region, [[1.2, 0.0]],
                                      [np.pi / 2], pts_per_surface=256,
                                      seed=6)[0]
    pts = np.asarray(s.points, dtype=float)
    nrm = np.asarray(s.normals, dtype=float)
    keep = (pts[:, 1] > 0.0) & (pts[:, 0] > 1.25) & (pts[:, 0] < 1.89)
    arc = dataclasses.replace(s, points=pts[keep], normals=nrm[keep])
    eq_fam = surfacedata.SurfaceFamily(surfaces=[arc], region=eq_region)
    mid = len(arc.points) // 2
    res = surfacedata.orientation_test(eq_fam, arc,
                                       np.asarray(arc.points[mid], float),
                                       np.asarray(arc.normals[mid], float),
                                       metric=ms)
    foci = res.foci[np.argsort(res.foci[:, 0])]
    equator_ok = (len(res.n1) == 2 and res.center_direction is None
                  and np.abs(foci[0] - [1.2, 0.0]).max() <= 1e-6
                  and np.abs(foci[1] - [np.pi - 1.2, np.pi]).max() <= 1e-6)
    verdict("orientation selection", hits == 50 and equator_ok,
            f"{hits}/50 randomized trials, equator arc keeps both normals")


def test_gate_10_halving_order_of_accuracy():
    _, coarse, _ = sphere_march(0.01)
    _, fine, _ = sphere_march(0.005)
    e1 = np.abs(coarse.profile.R - 1.0).max()
    e2 = np.abs(fine.profile.R - 1.0).max()
    ratio = e1 / e2
    verdict("halving order of accuracy", ratio >= 3.0,
            f"|R-1| {e1:.1e} -> {e2:.1e}, ratio {ratio:.1f} >= 3")
