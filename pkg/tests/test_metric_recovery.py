"""Chart assembly from datasets, truth charts, error reports, Fermi views."""
import dataclasses
import os
from pathlib import Path

import numpy as np
import pytest

from geodix import forward, geodesics, manifold, metric_recovery
from geodix.errors import (ConjugatePoint, DomainError, GridMismatch,
                           InputError)

_memo = {}


def euclid_dataset(dim=2, r_span=2.6, dt=0.005):
    key = ("euclid", dim, r_span, dt)
    if key not in _memo:
        m = manifold.euclidean(dim)
        if dim == 2:
            xhat = np.array([[-0.2], [0.0], [0.3]])
            center, base = [0.0, 0.0], [1.0, 0.0]
        else:
            xhat = np.array([[0.0, 0.0], [0.2, -0.1], [-0.15, 0.25],
                             [0.1, 0.2]])
            center, base = [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]
        spec = forward.Sigma0Spec(center=center, base_direction=base,
                                  t0=1.0, xhat=xhat)
        t_grid = np.arange(1, int(r_span / dt)) * dt
        _memo[key] = m, spec, forward.forward_dataset(m, spec, t_grid, dr=dt)
    return _memo[key]


def euclid_chart(r_max=1.4):
    key = ("euclid-chart", r_max)
    if key not in _memo:
        _, _, ds = euclid_dataset()
        _memo[key] = metric_recovery.recover_chart(ds, t0=1.0, r_max=r_max)
    return _memo[key]


def sphere_chart():
    # hidden center one unit below Sigma0; focal node at r = 1 and the
    # conjugate return at r = 1 + pi both sit inside the marched range
    if "sphere" not in _memo:
        m = manifold.constant_curvature(1.0, 2, rho_min=0.05)
        spec = forward.Sigma0Spec(center=[np.pi / 2, 0.0],
                                  base_direction=[0.0, 1.0],
                                  t0=1.0,
                                  xhat=np.array([[-0.25], [0.0], [0.3]]))
        dt = 0.005
        t_grid = np.arange(1, int(5.6 / dt)) * dt
        ds = forward.forward_dataset(m, spec, t_grid, dr=dt)
        _memo["sphere"] = metric_recovery.recover_chart(ds, t0=1.0,
                                                        r_max=4.3)
    return _memo["sphere"]


def lens_pair():
    if "lens" not in _memo:
        m = manifold.conformal(2, amp=-0.4, width2=1.0)
        spec = forward.Sigma0Spec(center=[-3.0, 0.3],
                                  base_direction=[1.0, 0.0], t0=1.0,
                                  xhat=np.linspace(-0.45, 0.45,
                                                   9).reshape(-1, 1))
        dt = 0.005
        t_grid = np.arange(1, int(2.8 / dt)) * dt
        ds = forward.forward_dataset(m, spec, t_grid, dr=dt)
        chart = metric_recovery.recover_chart(ds, t0=1.0, r_max=0.8)
        truth = metric_recovery.ground_truth_chart(m, spec, spec.xhat,
                                                   chart.r_grid)
        _memo["lens"] = m, spec, ds, chart, truth
    return _memo["lens"]


def point_source_law(chart, scale_floor=1e-2):
    """Unmasked relative error against j(r) = (1 - r) * I in flat space."""
    law = (1.0 - chart.r_grid) ** 2
    ref = law[None, :, None, None] * chart.gram[:, None, :, :]
    ok = chart.mask & (np.abs(law)[None, :] > scale_floor)
    diff = np.abs(chart.g_hat - ref)
    scale = np.maximum(np.abs(ref), 1e-300)
    return np.max((diff / scale)[ok])


# ---------------------------------------------------------------------------
# chart recovery against closed forms
# ---------------------------------------------------------------------------

def test_recover_chart_euclid_closed_form():
    chart = euclid_chart()
    assert chart.dim == 2 and chart.mm == 1
    assert point_source_law(chart) <= 1e-5
    # every masked node sits within two grid steps of the focal radius
    dr = chart.r_grid[1] - chart.r_grid[0]
    for k in range(chart.xhat.shape[0]):
        bad = chart.r_grid[~chart.mask[k]]
        assert bad.size > 0
        assert np.max(np.abs(bad - 1.0)) <= 2 * dr


def test_recover_chart_euclid_3d():
    _, _, ds = euclid_dataset(dim=3, r_span=2.2)
    chart = metric_recovery.recover_chart(ds, t0=1.0, r_max=0.8)
    assert chart.mm == 2
    assert chart.mask.all()
    assert point_source_law(chart) <= 1e-5
    # transverse blocks stay symmetric
    asym = np.abs(chart.g_hat - np.swapaxes(chart.g_hat, -1, -2))
    assert np.max(asym) <= 1e-10


def test_recovered_gram_is_positive_definite():
    chart = euclid_chart()
    eigs = np.linalg.eigvalsh(chart.g_hat[chart.mask])
    assert eigs.min() > 0.0
    bad_eigs = np.linalg.eigvalsh(chart.gram)
    assert bad_eigs.min() > 0.0


def test_recover_chart_restart_offsets():
    _, _, ds = euclid_dataset()
    chart = metric_recovery.recover_chart(ds, t0=1.0, r_max=0.8,
                                          restart_offsets=(0.35,))
    assert chart.mask.all()
    assert point_source_law(chart) <= 1e-5


def test_recover_chart_rejects_bad_t0():
    _, _, ds = euclid_dataset()
    with pytest.raises(InputError):
        metric_recovery.recover_chart(ds, t0=1.0003, r_max=0.5)


def test_recover_chart_rejects_masked_surface_column():
    _, _, ds = euclid_dataset()
    i0 = int(np.argmin(np.abs(ds.t_grid - 1.0)))
    mask = ds.mask.copy()
    mask[1, i0] = False
    broken = dataclasses.replace(ds, mask=mask)
    with pytest.raises(InputError):
        metric_recovery.recover_chart(broken, t0=1.0, r_max=0.5)


def test_recover_chart_parallel_rows_identical():
    _, _, ds = euclid_dataset()
    a = metric_recovery.recover_chart(ds, t0=1.0, r_max=0.6)
    b = metric_recovery.recover_chart(ds, t0=1.0, r_max=0.6, jobs=2)
    assert np.array_equal(a.g_hat, b.g_hat)
    assert np.array_equal(a.jacobi_coeffs, b.jacobi_coeffs)
    assert np.array_equal(a.mask, b.mask)


def test_sphere_chart_through_conjugate_points():
    chart = sphere_chart()
    r = chart.r_grid
    law = (np.sin(1.0 - r) / np.sin(1.0)) ** 2
    ref = law[None, :, None, None] * chart.gram[:, None, :, :]
    ok = chart.mask & (np.abs(law)[None, :] > 1e-2)
    rel = np.abs(chart.g_hat - ref) / np.maximum(np.abs(ref), 1e-300)
    assert np.max(rel[ok]) <= 5e-4
    # degeneracies of the radial congruence: r = 1 and r = 1 + pi
    dr = r[1] - r[0]
    zeros = np.array([1.0, 1.0 + np.pi])
    for k in range(chart.xhat.shape[0]):
        bad = r[~chart.mask[k]]
        assert 0 < bad.size <= 6
        assert np.max(np.min(np.abs(bad[:, None] - zeros[None, :]), axis=1)) \
            <= 2 * dr
        for z in zeros:
            assert np.min(np.abs(bad - z)) <= 2 * dr


def test_sphere_chart_gauss_curvature():
    # second differences of the recovered profile give back the constant
    chart = sphere_chart()
    r = chart.r_grid
    dr = r[1] - r[0]
    y = np.sqrt(np.abs(chart.g_hat[1, :, 0, 0] / chart.gram[1, 0, 0]))
    q = 10
    vals = []
    for lo, hi in [(0.2, 0.8), (1.5, 3.6)]:
        sel = np.flatnonzero((r >= lo) & (r <= hi))
        for i in sel[q:-q:5]:
            ypp = (y[i - q] - 2.0 * y[i] + y[i + q]) / (q * dr) ** 2
            vals.append(-ypp / y[i])
    vals = np.array(vals)
    assert np.max(np.abs(vals - 1.0)) <= 1e-3


# ---------------------------------------------------------------------------
# ground-truth charts
# ---------------------------------------------------------------------------

def test_truth_chart_sphere_closed_form():
    m = manifold.constant_curvature(1.0, 2)
    spec = forward.Sigma0Spec(center=[np.pi / 2, 0.0],
                              base_direction=[0.0, 1.0], t0=1.0,
                              xhat=np.linspace(-0.4, 0.4, 5).reshape(-1, 1))
    r_grid = np.linspace(0.0, 2.5, 126)
    truth = metric_recovery.ground_truth_chart(m, spec, spec.xhat, r_grid)
    law = (np.sin(1.0 - r_grid) / np.sin(1.0)) ** 2
    ref = law[None, :, None, None] * truth.gram[:, None, :, :]
    scale = np.maximum(np.abs(ref), np.abs(truth.gram[:, None, :, :]) * 1e-3)
    assert np.max(np.abs(truth.g_hat - ref) / scale) <= 1e-7
    assert truth.mask.all()
    assert truth.jacobi_coeffs is None


def test_truth_chart_euclid_3d():
    m = manifold.euclidean(3)
    spec = forward.Sigma0Spec(center=[0.0, 0.0, 0.0],
                              base_direction=[0.0, 0.0, 1.0], t0=1.0,
                              xhat=np.array([[0.0, 0.0], [0.2, -0.1],
                                             [-0.15, 0.25]]))
    r_grid = np.linspace(0.0, 0.9, 46)
    truth = metric_recovery.ground_truth_chart(m, spec, spec.xhat, r_grid)
    law = (1.0 - r_grid) ** 2
    ref = law[None, :, None, None] * truth.gram[:, None, :, :]
    assert np.max(np.abs(truth.g_hat - ref)) <= 1e-10
    assert np.array_equal(truth.g_hat[:, 0], truth.gram)


def test_truth_chart_exits_domain():
    m = manifold.euclidean(2, half_width=1.2)
    spec = forward.Sigma0Spec(center=[0.0, 0.0], base_direction=[1.0, 0.0],
                              t0=1.0, xhat=np.array([[-0.1], [0.0], [0.1]]))
    with pytest.raises(DomainError):
        metric_recovery.ground_truth_chart(m, spec, spec.xhat,
                                           np.linspace(0.0, 2.4, 121))


def test_recovered_matches_truth_on_lens():
    _, _, _, chart, truth = lens_pair()
    err = metric_recovery.chart_error(chart, truth)
    assert err["masked_frac"] == 0.0
    assert err["max_rel"] <= 1e-5
    assert err["median_rel"] <= err["q90_rel"] <= err["max_rel"]
    prof = err["per_r_profile"]
    assert len(prof) == len(chart.r_grid)
    assert all(v is not None for v in prof)


# ---------------------------------------------------------------------------
# error report edge cases
# ---------------------------------------------------------------------------

def test_chart_error_identity_is_zero():
    _, _, _, _, truth = lens_pair()
    err = metric_recovery.chart_error(truth, truth)
    assert err["max_rel"] == 0.0
    assert err["masked_frac"] == 0.0


def test_chart_error_rejects_grid_mismatch():
    _, _, _, chart, truth = lens_pair()
    short = dataclasses.replace(truth, r_grid=truth.r_grid[:-1],
                                g_hat=truth.g_hat[:, :-1],
                                mask=truth.mask[:, :-1])
    with pytest.raises(GridMismatch):
        metric_recovery.chart_error(chart, short)
    moved = dataclasses.replace(truth, xhat=truth.xhat + 0.05)
    with pytest.raises(GridMismatch):
        metric_recovery.chart_error(chart, moved)


def test_chart_error_skips_fully_masked_columns():
    _, _, _, _, truth = lens_pair()
    mask = truth.mask.copy()
    mask[:, 7] = False
    holed = dataclasses.replace(truth, mask=mask)
    err = metric_recovery.chart_error(holed, truth)
    assert err["per_r_profile"][7] is None
    assert err["masked_frac"] == pytest.approx(
        truth.mask[:, 7].size / truth.mask.size)


# ---------------------------------------------------------------------------
# Fermi views
# ---------------------------------------------------------------------------

def test_to_fermi_axis_matches_gram():
    # the parallel-frame metric is the constant surface gram at every node
    chart = euclid_chart()
    fer = metric_recovery.to_fermi(chart, 1)
    assert fer.axis_g.shape == (len(chart.r_grid), 1, 1)
    assert np.array_equal(fer.axis_mask, chart.mask[1])
    diff = np.abs(fer.axis_g[fer.axis_mask] - chart.gram[1])
    assert np.max(diff) <= 1e-9
    assert fer.s_grid is None and fer.g_rr is None


def test_to_fermi_gate_conditions():
    chart = euclid_chart()
    _, _, _, lens_chart, truth = lens_pair()
    with pytest.raises(InputError):
        metric_recovery.to_fermi(truth, 0)       # no transport coefficients
    with pytest.raises(InputError):
        metric_recovery.to_fermi(chart, 5)       # row index out of range
    with pytest.raises(InputError):
        metric_recovery.to_fermi(chart, 1, np.array([0.1]))  # 3 rows only
    mask = lens_chart.mask.copy()
    mask[4, 60] = False
    holed = dataclasses.replace(lens_chart, mask=mask)
    with pytest.raises(ConjugatePoint):
        # off-axis view needs the whole chart unmasked
        metric_recovery.to_fermi(holed, 3, np.array([-0.1, 0.0, 0.1]))


def test_to_fermi_off_axis_gate_in_3d():
    _, _, ds = euclid_dataset(dim=3, r_span=2.2)
    chart = metric_recovery.recover_chart(ds, t0=1.0, r_max=0.6)
    fer = metric_recovery.to_fermi(chart, 0)
    assert fer.axis_g.shape == (len(chart.r_grid), 2, 2)
    with pytest.raises(InputError):
        metric_recovery.to_fermi(chart, 0, np.array([0.0, 0.1]))


def test_off_axis_fermi_matches_true_metric():
    # pull the true metric back through tube coordinates of the same axis
    m, _, ds, chart, _ = lens_pair()
    k0 = 3
    s_grid = np.array([-0.3, -0.15, 0.0, 0.15, 0.3])
    fer = metric_recovery.to_fermi(chart, k0, s_grid)
    assert fer.g_rr.shape == (len(chart.r_grid), len(s_grid))
    on_axis = fer.g_rr[fer.off_mask[:, 2], 2]
    assert np.max(np.abs(on_axis - 1.0)) <= 1e-9

    path = geodesics.shoot_geodesic(m, ds.points[k0],
                                    ds.frames[k0][:, -1], 0.75, 0.005)
    tube = geodesics.FermiChart(base=path, rho=0.5, r_lo=0.0, r_hi=0.75)
    h = 1e-3
    errs = []
    for rf in (0.3, 0.5):
        i = int(np.argmin(np.abs(chart.r_grid - rf)))
        for jj, s in enumerate(s_grid):
            if not fer.off_mask[i, jj] or s == 0.0:
                continue
            sv = np.array([s])
            xp = geodesics.fermi_map(tube, sv, rf + h)
            xm = geodesics.fermi_map(tube, sv, rf - h)
            xc = geodesics.fermi_map(tube, sv, rf)
            tan = (xp - xm) / (2.0 * h)
            g, _ = manifold.eval_metric(m, xc)
            errs.append(abs(fer.g_rr[i, jj] - tan @ g @ tan)
                        / abs(tan @ g @ tan))
    assert len(errs) >= 6
    assert max(errs) <= 1e-4


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def test_chart_round_trip(tmp_path):
    chart = euclid_chart()
    jp, cp = metric_recovery.save_chart(chart, tmp_path / "chart")
    assert jp.endswith(".json") and cp.endswith(".csv")
    back = metric_recovery.load_chart(jp)
    assert back.dim == chart.dim and back.t0 == chart.t0
    assert np.array_equal(back.r_grid, chart.r_grid)
    assert np.array_equal(back.xhat, chart.xhat)
    assert np.array_equal(back.gram, chart.gram)
    assert np.array_equal(back.g_hat, chart.g_hat)
    assert np.array_equal(back.jacobi_coeffs, chart.jacobi_coeffs)
    assert np.array_equal(back.mask, chart.mask)
    # a second dump of the loaded chart reproduces the files byte for byte
    jp2, cp2 = metric_recovery.save_chart(back, tmp_path / "again")
    assert Path(cp).read_bytes() == Path(cp2).read_bytes()
    # the stem alone is accepted too
    stem = os.fspath(tmp_path / "chart")
    assert np.array_equal(metric_recovery.load_chart(stem).g_hat,
                          chart.g_hat)


def test_load_chart_rejects_foreign_json(tmp_path):
    p = tmp_path / "other.json"
    p.write_text('{"format": "something-else"}\n')
    with pytest.raises(InputError):
        metric_recovery.load_chart(os.fspath(p))


def test_truth_chart_round_trip_without_jacobi(tmp_path):
    _, _, _, _, truth = lens_pair()
    jp, _ = metric_recovery.save_chart(truth, tmp_path / "truth")
    back = metric_recovery.load_chart(jp)
    assert back.jacobi_coeffs is None
    assert np.array_equal(back.g_hat, truth.g_hat)
