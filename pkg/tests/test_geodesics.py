"""Geodesic integration, parallel frames, tube charts."""
import numpy as np
import pytest
from scipy.integrate import simpson

from geodix import geodesics, manifold
from geodix.errors import DomainError, InjectivityError, InputError, ZeroVector


def unit(m, x, v):
    return manifold.unit_vector(m, x, v)


def shooting_configs():
    """(metric, start, raw direction, r_max) staying inside each chart box."""
    return [
        (manifold.euclidean(2), [-4.0, 0.0], [1.0, 0.0], 9.0),
        (manifold.euclidean(3), [-4.0, 0.0, 0.5], [1.0, 0.1, 0.0], 8.0),
        (manifold.constant_curvature(1.0, 2), [np.pi / 2, 0.0], [0.0, 1.0], 10.0),
        (manifold.constant_curvature(-1.0, 2), [1.0, 0.0], [0.5, 1.0], 5.0),
        (manifold.constant_curvature(1.0, 3), [np.pi / 2, np.pi / 2, 0.0],
         [0.0, 0.0, 1.0], 10.0),
        (manifold.conformal(2, amp=-0.4), [-4.0, 0.3], [1.0, 0.0], 7.0),
        (manifold.conformal(3, amp=0.25, width2=2.0), [-3.0, 0.2, -0.1],
         [1.0, 0.05, 0.0], 6.0),
        (manifold.depth_profile(2, v0=1.0, grad=0.3), [0.0, 0.0], [1.0, 0.0], 8.0),
        (manifold.depth_profile(3, v0=2.0, grad=-0.4), [0.0, 0.0, 0.0],
         [1.0, 0.0, 0.0], 7.0),
        (manifold.anisotropic_diagonal(2), [-3.0, 0.2], [1.0, 0.1], 6.0),
        (manifold.anisotropic_diagonal(3), [-2.5, 0.3, -0.2], [1.0, 0.2, 0.1], 5.0),
    ]


def ids(cfg):
    m = cfg[0]
    return f"{m.kind}-{m.dim}d"


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------

def test_euclidean_straight_line():
    m = manifold.euclidean(2)
    p = geodesics.shoot_geodesic(m, [0.0, 0.0], [1.0, 0.0], 2.0, 0.01)
    expected = np.column_stack([p.r_grid, np.zeros_like(p.r_grid)])
    assert np.allclose(p.points, expected, atol=1e-12)
    assert np.allclose(p.velocities, [1.0, 0.0], atol=1e-12)


def test_sphere_radial_line():
    # radial lines of the polar chart are geodesics: x(r) = (rho0 + r, phi0)
    m = manifold.constant_curvature(1.0, 2)
    p = geodesics.shoot_geodesic(m, [0.2, 0.7], [1.0, 0.0], 2.5, 0.01)
    assert np.allclose(p.points[:, 0], 0.2 + p.r_grid, atol=1e-9)
    assert np.allclose(p.points[:, 1], 0.7, atol=1e-9)


def test_arclength_quadrature():
    # resampled velocities keep unit g-norm, so quadrature recovers arclength
    m = manifold.conformal(2, amp=-0.4)
    p = geodesics.shoot_geodesic(m, [-4.0, 0.3], unit(m, [-4.0, 0.3], [1.0, 0.2]),
                                 5.0, 0.005)
    gs = manifold.metric_batch(m, p.points)
    speeds = np.sqrt(np.einsum("ki,kij,kj->k", p.velocities, gs, p.velocities))
    assert abs(simpson(speeds, x=p.r_grid) - 5.0) <= 1e-7


@pytest.mark.parametrize("cfg", shooting_configs(), ids=ids)
def test_unit_speed_and_gram(cfg):
    m, x0, v_raw, r_max = cfg
    p = geodesics.shoot_geodesic(m, x0, unit(m, x0, v_raw), r_max, 0.01)
    gs = manifold.metric_batch(m, p.points)
    speeds = np.sqrt(np.einsum("ki,kij,kj->k", p.velocities, gs, p.velocities))
    assert np.max(np.abs(speeds - 1.0)) <= 1e-8
    # parallel transport is an isometry: frame gram matrix never moves
    grams = np.einsum("kai,kab,kbj->kij", p.frames, gs, p.frames)
    assert np.max(np.abs(grams - p.gram)) <= 1e-7
    # default frame is orthonormal with the velocity last
    assert np.allclose(p.gram, np.eye(m.dim), atol=1e-9)
    assert np.allclose(p.frames[:, :, -1], p.velocities, atol=1e-8)


@pytest.mark.parametrize("cfg", shooting_configs()[:8], ids=ids)
def test_reversibility(cfg):
    m, x0, v_raw, r_max = cfg
    p = geodesics.shoot_geodesic(m, x0, unit(m, x0, v_raw), r_max, 0.01)
    back = geodesics.shoot_geodesic(m, p.points[-1],
                                    unit(m, p.points[-1], -p.velocities[-1]),
                                    r_max, 0.01)
    assert np.linalg.norm(back.points[-1] - np.asarray(x0)) <= 1e-6


def test_domain_exit_raises():
    m = manifold.euclidean(2, half_width=2.0)
    with pytest.raises(DomainError):
        geodesics.shoot_geodesic(m, [0.0, 0.0], [1.0, 0.0], 5.0, 0.01)


def test_non_unit_direction_rejected():
    m = manifold.euclidean(2)
    with pytest.raises(InputError):
        geodesics.shoot_geodesic(m, [0.0, 0.0], [2.0, 0.0], 1.0, 0.01)


def test_path_splines_match_nodes():
    m = manifold.conformal(2, amp=-0.3)
    p = geodesics.shoot_geodesic(m, [-2.0, 0.1], unit(m, [-2.0, 0.1], [1.0, 0.3]),
                                 3.0, 0.01)
    k = len(p.r_grid) // 3
    r = p.r_grid[k]
    assert np.allclose(p.point(r), p.points[k], atol=1e-12)
    assert np.allclose(p.velocity(r), p.velocities[k], atol=1e-12)
    assert np.allclose(p.frame(r), p.frames[k], atol=1e-12)
    with pytest.raises(InputError):
        p.point(p.r_max + 0.5)


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

def test_orthonormal_frame_properties():
    m = manifold.anisotropic_diagonal(2)
    x = [0.3, -0.4]
    g, _ = manifold.eval_metric(m, x)
    eta = unit(m, x, [0.6, -1.0])
    F = geodesics.orthonormal_frame(m, x, eta)
    assert np.allclose(F[:, -1], eta, atol=1e-12)
    assert np.allclose(F.T @ g @ F, np.eye(2), atol=1e-12)
    with pytest.raises(ZeroVector):
        geodesics.orthonormal_frame(m, x, [0.0, 0.0])


def test_parallel_frame_euclidean_constant():
    m = manifold.euclidean(2)
    p = geodesics.shoot_geodesic(m, [0.0, 0.0], [1.0, 0.0], 2.0, 0.01)
    F0 = np.array([[0.0, 1.0], [2.0, 0.0]])   # non-orthonormal transverse leg
    frames = geodesics.parallel_frame(m, p, F0)
    assert np.allclose(frames, F0, atol=1e-10)


def test_curvature_coeffs_euclidean_zero():
    m = manifold.euclidean(3)
    p = geodesics.shoot_geodesic(m, [0.0, 0.0, 0.0],
                                 unit(m, [0.0, 0.0, 0.0], [1.0, 1.0, 0.5]),
                                 3.0, 0.05)
    rc = geodesics.curvature_coeffs(m, p)
    assert rc.shape == (len(p.r_grid), 2, 2)
    assert np.max(np.abs(rc)) <= 1e-12


@pytest.mark.parametrize("dim", [2, 3])
def test_curvature_coeffs_sphere_identity(dim):
    m = manifold.constant_curvature(1.0, dim)
    x0 = [np.pi / 2, 0.0] if dim == 2 else [np.pi / 2, np.pi / 2, 0.0]
    eta = [0.0, 1.0] if dim == 2 else [0.0, 0.0, 1.0]
    p = geodesics.shoot_geodesic(m, x0, eta, 6.0, 0.02)
    rc = geodesics.curvature_coeffs(m, p)
    eye = np.eye(dim - 1)
    assert np.max(np.abs(rc - eye)) <= 1e-8


def test_curvature_coeffs_selfadjoint():
    # with an orthonormal frame the transverse block must be symmetric
    m = manifold.conformal(3, amp=-0.35, width2=1.8)
    x0 = [-3.0, 0.4, 0.2]
    p = geodesics.shoot_geodesic(m, x0, unit(m, x0, [1.0, 0.15, -0.1]), 5.0, 0.02)
    rc = geodesics.curvature_coeffs(m, p)
    assert np.max(np.abs(rc - np.transpose(rc, (0, 2, 1)))) <= 1e-6


# ---------------------------------------------------------------------------
# batched shooting
# ---------------------------------------------------------------------------

def test_shoot_points_matches_individual():
    m = manifold.conformal(2, amp=-0.4)
    x0 = np.array([-1.5, 0.2])
    angles = np.linspace(0.0, 2 * np.pi, 5, endpoint=False)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    etas = np.stack([unit(m, x0, d) for d in dirs])
    ends, vels = geodesics.shoot_points(m, np.tile(x0, (5, 1)), etas, 2.2)
    for k in range(5):
        p = geodesics.shoot_geodesic(m, x0, etas[k], 2.2, 0.01)
        assert np.allclose(ends[k], p.points[-1], atol=1e-8)
        assert np.allclose(vels[k], p.velocities[-1], atol=1e-8)


def test_shoot_points_zero_length():
    m = manifold.euclidean(2)
    ends, _ = geodesics.shoot_points(m, [[0.5, 0.5]], [[1.0, 0.0]], 0.0)
    assert np.allclose(ends[0], [0.5, 0.5], atol=1e-12)


# ---------------------------------------------------------------------------
# tube (Fermi) chart
# ---------------------------------------------------------------------------

def euclid_chart():
    m = manifold.euclidean(2)
    p = geodesics.shoot_geodesic(m, [0.0, 0.0], [1.0, 0.0], 2.0, 0.01)
    return geodesics.FermiChart(base=p, rho=1.0, r_lo=0.0, r_hi=2.0)


def test_fermi_map_axis_and_euclidean_form():
    ch = euclid_chart()
    assert np.allclose(geodesics.fermi_map(ch, [0.0], 1.3), [1.3, 0.0], atol=1e-12)
    # flat case: base point plus the transverse frame combination
    pt = geodesics.fermi_map(ch, [0.4], 1.2)
    assert np.allclose(pt, [1.2, 0.4], atol=1e-9)
    with pytest.raises(InjectivityError):
        geodesics.fermi_map(ch, [1.5], 1.0)


@pytest.mark.parametrize("s,r", [(0.35, 0.6), (-0.52, 1.7), (0.05, 0.1)])
def test_fermi_round_trip_euclidean(s, r):
    ch = euclid_chart()
    x = geodesics.fermi_map(ch, [s], r)
    s2, r2 = geodesics.fermi_inverse(ch, x)
    assert abs(s2[0] - s) <= 1e-6
    assert abs(r2 - r) <= 1e-6


def test_fermi_round_trip_sphere():
    m = manifold.constant_curvature(1.0, 2)
    p = geodesics.shoot_geodesic(m, [np.pi / 2, 0.0], [0.0, 1.0], 2.0, 0.01)
    ch = geodesics.FermiChart(base=p, rho=0.8, r_lo=0.0, r_hi=2.0)
    for s, r in [(0.3, 0.5), (-0.45, 1.4)]:
        x = geodesics.fermi_map(ch, [s], r)
        s2, r2 = geodesics.fermi_inverse(ch, x)
        assert abs(s2[0] - s) <= 1e-6
        assert abs(r2 - r) <= 1e-6


def test_tube_radius_euclidean_unconstrained():
    m = manifold.euclidean(2)
    p = geodesics.shoot_geodesic(m, [0.0, 0.0], [1.0, 0.0], 2.0, 0.01)
    ch = geodesics.build_fermi_chart(m, p, rho_max=1.5, n_samples=60)
    assert ch.rho == pytest.approx(1.5)


def test_tube_radius_detects_sphere_folding():
    # all geodesics leaving a great circle at right angles meet again at its
    # poles, distance pi/2 away; the sampled injectivity check must stop the
    # radius near that fold
    m = manifold.constant_curvature(1.0, 2)
    p = geodesics.shoot_geodesic(m, [0.2, 0.0], [1.0, 0.0], 2.7, 0.01)
    ch = geodesics.build_fermi_chart(m, p, rho_max=2.0, n_samples=80, seed=4)
    assert 1.2 <= ch.rho <= 1.62
