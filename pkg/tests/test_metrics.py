import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvsk.errors import DimMismatch, EmptyMask, FrameMismatch, ResolutionMismatch, ZeroArea
from mvsk.geometry import CANONICAL_DIR, OBJECT, TriMesh, build_view_rig
from mvsk.metrics import (
    MISS_PENALTY,
    EvalRecord,
    SurfaceSampler,
    TriangleBVH,
    brute_force_distance,
    depth_error,
    masked_depth_mse,
    multisurface_depth_error,
    projection_loss,
    sample_surface,
    silhouette_iou,
    surface_distance,
    voxel_iou,
)
from mvsk.raster import MultiSurface, render_multisurface
from mvsk.shapes import icosphere, make_shape
from mvsk.volumetric import VoxelGrid

from conftest import unit_square


def grid(cells, dims=4, frame=OBJECT):
    occ = np.zeros((dims,) * 3, dtype=bool)
    for c in cells:
        occ[c] = True
    return VoxelGrid(occ, np.zeros(3), 2.0, frame)


def point_triangle_oracle(p, a, b, c):
    """Closest distance by plane projection, falling back to the three edges."""
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    q = p - ((p - a) @ n) * n
    # barycentric inside test on the projected point
    inside = True
    for u, v in ((a, b), (b, c), (c, a)):
        if np.cross(v - u, q - u) @ n < 0:
            inside = False
    if inside:
        return abs((p - a) @ n)

    def seg(u, v):
        t = np.clip((p - u) @ (v - u) / ((v - u) @ (v - u)), 0.0, 1.0)
        return np.linalg.norm(p - (u + t * (v - u)))

    return min(seg(a, b), seg(b, c), seg(c, a))


# --- voxel IoU ---------------------------------------------------------------


def test_voxel_iou_cases():
    a = grid([(0, 0, 0), (1, 0, 0)])
    b = grid([(1, 0, 0), (2, 0, 0)])
    assert voxel_iou(a, b) == pytest.approx(1 / 3, abs=0)
    assert voxel_iou(a, a) == 1.0
    assert voxel_iou(grid([(0, 0, 0)]), grid([(3, 3, 3)])) == 0.0
    assert voxel_iou(grid([]), grid([])) == 1.0


def test_voxel_iou_errors():
    with pytest.raises(FrameMismatch):
        voxel_iou(grid([], frame=OBJECT), grid([], frame="viewer"))
    with pytest.raises(DimMismatch):
        voxel_iou(grid([], dims=4), grid([], dims=5))


occupancies = arrays(bool, (5, 5, 5))


@given(occupancies, occupancies)
@settings(max_examples=60, deadline=None)
def test_voxel_iou_properties(x, y):
    a, b = grid([], 5).with_occupancy(x), grid([], 5).with_occupancy(y)
    v = voxel_iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == voxel_iou(b, a)
    assert voxel_iou(a, a.with_occupancy(x & y)) >= v


# --- silhouettes --------------------------------------------------------------


def squares():
    g = np.zeros((128, 128))
    p = np.zeros((128, 128))
    g[10:20, 10:20] = 1
    p[10:20, 15:25] = 1
    return p, g


def test_silhouette_iou_cases():
    p, g = squares()
    assert silhouette_iou(p, g) == 50 / 150
    assert silhouette_iou(g, g) == 1.0
    assert silhouette_iou(1 - g, g) == 0.0
    assert silhouette_iou(np.zeros((8, 8)), np.zeros((8, 8))) == 1.0
    assert silhouette_iou(p, g) == silhouette_iou(g, p)


def test_silhouette_iou_threshold_and_stack():
    p, g = squares()
    assert silhouette_iou(0.6 * p, g) == 50 / 150
    assert silhouette_iou(0.4 * p, g) == 0.0
    assert silhouette_iou(np.stack([p, g]), np.stack([g, g])) == pytest.approx((1 / 3 + 1) / 2)
    with pytest.raises(ResolutionMismatch):
        silhouette_iou(np.zeros((8, 8)), np.zeros((9, 9)))


# --- sampling -------------------------------------------------------------------


def test_sample_count_unit_square():
    pts = sample_surface(unit_square())
    assert abs(len(pts) - 300) <= 15
    assert np.all(np.abs(pts[:, 2]) < 1e-9)
    assert np.all((pts[:, :2] >= -1e-12) & (pts[:, :2] <= 1 + 1e-12))


def test_samples_on_surface():
    mesh = make_shape("open-cup", np.random.default_rng(1))
    pts = sample_surface(mesh, SurfaceSampler(seed=3))
    assert np.all(TriangleBVH(mesh).distance(pts) < 1e-9)


def test_area_proportional_counts():
    V = np.array([[0, 0, 0], [3, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1]], float)
    mesh = TriMesh(V, np.array([[0, 1, 2], [3, 4, 5]]))
    pts = sample_surface(mesh, SurfaceSampler(density=2000))
    upper = np.count_nonzero(pts[:, 2] > 0.5)
    lower = len(pts) - upper
    assert lower / upper == pytest.approx(3.0, rel=0.1)


def test_sampling_deterministic():
    m = icosphere(2)
    np.testing.assert_array_equal(sample_surface(m, SurfaceSampler(seed=5)), sample_surface(m, SurfaceSampler(seed=5)))
    assert not np.array_equal(sample_surface(m, SurfaceSampler(seed=5)), sample_surface(m, SurfaceSampler(seed=6)))


def test_zero_area():
    flat = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), np.array([[0, 1, 2]]))
    with pytest.raises(ZeroArea):
        sample_surface(flat)
    with pytest.raises(ZeroArea):
        surface_distance(flat, icosphere(1))


# --- point-to-triangle distance ----------------------------------------------------


def test_bvh_matches_brute_force_exactly():
    rng = np.random.default_rng(20)
    for q in range(20):
        mesh = make_shape(["box-table", "slat-chair", "open-cup", "superellipsoid", "bar-frame"][q % 5], rng)
        P = rng.uniform(-1.2, 1.2, (50, 3))
        np.testing.assert_array_equal(TriangleBVH(mesh).distance(P), brute_force_distance(P, mesh))


def test_distance_matches_numpy_oracle():
    rng = np.random.default_rng(21)
    mesh = make_shape("superellipsoid", rng)
    P = rng.uniform(-1, 1, (20, 3))
    want = [min(point_triangle_oracle(p, *tri) for tri in mesh.corners) for p in P]
    np.testing.assert_allclose(TriangleBVH(mesh).distance(P), want, rtol=0, atol=1e-12)


# --- surface distance ---------------------------------------------------------------


def test_self_distance_small():
    m = make_shape("slat-chair", np.random.default_rng(3))
    assert surface_distance(m, m) < 1e-3


def test_concentric_spheres():
    d = surface_distance(icosphere(5, 1.0), icosphere(5, 1.1))
    assert d == pytest.approx(0.075, abs=0.005)
    raw = surface_distance(icosphere(5, 1.0), icosphere(5, 1.1), normalize=False)
    assert raw == pytest.approx(0.1, abs=2e-3)


def test_mean_chord_monte_carlo():
    # analytic mean chord of the unit sphere is 4/3
    rng = np.random.default_rng(9)
    x = rng.normal(size=(200_000, 3))
    y = rng.normal(size=(200_000, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    assert np.linalg.norm(x - y, axis=1).mean() == pytest.approx(4 / 3, abs=5e-3)


def test_surface_distance_symmetric_and_scale_invariant():
    a = make_shape("superellipsoid", np.random.default_rng(4))
    b = make_shape("superellipsoid", np.random.default_rng(5))
    assert surface_distance(a, b) == pytest.approx(surface_distance(b, a), rel=0.05)
    s = 0.37
    scaled = surface_distance(TriMesh(a.vertices * s, a.triangles), TriMesh(b.vertices * s, b.triangles),
                              SurfaceSampler(density=300 / s**2))
    assert scaled == pytest.approx(surface_distance(a, b), rel=0.05)


# --- depth error ---------------------------------------------------------------------


def test_depth_error_cases():
    rng = np.random.default_rng(0)
    gt = rng.uniform(-0.5, 0.5, (16, 16))
    sil = np.zeros((16, 16))
    sil[4:12, 4:12] = 1
    assert depth_error(gt, gt, sil) == 0.0
    assert depth_error(gt + 0.1, gt, sil) == pytest.approx(0.01, abs=1e-15)
    assert depth_error(np.full((16, 16), np.inf), gt, sil) == MISS_PENALTY == 0.25
    with pytest.raises(EmptyMask):
        depth_error(gt, gt, np.zeros((16, 16)))
    with pytest.raises(ResolutionMismatch):
        depth_error(gt[:8], gt, sil)


def test_multisurface_depth_error_zero_for_oracle(sphere_ms):
    mse, rmse = multisurface_depth_error(sphere_ms, sphere_ms)
    assert mse == 0.0 and rmse == 0.0


# --- projection loss ------------------------------------------------------------------


@pytest.fixture(scope="module")
def sphere_ms():
    return render_multisurface(icosphere(3, 0.5), build_view_rig(CANONICAL_DIR, 6, OBJECT), 48)


def perturbed(ms, sil=None, dz=0.0):
    s = ms.silhouettes if sil is None else sil
    return MultiSurface(s, ms.depth_front + dz, ms.depth_back + dz, ms.rig)


def test_loss_of_exact_prediction(sphere_ms):
    loss = projection_loss(sphere_ms, sphere_ms)
    assert 0.0 <= loss <= 0.2 * -math.log1p(-1e-7) * (1 + 1e-6)


def test_loss_k_zero_is_masked_mse(sphere_ms):
    pred = perturbed(sphere_ms, np.clip(sphere_ms.silhouettes * 0.7 + 0.1, 0, 1), 0.03)
    assert abs(projection_loss(pred, sphere_ms, k=0.0) - masked_depth_mse(pred, sphere_ms)) <= 1e-12
    assert masked_depth_mse(pred, sphere_ms) == pytest.approx(0.03**2, rel=1e-9)


def test_loss_half_probability(sphere_ms):
    pred = perturbed(sphere_ms, np.full_like(sphere_ms.silhouettes, 0.5), 0.02)
    want = 0.2 * math.log(2) + 0.8 * masked_depth_mse(pred, sphere_ms)
    assert projection_loss(pred, sphere_ms) == pytest.approx(want, abs=1e-12)


@given(st.floats(0.0, 1.0), st.floats(-0.1, 0.1))
@settings(max_examples=25, deadline=None)
def test_loss_nonnegative(k, dz):
    ms = _small_ms()
    pred = perturbed(ms, np.clip(ms.silhouettes * 0.8 + 0.1, 0, 1), dz)
    assert projection_loss(pred, ms, k=k) >= 0.0


_SMALL = []


def _small_ms():
    if not _SMALL:
        _SMALL.append(render_multisurface(icosphere(2, 0.5), build_view_rig(CANONICAL_DIR, 6, OBJECT), 16))
    return _SMALL[0]


def test_loss_rejects_bad_k(sphere_ms):
    with pytest.raises(ValueError):
        projection_loss(sphere_ms, sphere_ms, k=1.5)


# --- records ----------------------------------------------------------------------------


def test_record_roundtrip():
    r = EvalRecord("cup-00-v01", "viewer", "NovelView", "voxels", voxel_iou=0.5, extra={"n": 3})
    back = EvalRecord.from_json(r.to_json())
    assert back == r
    assert back.metrics() == {"voxel_iou": 0.5}
