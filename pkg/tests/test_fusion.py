import numpy as np
import pytest

from mvsk.errors import NoObservations
from mvsk.fusion import (
    OrientedPointCloud,
    backproject,
    carve_occupancy,
    fuse_point_cloud,
    fuse_tsdf,
)
from mvsk.geometry import CANONICAL_DIR, OBJECT, VIEWER, OrthoCamera, build_view_rig, viewer_frame_transform
from mvsk.metrics import voxel_iou
from mvsk.predictors import MULTISURFACE, make_targets
from mvsk.raster import MultiSurface, depth_quantization_step, render_branch, render_multisurface
from mvsk.shapes import box_mesh, icosphere, make_shape
from mvsk.volumetric import marching_cubes, object_grid, viewer_voxel_target, voxelize_solid

from conftest import random_dirs

RES = 96


@pytest.fixture(scope="module")
def sphere_ms():
    rig = build_view_rig(CANONICAL_DIR, 20, OBJECT)
    return render_multisurface(icosphere(4, 0.5), rig, RES)


@pytest.fixture(scope="module")
def box_ms():
    rig = build_view_rig(CANONICAL_DIR, 20, OBJECT)
    return render_multisurface(box_mesh((-0.5, -0.3, -0.4), (0.5, 0.3, 0.4)), rig, RES)


def test_center_pixel_of_sphere():
    cam = OrthoCamera.looking((0, 0, -1))
    br = render_branch(icosphere(5, 0.5), cam, 64)
    pc = backproject(br, cam)
    # nearest front point to the optical axis
    k = np.argmin(np.linalg.norm(pc.points[0::2, :2], axis=1))
    p, n = pc.points[2 * k], pc.normals[2 * k]
    np.testing.assert_allclose(p, [0, 0, 0.5], atol=0.02)
    np.testing.assert_allclose(n, [0, 0, 1], atol=0.05)


def test_empty_silhouette_gives_empty_cloud():
    cam = OrthoCamera.looking((0, 0, -1))
    br = render_branch(icosphere(2, 0.5), cam, 16)
    blank = type(br)(np.zeros_like(br.silhouette), br.depth_front, br.depth_back)
    pc = backproject(blank, cam)
    assert len(pc) == 0 and pc.points.shape == (0, 3)


def test_flat_face_normals():
    cam = OrthoCamera.looking((0, 0, -1))
    br = render_branch(box_mesh((-0.4, -0.4, -0.4), (0.4, 0.4, 0.4)), cam, 64)
    pc = backproject(br, cam)
    np.testing.assert_allclose(pc.normals[0::2], np.tile(-cam.view_dir, (len(pc) // 2, 1)), atol=1e-3)
    np.testing.assert_allclose(pc.normals[1::2], np.tile(cam.view_dir, (len(pc) // 2, 1)), atol=1e-3)


def test_normals_unit_and_points_project_into_silhouette(sphere_ms):
    pc = fuse_point_cloud(sphere_ms)
    np.testing.assert_allclose(np.linalg.norm(pc.normals, axis=1), 1.0, atol=1e-12)
    cams = sphere_ms.rig.frame_cameras()
    for k in (0, 4, 9):
        sel = pc.view_index == k
        xyd = cams[k].to_camera(pc.points[sel])
        j = np.floor((xyd[:, 0] + 1) * RES / 2).astype(int)
        i = np.floor((1 - xyd[:, 1]) * RES / 2).astype(int)
        assert np.all(sphere_ms.silhouettes[k][i, j] >= 0.5)


def test_sphere_cloud_near_surface(sphere_ms):
    pc = fuse_point_cloud(sphere_ms)
    err = np.abs(np.linalg.norm(pc.points, axis=1) - 0.5)
    assert np.mean(err <= 2 * 2.0 / RES) >= 0.95


def test_single_branch_matches_backproject(sphere_ms):
    rig = sphere_ms.rig
    one = MultiSurface(sphere_ms.silhouettes[:1], sphere_ms.depth_front[:1], sphere_ms.depth_back[:1],
                       _subrig(rig, [0]))
    a = fuse_point_cloud(one)
    b = backproject(sphere_ms.branch(0), rig.frame_cameras()[0])
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.normals, b.normals)


def test_ordering_is_branch_then_row_major(sphere_ms):
    pc = fuse_point_cloud(sphere_ms)
    assert np.all(np.diff(pc.view_index) >= 0)
    assert np.array_equal(np.unique(pc.view_index), np.arange(len(sphere_ms)))


def test_antipodal_branches_agree():
    # camera k and its antipode see the same segment: front of one is back of the other
    mesh = make_shape("superellipsoid", np.random.default_rng(2))
    cam = OrthoCamera.looking((0.3, -0.2, -1))
    a = backproject(render_branch(mesh, cam, 64), cam)
    b = backproject(render_branch(mesh, cam.antipode(), 64), cam.antipode())
    from scipy.spatial import cKDTree

    d, _ = cKDTree(b.points).query(a.points)
    assert np.quantile(d, 0.95) <= 2.0 / 64


def test_point_cloud_roundtrip(tmp_path, sphere_ms):
    pc = fuse_point_cloud(sphere_ms)
    pc.save(tmp_path / "pc.ply")
    back = OrientedPointCloud.load(tmp_path / "pc.ply")
    np.testing.assert_allclose(back.points, pc.points, atol=1e-6)
    np.testing.assert_allclose(back.normals, pc.normals, atol=1e-6)


def test_carve_sphere_oracle(sphere_ms):
    gt = voxelize_solid(icosphere(4, 0.5), object_grid(48))
    assert voxel_iou(carve_occupancy(sphere_ms, 48), gt) >= 0.95


def test_carve_box_oracle(box_ms):
    gt = voxelize_solid(box_mesh((-0.5, -0.3, -0.4), (0.5, 0.3, 0.4)), object_grid(48))
    assert voxel_iou(carve_occupancy(box_ms, 48), gt) >= 0.95


@pytest.mark.parametrize("category", ["open-cup", "slat-chair"])
def test_carve_within_visual_hull(category):
    ms = make_targets(make_shape(category, np.random.default_rng(4)), CANONICAL_DIR, OBJECT, MULTISURFACE, res=64).surfaces
    carved = carve_occupancy(ms, 32).occupancy
    hull = carve_occupancy(ms, 32, use_depth=False).occupancy
    assert not np.any(carved & ~hull)


def test_carve_monotone_in_branches():
    mesh = make_shape("open-cup", np.random.default_rng(8))
    ms = make_targets(mesh, CANONICAL_DIR, OBJECT, MULTISURFACE, res=64).surfaces
    full = carve_occupancy(ms, 32).occupancy
    # drop branches to get a smaller consistent rig
    for keep in (np.arange(3), np.arange(7)):
        sub = MultiSurface(ms.silhouettes[keep], ms.depth_front[keep], ms.depth_back[keep],
                           _subrig(ms.rig, keep))
        fewer = carve_occupancy(sub, 32).occupancy
        assert not np.any(full & ~fewer)


def _subrig(rig, keep):
    from dataclasses import replace

    return replace(rig, pairs=tuple(rig.pairs[k] for k in keep))


def test_tsdf_sphere_radii(sphere_ms):
    field = fuse_tsdf(sphere_ms, 48)
    assert np.all(np.abs(field.values) <= field.truncation + 1e-15)
    assert np.all(field.weights >= 0)
    mesh = marching_cubes(field)
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert np.all(np.abs(r - 0.5) <= 2.0 / 48)


def test_tsdf_damps_single_view_noise(sphere_ms):
    h = 2.0 / 48
    base = fuse_tsdf(sphere_ms, 48)
    f = sphere_ms.depth_front.copy()
    b = sphere_ms.depth_back.copy()
    f[3] += 0.5 * h
    b[3] += 0.5 * h
    moved = fuse_tsdf(MultiSurface(sphere_ms.silhouettes, f, b, sphere_ms.rig), 48)
    seen = base.weights > 0
    bound = 0.5 * h / base.weights[seen]
    assert np.all(np.abs(moved.values[seen] - base.values[seen]) <= bound + 1e-12)


def test_tsdf_no_observations(sphere_ms):
    blank = MultiSurface(np.zeros_like(sphere_ms.silhouettes), sphere_ms.depth_front,
                         sphere_ms.depth_back, sphere_ms.rig)
    with pytest.raises(NoObservations):
        fuse_tsdf(blank, 16)


def test_tsdf_rejects_bad_truncation(sphere_ms):
    with pytest.raises(ValueError):
        fuse_tsdf(sphere_ms, 16, truncation_voxels=0)


def test_viewer_fusion_matches_rotated_target(rng):
    mesh = make_shape("superellipsoid", rng)
    for d in random_dirs(rng, 2):
        ms = make_targets(mesh, d, VIEWER, MULTISURFACE, res=RES).surfaces
        cam0 = ms.rig.cameras[0]
        gt = viewer_voxel_target(mesh, cam0, 48)
        assert voxel_iou(carve_occupancy(ms, 48), gt) >= 0.9
        # the cloud, mapped back to the model frame, hugs the mesh
        from mvsk.metrics import TriangleBVH

        P = viewer_frame_transform(cam0).inverse().apply(fuse_point_cloud(ms).points)
        assert np.quantile(TriangleBVH(mesh).distance(P), 0.95) <= 2.0 / RES + depth_quantization_step()
