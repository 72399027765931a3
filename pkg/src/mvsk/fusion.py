"""Turning a multi-surface prediction into one shape.

Three routes: an oriented point cloud (every silhouette pixel back-projected at
its front and back depth), depth-interval carving into a voxel grid, and a
truncated signed distance field averaged over the branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoObservations
from .geometry import OBJECT, OrthoCamera
from .meshio import load_point_cloud, save_point_cloud
from .raster import MultiSurface, SurfaceBranch, depth_quantization_step, pixel_centers
from .volumetric import GridSpec, ScalarField, VoxelGrid, object_grid, viewer_grid

THRESHOLD = 0.5
TRUNCATION_VOXELS = 2.5


@dataclass(frozen=True)
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray
    view_index: np.ndarray

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "OrientedPointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    @staticmethod
    def concatenate(clouds) -> "OrientedPointCloud":
        clouds = list(clouds)
        if not clouds:
            return OrientedPointCloud.empty()
        return OrientedPointCloud(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.normals for c in clouds]),
            np.concatenate([c.view_index for c in clouds]),
        )

    def save(self, path, binary=True) -> None:
        save_point_cloud(path, self.points, self.normals, self.view_index, binary=binary)

    @classmethod
    def load(cls, path) -> "OrientedPointCloud":
        P, N = load_point_cloud(path)
        if N is None:
            N = np.zeros_like(P)
        return cls(P, N, np.zeros(len(P), dtype=np.int64))


def _gradient(depth: np.ndarray, mask: np.ndarray, h: float, axis: int) -> np.ndarray:
    """d(depth)/d(coord) along image ``axis``: central inside the mask, one-sided at its border."""
    d = np.where(mask, depth, 0.0)
    fwd_ok = np.zeros_like(mask)
    bwd_ok = np.zeros_like(mask)
    fwd = np.zeros_like(d)
    bwd = np.zeros_like(d)
    if axis == 1:
        fwd[:, :-1] = d[:, 1:] - d[:, :-1]
        fwd_ok[:, :-1] = mask[:, 1:] & mask[:, :-1]
        bwd[:, 1:] = d[:, 1:] - d[:, :-1]
        bwd_ok[:, 1:] = mask[:, 1:] & mask[:, :-1]
    else:
        fwd[:-1] = d[1:] - d[:-1]
        fwd_ok[:-1] = mask[1:] & mask[:-1]
        bwd[1:] = d[1:] - d[:-1]
        bwd_ok[1:] = mask[1:] & mask[:-1]
    both = fwd_ok & bwd_ok
    g = np.where(both, 0.5 * (fwd + bwd), np.where(fwd_ok, fwd, np.where(bwd_ok, bwd, 0.0)))
    return g / h


def _surface_normals(depth, mask, camera: OrthoCamera, h: float, facing: float) -> np.ndarray:
    # surface p = x r + y u + D d; tangents r + Dx d and u + Dy d.
    # Column index grows with x, row index grows with -y.
    dx = _gradient(depth, mask, h, axis=1)
    dy = -_gradient(depth, mask, h, axis=0)
    n = facing * (dx[..., None] * camera.right + dy[..., None] * camera.up - camera.view_dir)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def backproject(branch: SurfaceBranch, camera: OrthoCamera, threshold: float = THRESHOLD,
                view_index: int = 0) -> OrientedPointCloud:
    """Front and back surface points of every silhouette pixel, with normals.

    Front normals face the camera; back normals face away from it. Both come
    from finite differences of the respective depth map.
    """
    res = branch.res
    h = 2.0 / res
    front, back = branch.depth_front, branch.depth_back
    mask = (branch.silhouette >= threshold) & np.isfinite(front) & np.isfinite(back)
    if not mask.any():
        return OrientedPointCloud.empty()
    nf = _surface_normals(front, mask, camera, h, 1.0)
    nb = _surface_normals(back, mask, camera, h, -1.0)
    xs, ys = pixel_centers(res)
    rows, cols = np.nonzero(mask)
    base = camera.origin + xs[cols, None] * camera.right + ys[rows, None] * camera.up
    pf = base + front[rows, cols, None] * camera.view_dir
    pb = base + back[rows, cols, None] * camera.view_dir
    n = len(rows)
    P = np.empty((2 * n, 3))
    N = np.empty((2 * n, 3))
    P[0::2], P[1::2] = pf, pb
    N[0::2], N[1::2] = nf[rows, cols], nb[rows, cols]
    return OrientedPointCloud(P, N, np.full(2 * n, view_index, dtype=np.int64))


def fuse_point_cloud(ms: MultiSurface, threshold: float = THRESHOLD) -> OrientedPointCloud:
    """All branches back-projected into the rig's output frame, in branch order."""
    cams = ms.rig.frame_cameras()
    return OrientedPointCloud.concatenate(
        backproject(ms.branch(k), cams[k], threshold, view_index=k) for k in range(len(ms))
    )


def frame_grid(frame_mode: str, dims: int) -> GridSpec:
    return object_grid(dims) if frame_mode == OBJECT else viewer_grid(dims)


def _project(cam: OrthoCamera, pts: np.ndarray, res: int):
    """Pixel indices of each point, whether it lands in the image, and its depth."""
    xyd = cam.to_camera(pts)
    j = np.floor((xyd[:, 0] + 1.0) * (res / 2.0)).astype(np.int64)
    i = np.floor((1.0 - xyd[:, 1]) * (res / 2.0)).astype(np.int64)
    inside = (i >= 0) & (i < res) & (j >= 0) & (j < res)
    return np.clip(i, 0, res - 1), np.clip(j, 0, res - 1), inside, xyd[:, 2]


def carve_margin() -> float:
    """Depth slack for carving: half a depth quantization step."""
    return 0.5 * depth_quantization_step()


def _view_test(cam: OrthoCamera, pts: np.ndarray, sil, front, back, threshold: float, margin: float):
    """Per-point (lands in image, silhouette test, silhouette-and-depth test) for one branch.

    A point's projection is surrounded by four pixel centres. It passes the
    silhouette test if any of them is foreground. When all four are foreground
    the depth interval is bilinearly interpolated; otherwise the point passes
    if it lies in the depth interval of any foreground neighbour.
    """
    res = sil.shape[0]
    xyd = cam.to_camera(pts)
    z = xyd[:, 2]
    fx = (xyd[:, 0] + 1.0) * (res / 2.0) - 0.5
    fy = (1.0 - xyd[:, 1]) * (res / 2.0) - 0.5
    inside = (fx > -0.5) & (fx < res - 0.5) & (fy > -0.5) & (fy < res - 0.5)
    j0 = np.floor(fx).astype(np.int64)
    i0 = np.floor(fy).astype(np.int64)
    tx, ty = fx - j0, fy - i0
    n = len(pts)
    any_fg = np.zeros(n, dtype=bool)
    all_fg = np.ones(n, dtype=bool)
    any_ok = np.zeros(n, dtype=bool)
    f_acc = np.zeros(n)
    b_acc = np.zeros(n)
    for a in (0, 1):
        for b in (0, 1):
            i, j = i0 + a, j0 + b
            w = (ty if a else 1.0 - ty) * (tx if b else 1.0 - tx)
            valid = (i >= 0) & (i < res) & (j >= 0) & (j < res)
            ii, jj = np.clip(i, 0, res - 1), np.clip(j, 0, res - 1)
            fg = valid & (sil[ii, jj] >= threshold)
            f = np.where(fg, front[ii, jj], 0.0)
            bk = np.where(fg, back[ii, jj], 0.0)
            any_fg |= fg
            all_fg &= fg
            any_ok |= fg & (z >= f - margin) & (z <= bk + margin)
            f_acc += w * f
            b_acc += w * bk
    interp_ok = (z >= f_acc - margin) & (z <= b_acc + margin)
    return inside, any_fg, np.where(all_fg, interp_ok, any_ok)


def carve_occupancy(ms: MultiSurface, dims: int = 48, threshold: float = THRESHOLD,
                    use_depth: bool = True, margin: float | None = None) -> VoxelGrid:
    """Silhouette carving tightened by the per-view [front, back] depth interval.

    A voxel survives if every branch whose image its centre projects into
    keeps it: inside the silhouette and between the front and back depth
    (widened by ``margin``). Voxels that fall outside every image are empty.
    With ``use_depth=False`` this is the plain visual hull.
    """
    spec = frame_grid(ms.frame_mode, dims)
    eps = carve_margin() if margin is None else margin
    C = spec.centers().reshape(-1, 3)
    occ = np.ones(len(C), dtype=bool)
    seen = np.zeros(len(C), dtype=bool)
    for k, cam in enumerate(ms.rig.frame_cameras()):
        inside, fg, ok = _view_test(cam, C, ms.silhouettes[k], ms.depth_front[k], ms.depth_back[k], threshold, eps)
        occ &= ~inside | (ok if use_depth else fg)
        seen |= inside
    occ &= seen
    return VoxelGrid(occ.reshape((dims,) * 3), spec.center, spec.side, spec.frame)


def fuse_tsdf(ms: MultiSurface, dims: int = 48, truncation_voxels: float = TRUNCATION_VOXELS,
              threshold: float = THRESHOLD) -> ScalarField:
    """Average of per-branch projective signed distances, truncated to +-tau.

    For one branch the signed distance of a voxel at depth z is
    ``max(d_front - z, z - d_back)``: positive in front of the front surface or
    behind the back surface, negative between them. Only branches whose
    silhouette covers the voxel's pixel contribute (weight 1).
    """
    if truncation_voxels <= 0:
        raise ValueError("truncation must be positive")
    spec = frame_grid(ms.frame_mode, dims)
    tau = truncation_voxels * spec.voxel_size
    C = spec.centers().reshape(-1, 3)
    total = np.zeros(len(C))
    weight = np.zeros(len(C))
    for k, cam in enumerate(ms.rig.frame_cameras()):
        i, j, inside, z = _project(cam, C, ms.res)
        f = ms.depth_front[k][i, j]
        b = ms.depth_back[k][i, j]
        w = inside & (ms.silhouettes[k][i, j] >= threshold) & np.isfinite(f) & np.isfinite(b)
        sdf = np.clip(np.maximum(f - z, z - b), -tau, tau)
        total[w] += sdf[w]
        weight[w] += 1.0
    if not weight.any():
        raise NoObservations("no branch observes any voxel")
    values = np.full(len(C), tau)
    seen = weight > 0
    values[seen] = total[seen] / weight[seen]
    shape = (dims,) * 3
    return ScalarField(values.reshape(shape), weight.reshape(shape), spec, tau)
