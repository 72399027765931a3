"""Evaluation measures: voxel IoU, surface distance, silhouette IoU, depth error, projection loss."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import DimMismatch, EmptyMask, FrameMismatch, ResolutionMismatch, ZeroArea
from .geometry import TriMesh
from .raster import MultiSurface
from .volumetric import VoxelGrid

MISS_PENALTY = 0.25  # squared depth error charged for a foreground pixel predicted as background
PROB_EPS = 1e-7
NORMALIZER_PAIRS = 10_000


# ---------------------------------------------------------------------------
# Voxels
# ---------------------------------------------------------------------------


def voxel_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """|a and b| / |a or b|, 1.0 when both grids are empty."""
    if a.frame != b.frame:
        raise FrameMismatch(f"{a.frame} grid vs {b.frame} grid")
    if a.dims != b.dims:
        raise DimMismatch(f"{a.dims}^3 vs {b.dims}^3")
    union = np.count_nonzero(a.occupancy | b.occupancy)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.occupancy & b.occupancy) / union


# ---------------------------------------------------------------------------
# Surface sampling and distance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSampler:
    density: float = 300.0
    seed: int = 0

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


def sample_surface(mesh: TriMesh, sampler: SurfaceSampler = SurfaceSampler(), stream: int = 0) -> np.ndarray:
    """round(density * area) points, triangle picked with probability proportional to area."""
    areas = mesh.triangle_areas()
    total = float(areas.sum()) if len(areas) else 0.0
    if not total > 0.0:
        raise ZeroArea("cannot sample a mesh with zero area")
    rng = sampler.rng(stream)
    n = max(1, int(round(sampler.density * total)))
    counts = rng.multinomial(n, areas / total)
    tri = np.repeat(np.arange(len(areas)), counts)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    c = mesh.corners[tri]
    return c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + v[:, None] * (c[:, 2] - c[:, 0])


class TriangleBVH:
    """Bounding-volume hierarchy over triangles for exact closest-distance queries."""

    LEAF = 4

    def __init__(self, mesh: TriMesh):
        self.corners = np.ascontiguousarray(mesh.corners)
        n = len(self.corners)
        if n == 0:
            raise ZeroArea("empty mesh")
        tlo = self.corners.min(axis=1)
        thi = self.corners.max(axis=1)
        cen = 0.5 * (tlo + thi)
        order = np.arange(n)
        lo, hi, left, right, start, count = [], [], [], [], [], []
        # iterative build: (node id, start, end) ranges over ``order``
        todo = [(0, 0, n)]
        lo.append(None); hi.append(None); left.append(-1); right.append(-1); start.append(0); count.append(n)
        while todo:
            nd, s, e = todo.pop()
            idx = order[s:e]
            lo[nd] = tlo[idx].min(axis=0)
            hi[nd] = thi[idx].max(axis=0)
            if e - s <= self.LEAF:
                start[nd], count[nd] = s, e - s
                continue
            axis = int(np.argmax(cen[idx].max(axis=0) - cen[idx].min(axis=0)))
            srt = idx[np.argsort(cen[idx, axis], kind="stable")]
            order[s:e] = srt
            mid = s + (e - s) // 2
            for child, (cs, ce) in enumerate(((s, mid), (mid, e))):
                cid = len(lo)
                lo.append(None); hi.append(None); left.append(-1); right.append(-1); start.append(cs); count.append(ce - cs)
                if child == 0:
                    left[nd] = cid
                else:
                    right[nd] = cid
                todo.append((cid, cs, ce))
        self.order = order
        self.node_lo = np.array(lo)
        self.node_hi = np.array(hi)
        self.node_left = np.array(left, dtype=np.int64)
        self.node_right = np.array(right, dtype=np.int64)
        self.node_start = np.array(start, dtype=np.int64)
        self.node_count = np.array(count, dtype=np.int64)

    def sqdist(self, points) -> np.ndarray:
        P = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return _kernels.bvh_sqdist(
            P, self.corners, self.order, self.node_lo, self.node_hi,
            self.node_left, self.node_right, self.node_start, self.node_count,
        )

    def distance(self, points) -> np.ndarray:
        return np.sqrt(self.sqdist(points))


def brute_force_distance(points, mesh: TriMesh) -> np.ndarray:
    P = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    return np.sqrt(_kernels.brute_force_sqdist(P, np.ascontiguousarray(mesh.corners)))


def mean_pairwise_distance(points: np.ndarray, rng: np.random.Generator, pairs: int = NORMALIZER_PAIRS) -> float:
    i = rng.integers(0, len(points), pairs)
    j = rng.integers(0, len(points), pairs)
    return math.fsum(np.linalg.norm(points[i] - points[j], axis=1)) / pairs


def surface_distance(gt: TriMesh, rec: TriMesh, sampler: SurfaceSampler = SurfaceSampler(),
                     normalize: bool = True) -> float:
    """Symmetric mean closest-point distance, divided by the mean distance between GT samples."""
    if not gt.area() > 0 or not rec.area() > 0:
        raise ZeroArea("surface distance needs two meshes with positive area")
    ps = sample_surface(gt, sampler, stream=0)
    qs = sample_surface(rec, sampler, stream=1)
    d_gt = math.fsum(TriangleBVH(rec).distance(ps)) / len(ps)
    d_rec = math.fsum(TriangleBVH(gt).distance(qs)) / len(qs)
    d = 0.5 * (d_gt + d_rec)
    if not normalize:
        return d
    return d / mean_pairwise_distance(ps, sampler.rng(2))


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def _check_res(a, b):
    if np.shape(a) != np.shape(b):
        raise ResolutionMismatch(f"{np.shape(a)} vs {np.shape(b)}")


def _iou2d(p: np.ndarray, g: np.ndarray) -> float:
    union = np.count_nonzero(p | g)
    return 1.0 if union == 0 else np.count_nonzero(p & g) / union


def silhouette_iou(pred, gt, threshold: float = 0.5) -> float:
    """Pixel IoU after thresholding ``pred``; stacks and MultiSurfaces average over branches."""
    if isinstance(pred, MultiSurface):
        pred = pred.silhouettes
    if isinstance(gt, MultiSurface):
        gt = gt.silhouettes
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    _check_res(pred, gt)
    p = pred >= threshold
    g = gt >= 0.5
    if p.ndim == 2:
        return _iou2d(p, g)
    return math.fsum(_iou2d(p[k], g[k]) for k in range(len(p))) / len(p)


def _depth_terms(pred: np.ndarray, gt: np.ndarray, gt_sil: np.ndarray, miss_penalty: float):
    mask = np.asarray(gt_sil) >= 0.5
    hit = mask & np.isfinite(pred)
    sq = (pred[hit] - gt[hit]) ** 2
    misses = int(np.count_nonzero(mask & ~np.isfinite(pred)))
    return math.fsum(sq) + misses * miss_penalty, int(np.count_nonzero(mask))


def depth_error(pred: np.ndarray, gt: np.ndarray, gt_silhouette: np.ndarray,
                miss_penalty: float = MISS_PENALTY) -> float:
    """Mean squared depth error over the GT silhouette; background predictions cost ``miss_penalty``."""
    pred = np.asarray(pred, dtype=np.float64)
    _check_res(pred, gt)
    _check_res(pred, gt_silhouette)
    total, n = _depth_terms(pred, np.asarray(gt, dtype=np.float64), gt_silhouette, miss_penalty)
    if n == 0:
        raise EmptyMask("ground-truth silhouette is empty")
    return total / n


def multisurface_depth_error(pred: MultiSurface, gt: MultiSurface,
                             miss_penalty: float = MISS_PENALTY) -> tuple[float, float]:
    """(MSE, RMSE) averaged over every front and back map whose GT silhouette is non-empty."""
    _check_res(pred.silhouettes, gt.silhouettes)
    errs = []
    for k in range(len(gt)):
        if not np.any(gt.silhouettes[k] >= 0.5):
            continue
        for p, g in ((pred.depth_front[k], gt.depth_front[k]), (pred.depth_back[k], gt.depth_back[k])):
            errs.append(depth_error(p, g, gt.silhouettes[k], miss_penalty))
    if not errs:
        raise EmptyMask("every ground-truth silhouette is empty")
    mse = math.fsum(errs) / len(errs)
    rmse = math.fsum(math.sqrt(e) for e in errs) / len(errs)
    return mse, rmse


def silhouette_bce(pred: np.ndarray, gt: np.ndarray) -> float:
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(gt, dtype=np.float64)
    ll = y * np.log(p) + (1.0 - y) * np.log1p(-p)
    return -math.fsum(ll.ravel()) / ll.size


def masked_depth_mse(pred: MultiSurface, gt: MultiSurface) -> float:
    """Squared depth error pooled over every GT-foreground pixel with a finite prediction."""
    total, n = 0.0, 0
    for k in range(len(gt)):
        mask = gt.silhouettes[k] >= 0.5
        for p, g in ((pred.depth_front[k], gt.depth_front[k]), (pred.depth_back[k], gt.depth_back[k])):
            hit = mask & np.isfinite(p)
            total += math.fsum(((p[hit] - g[hit]) ** 2).ravel())
            n += int(np.count_nonzero(hit))
    return total / n if n else 0.0


def projection_loss(pred: MultiSurface, gt: MultiSurface, k: float = 0.2) -> float:
    """k * silhouette cross-entropy + (1 - k) * masked depth MSE."""
    _check_res(pred.silhouettes, gt.silhouettes)
    if not 0.0 <= k <= 1.0:
        raise ValueError("k must lie in [0, 1]")
    ls = silhouette_bce(pred.silhouettes, gt.silhouettes) if k > 0 else 0.0
    ld = masked_depth_mse(pred, gt)
    return k * ls + (1.0 - k) * ld


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class EvalRecord:
    example_id: str
    frame: str
    split: str
    representation: str
    voxel_iou: float | None = None
    surface_dist: float | None = None
    silhouette_iou: float | None = None
    depth_err: float | None = None
    depth_rmse: float | None = None
    proj_loss: float | None = None
    extra: dict = field(default_factory=dict)

    METRICS = ("voxel_iou", "surface_dist", "silhouette_iou", "depth_err", "depth_rmse", "proj_loss")

    def to_json(self) -> str:
        d = asdict(self)
        if not d["extra"]:
            d.pop("extra")
        return json.dumps(d, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "EvalRecord":
        return cls(**json.loads(line))

    def metrics(self) -> dict:
        return {m: getattr(self, m) for m in self.METRICS if getattr(self, m) is not None}
