"""Voxel grids: surface voxelization, ray-visibility solid fill, voxel targets, marching cubes.

A grid covers the axis-aligned cube of side ``side`` around ``center``;
``occupancy[i, j, k]`` is the voxel whose x, y, z index is (i, j, k). Voxel
``i`` along an axis spans ``[lo + i h, lo + (i + 1) h)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import measure

from . import _kernels
from .errors import DimMismatch, NoCrossing, OutOfWindow, ParseError
from .geometry import OBJECT, VIEWER, OrthoCamera, TriMesh, check_frame_mode, viewer_frame_transform

DEFAULT_DIMS = 48
DEFAULT_RAYS = 1000
VIEWER_CENTER = (0.0, 0.0, 1.0)

_SIX = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class GridSpec:
    dims: int = DEFAULT_DIMS
    center: tuple = (0.0, 0.0, 0.0)
    side: float = 2.0
    frame: str = OBJECT

    def __post_init__(self):
        if self.dims < 8:
            raise ValueError("grid dims must be >= 8")
        check_frame_mode(self.frame)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "side", float(self.side))

    @property
    def voxel_size(self) -> float:
        return self.side / self.dims

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * self.side

    def centers(self) -> np.ndarray:
        """(N, N, N, 3) voxel centre coordinates."""
        c = (np.arange(self.dims) + 0.5) * self.voxel_size
        lo = self.lower
        X, Y, Z = np.meshgrid(c + lo[0], c + lo[1], c + lo[2], indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def empty(self) -> "VoxelGrid":
        return VoxelGrid(np.zeros((self.dims,) * 3, dtype=bool), self.center, self.side, self.frame)


def object_grid(dims: int = DEFAULT_DIMS) -> GridSpec:
    return GridSpec(dims, (0.0, 0.0, 0.0), 2.0, OBJECT)


def viewer_grid(dims: int = DEFAULT_DIMS) -> GridSpec:
    return GridSpec(dims, VIEWER_CENTER, 2.0, VIEWER)


@dataclass(frozen=True)
class VoxelGrid:
    occupancy: np.ndarray
    center: tuple = (0.0, 0.0, 0.0)
    side: float = 2.0
    frame: str = OBJECT

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 3 or len(set(occ.shape)) != 1:
            raise ValueError(f"occupancy must be a cube, got shape {occ.shape}")
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "side", float(self.side))
        check_frame_mode(self.frame)

    @property
    def dims(self) -> int:
        return self.occupancy.shape[0]

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.dims, self.center, self.side, self.frame)

    @property
    def voxel_size(self) -> float:
        return self.side / self.dims

    def count(self) -> int:
        return int(self.occupancy.sum())

    def with_occupancy(self, occ) -> "VoxelGrid":
        return VoxelGrid(occ, self.center, self.side, self.frame)

    def same_layout(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and self.frame == other.frame
            and np.allclose(self.center, other.center)
            and np.isclose(self.side, other.side)
        )


@dataclass(frozen=True)
class ScalarField:
    """Signed distance samples at voxel centres (positive outside) with accumulation weights."""

    values: np.ndarray
    weights: np.ndarray
    spec: GridSpec
    truncation: float

    @property
    def observed(self) -> np.ndarray:
        return self.weights > 0


# ---------------------------------------------------------------------------
# Voxelization
# ---------------------------------------------------------------------------


def voxelize_surface(mesh: TriMesh, spec: GridSpec | None = None) -> VoxelGrid:
    """Hollow voxelization: the boundary layer of voxels whose centres the mesh encloses.

    Insideness of each voxel centre comes from the winding number along the
    three lattice lines through it, and a voxel is marked when its centre is
    inside and a face neighbour's centre is not. The layer blocks every
    face-connected path from the enclosed centres to the border, so filling it
    reproduces the centre-inside solid. A mesh too small to meet any lattice
    line marks the voxels holding its triangle centroids.
    """
    spec = spec or GridSpec()
    occ = np.zeros((spec.dims,) * 3, dtype=bool)
    if len(mesh.triangles):
        corners = np.ascontiguousarray((mesh.corners - spec.lower) / spec.voxel_size)
        if _kernels.mark_surface(corners, spec.dims, occ) == 0:
            idx = np.floor(corners.mean(axis=1)).astype(np.int64)
            ok = np.all((idx >= 0) & (idx < spec.dims), axis=1)
            occ[tuple(idx[ok].T)] = True
    if not occ.any():
        raise OutOfWindow("no part of the mesh lies inside the voxel window")
    return VoxelGrid(occ, spec.center, spec.side, spec.frame)


def fibonacci_directions(n: int = DEFAULT_RAYS) -> np.ndarray:
    """``n`` deterministic, nearly uniform unit vectors (Fibonacci sphere)."""
    i = np.arange(n, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * (np.pi * (3.0 - np.sqrt(5.0)))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _boundary_reachable(empty: np.ndarray) -> np.ndarray:
    labels, _ = ndimage.label(empty, structure=_SIX)
    faces = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ])
    outer = np.unique(faces[faces > 0])
    return np.isin(labels, outer)


def fill_solid(grid: VoxelGrid, n_rays: int = DEFAULT_RAYS) -> VoxelGrid:
    """Fill every empty voxel from whose centre no ray reaches the edge of the grid.

    Rays follow ``fibonacci_directions(n_rays)`` and are traversed cell by cell;
    a ray is blocked by the first occupied voxel it enters. Voxels with no
    face-connected empty path to the border cannot be reached by any ray and
    are filled without casting. The pass is repeated until nothing changes, so
    the result is a fixed point (filling it again is a no-op).
    """
    dirs = fibonacci_directions(n_rays)
    occ = grid.occupancy.copy()
    while True:
        empty = ~occ
        reachable = _boundary_reachable(empty)
        enclosed = empty & ~reachable
        cand = np.argwhere(reachable).astype(np.int64)
        hidden = _kernels.invisible_voxels(occ, cand, dirs)
        changed = bool(enclosed.any() or hidden.any())
        occ |= enclosed
        occ[tuple(cand[hidden].T)] = True
        if not changed:
            break
    return grid.with_occupancy(occ)


def voxelize_solid(mesh: TriMesh, spec: GridSpec | None = None, n_rays: int = DEFAULT_RAYS) -> VoxelGrid:
    return fill_solid(voxelize_surface(mesh, spec), n_rays)


def viewer_voxel_target(mesh: TriMesh, camera: OrthoCamera, dims: int = DEFAULT_DIMS) -> VoxelGrid:
    """Solid voxels in the input camera's frame, window of side 2 around (0, 0, 1)."""
    local = mesh.transformed(viewer_frame_transform(camera))
    return voxelize_solid(local, viewer_grid(dims))


def object_voxel_target(mesh: TriMesh, dims: int = DEFAULT_DIMS) -> VoxelGrid:
    """Solid voxels in canonical model coordinates, window of side 2 around the origin."""
    return voxelize_solid(mesh, object_grid(dims))


def inside_mask(mesh: TriMesh, spec: GridSpec) -> np.ndarray:
    """Voxel centres inside a closed mesh by ray-crossing parity along +z (reference oracle)."""
    C = spec.centers().reshape(-1, 3)
    tri = mesh.corners
    inside = np.zeros(len(C), dtype=bool)
    x0, y0 = tri[:, 0, 0], tri[:, 0, 1]
    x1, y1 = tri[:, 1, 0], tri[:, 1, 1]
    x2, y2 = tri[:, 2, 0], tri[:, 2, 1]
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    ok = np.abs(area) > 1e-15
    tri, area = tri[ok], area[ok]
    x0, y0, x1, y1, x2, y2 = (a[ok] for a in (x0, y0, x1, y1, x2, y2))
    for n, p in enumerate(C):
        # tiny irrational offsets keep the test ray off shared edges
        px, py = p[0] + 1.234e-9, p[1] + 2.345e-9
        w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
        w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
        w2 = 1.0 - w0 - w1
        hit = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not hit.any():
            continue
        z = w0[hit] * tri[hit, 0, 2] + w1[hit] * tri[hit, 1, 2] + w2[hit] * tri[hit, 2, 2]
        inside[n] = (z > p[2]).sum() % 2 == 1
    return inside.reshape((spec.dims,) * 3)


# ---------------------------------------------------------------------------
# Marching cubes
# ---------------------------------------------------------------------------


def marching_cubes(field, isolevel: float = 0.0) -> TriMesh:
    """Triangle mesh of a level set, with outward-facing winding.

    ``field`` is either a :class:`VoxelGrid` (converted to +1 inside / -1
    outside, level 0) or a :class:`ScalarField` (signed distance, positive
    outside; unobserved voxels count as outside). Samples sit at voxel centres
    and the volume is padded with outside values so the surface is closed.
    """
    if isinstance(field, VoxelGrid):
        inside_val = np.where(field.occupancy, 1.0, -1.0)
        level = 0.0
        spec = field.spec
        pad = -1.0
    elif isinstance(field, ScalarField):
        sdf = np.where(field.observed, field.values, field.truncation)
        inside_val = -sdf
        level = -float(isolevel)
        spec = field.spec
        pad = -field.truncation
    else:
        raise TypeError(f"cannot extract a surface from {type(field).__name__}")
    # the outside padding supplies the crossing for fields that are inside everywhere
    if not inside_val.max() > level:
        raise NoCrossing("the field never crosses the isolevel")
    vol = np.pad(inside_val, 1, constant_values=pad)
    verts, faces, _, _ = measure.marching_cubes(vol, level=level, method="lorensen")
    h = spec.voxel_size
    verts = spec.lower + (verts - 1.0 + 0.5) * h
    mesh = TriMesh(verts, faces.astype(np.int64)).cleaned(0.0)
    if signed_volume(mesh) < 0:
        mesh = TriMesh(mesh.vertices, mesh.triangles[:, ::-1])
    return mesh


def signed_volume(mesh: TriMesh) -> float:
    c = mesh.corners
    return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


# ---------------------------------------------------------------------------
# MSVX file format
# ---------------------------------------------------------------------------

_MSVX_HEADER = struct.Struct("<4sIB3ff")
_FRAME_CODES = {OBJECT: 0, VIEWER: 1}
_FRAME_NAMES = {v: k for k, v in _FRAME_CODES.items()}


def write_msvx(path, grid: VoxelGrid) -> None:
    """magic, u32 dim, u8 frame (0 object / 1 viewer), f32 centre xyz, f32 side, packed bits.

    Bits are row-major with x fastest, least significant bit first.
    """
    with open(path, "wb") as f:
        f.write(_MSVX_HEADER.pack(b"MSVX", grid.dims, _FRAME_CODES[grid.frame], *grid.center, grid.side))
        flat = grid.occupancy.transpose(2, 1, 0).ravel()
        f.write(np.packbits(flat, bitorder="little").tobytes())


def read_msvx(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _MSVX_HEADER.size:
        raise ParseError("truncated header", path, offset=len(raw))
    magic, dim, frame, cx, cy, cz, side = _MSVX_HEADER.unpack_from(raw)
    if magic != b"MSVX":
        raise ParseError("bad magic", path, offset=0)
    if frame not in _FRAME_NAMES:
        raise ParseError(f"unknown frame code {frame}", path, offset=8)
    n = dim ** 3
    payload = np.frombuffer(raw, dtype=np.uint8, offset=_MSVX_HEADER.size)
    if payload.size * 8 < n:
        raise ParseError("truncated payload", path, offset=len(raw))
    bits = np.unpackbits(payload, bitorder="little")[:n].astype(bool)
    occ = bits.reshape(dim, dim, dim).transpose(2, 1, 0)
    return VoxelGrid(np.ascontiguousarray(occ), (cx, cy, cz), side, _FRAME_NAMES[frame])


def check_same_layout(a: VoxelGrid, b: VoxelGrid) -> None:
    if a.dims != b.dims:
        raise DimMismatch(f"{a.dims}^3 vs {b.dims}^3")
