"""Orthographic silhouette and front/back depth rendering.

Images are ``(res, res)`` numpy arrays. Row 0 is the top of the image (largest
``up`` coordinate) and column 0 the left edge (smallest ``right`` coordinate);
pixel ``(i, j)`` is sampled at its centre. Depth images use ``np.inf`` as the
background value.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import EmptySilhouette, ParseError
from .geometry import OrthoCamera, RigidTransform, TriMesh, ViewRig, input_camera

DEFAULT_RES = 128
DEPTH_RANGE = float(np.sqrt(3.0))
BACKGROUND = np.inf


def pixel_centers(res: int) -> tuple[np.ndarray, np.ndarray]:
    """(x of each column, y of each row) in frustum coordinates."""
    c = (np.arange(res) + 0.5) * (2.0 / res) - 1.0
    return c, -c


@dataclass(frozen=True)
class SurfaceBranch:
    silhouette: np.ndarray
    depth_front: np.ndarray
    depth_back: np.ndarray

    @property
    def res(self) -> int:
        return self.silhouette.shape[0]


@dataclass(frozen=True)
class MultiSurface:
    """Silhouettes and front/back depths for each antipodal camera pair of a rig.

    Arrays are stacked as ``(n_branches, res, res)``. Silhouettes may be binary
    (ground truth) or probabilities (predictions).
    """

    silhouettes: np.ndarray
    depth_front: np.ndarray
    depth_back: np.ndarray
    rig: ViewRig

    def __post_init__(self):
        if not (self.silhouettes.shape == self.depth_front.shape == self.depth_back.shape):
            raise ValueError("silhouette and depth stacks must have the same shape")
        if self.silhouettes.shape[0] != self.rig.n_pairs:
            raise ValueError(f"{self.silhouettes.shape[0]} branches for a rig with {self.rig.n_pairs} pairs")

    def __len__(self):
        return self.silhouettes.shape[0]

    @property
    def res(self) -> int:
        return self.silhouettes.shape[1]

    @property
    def frame_mode(self) -> str:
        return self.rig.frame_mode

    def branch(self, k: int) -> SurfaceBranch:
        return SurfaceBranch(self.silhouettes[k], self.depth_front[k], self.depth_back[k])

    @property
    def branches(self) -> list[SurfaceBranch]:
        return [self.branch(k) for k in range(len(self))]

    def with_rig(self, rig: ViewRig) -> "MultiSurface":
        return MultiSurface(self.silhouettes, self.depth_front, self.depth_back, rig)


def _render_arrays(mesh: TriMesh, camera: OrthoCamera, res: int):
    front = np.full((res, res), np.inf)
    back = np.full((res, res), -np.inf)
    if len(mesh.triangles):
        xyd = camera.to_camera(mesh.vertices)
        _kernels.raster_minmax(
            np.ascontiguousarray(xyd[:, 0]),
            np.ascontiguousarray(xyd[:, 1]),
            np.ascontiguousarray(xyd[:, 2]),
            mesh.triangles,
            res,
            front,
            back,
        )
    sil = np.isfinite(front)
    back[~sil] = BACKGROUND
    return sil, front, back


def render_branch(mesh: TriMesh, camera: OrthoCamera, res: int = DEFAULT_RES) -> SurfaceBranch:
    """Silhouette plus nearest and farthest surface depth along each pixel ray."""
    sil, front, back = _render_arrays(mesh, camera, res)
    return SurfaceBranch(sil.astype(np.float64), front, back)


def render_multisurface(mesh: TriMesh, rig: ViewRig, res: int = DEFAULT_RES) -> MultiSurface:
    """One branch per antipodal pair, rendered from the first camera of the pair."""
    sils, fronts, backs = [], [], []
    for cam in rig.branch_cameras:
        s, f, b = _render_arrays(mesh, cam, res)
        sils.append(s)
        fronts.append(f)
        backs.append(b)
    return MultiSurface(np.stack(sils).astype(np.float64), np.stack(fronts), np.stack(backs), rig)


@dataclass(frozen=True)
class InputImage:
    """Normalized input depth + silhouette and the similarity that produced it."""

    depth: np.ndarray
    silhouette: np.ndarray
    transform: RigidTransform
    camera: OrthoCamera


def make_input(mesh: TriMesh, input_dir, res: int = DEFAULT_RES) -> InputImage:
    """Front depth and silhouette seen from ``input_dir``, normalized to the frustum.

    The silhouette bounding box (taken from the projected vertices) is centred
    and uniformly scaled so its longer side spans [-1, 1]; depths are scaled by
    the same factor and shifted so the visible pixels have mean depth 0.
    """
    cam = input_camera(input_dir)
    if len(mesh.triangles) == 0:
        raise EmptySilhouette("mesh has no triangles")
    xyd = cam.to_camera(mesh.vertices)
    lo = xyd[:, :2].min(axis=0)
    hi = xyd[:, :2].max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 1e-12:
        raise EmptySilhouette("object projects to a point")
    s = 2.0 / extent
    mid = 0.5 * (lo + hi)
    # similarity in camera coordinates: centre the bbox, scale to fit
    to_cam = RigidTransform(cam.axes, -cam.axes @ cam.origin, 1.0)
    recenter = RigidTransform(np.eye(3), -s * np.array([mid[0], mid[1], 0.0]), s)
    local = recenter.compose(to_cam)
    flat = OrthoCamera(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    sil, front, _ = _render_arrays(mesh.transformed(local), flat, res)
    if not sil.any():
        raise EmptySilhouette("object covers no pixel centre")
    offset = front[sil].mean()
    front = np.where(sil, front - offset, BACKGROUND)
    T = RigidTransform(np.eye(3), np.array([0.0, 0.0, -offset]), 1.0).compose(local)
    return InputImage(front, sil.astype(np.float64), T, cam)


# ---------------------------------------------------------------------------
# Files: MSDI depth images and PGM silhouettes
# ---------------------------------------------------------------------------

_MSDI_HEADER = struct.Struct("<4sIIff")
_MSDI_BG = 0xFFFF
_MSDI_LEVELS = 0xFFFE


def quantize_depth(depth: np.ndarray, lo: float = -DEPTH_RANGE, hi: float = DEPTH_RANGE) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    fin = np.isfinite(d)
    codes = np.full(d.shape, _MSDI_BG, dtype=np.uint16)
    q = np.rint((np.clip(d[fin], lo, hi) - lo) / (hi - lo) * _MSDI_LEVELS)
    codes[fin] = q.astype(np.uint16)
    return codes


def dequantize_depth(codes: np.ndarray, lo: float, hi: float) -> np.ndarray:
    out = lo + codes.astype(np.float64) * ((hi - lo) / _MSDI_LEVELS)
    out[codes == _MSDI_BG] = BACKGROUND
    return out


def depth_quantization_step(lo: float = -DEPTH_RANGE, hi: float = DEPTH_RANGE) -> float:
    return (hi - lo) / _MSDI_LEVELS


def write_msdi(path, depth: np.ndarray) -> None:
    """16-bit depth file: magic, width, height, f32 min, f32 max, row-major u16 codes."""
    d = np.asarray(depth, dtype=np.float64)
    fin = d[np.isfinite(d)]
    lo, hi = -DEPTH_RANGE, DEPTH_RANGE
    if fin.size:
        lo = min(lo, float(fin.min()))
        hi = max(hi, float(fin.max()))
    lo, hi = float(np.float32(lo)), float(np.float32(hi))
    h, w = d.shape
    with open(path, "wb") as f:
        f.write(_MSDI_HEADER.pack(b"MSDI", w, h, lo, hi))
        f.write(quantize_depth(d, lo, hi).astype("<u2").tobytes())


def read_msdi(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _MSDI_HEADER.size:
        raise ParseError("truncated header", path, offset=len(raw))
    magic, w, h, lo, hi = _MSDI_HEADER.unpack_from(raw)
    if magic != b"MSDI":
        raise ParseError("bad magic", path, offset=0)
    need = _MSDI_HEADER.size + 2 * w * h
    if len(raw) < need:
        raise ParseError("truncated payload", path, offset=len(raw))
    codes = np.frombuffer(raw, dtype="<u2", count=w * h, offset=_MSDI_HEADER.size).reshape(h, w)
    return dequantize_depth(codes, lo, hi)


def write_pgm(path, silhouette: np.ndarray) -> None:
    """Binary PGM (P5); probabilities map to 0..255, binary masks to 0/255."""
    s = np.clip(np.asarray(silhouette, dtype=np.float64), 0.0, 1.0)
    h, w = s.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.rint(s * 255).astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path, offset=pos)
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ParseError("not a binary PGM", path, offset=0)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    if len(raw) < pos + w * h:
        raise ParseError("truncated PGM payload", path, offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w) / float(maxval)


def save_multisurface(ms: MultiSurface, directory, prefix: str = "branch") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for k in range(len(ms)):
        for name, arr, writer in (
            ("sil.pgm", ms.silhouettes[k], write_pgm),
            ("front.msdi", ms.depth_front[k], write_msdi),
            ("back.msdi", ms.depth_back[k], write_msdi),
        ):
            p = directory / f"{prefix}{k:02d}_{name}"
            writer(p, arr)
            written.append(p)
    return written


def load_multisurface(directory, rig: ViewRig, prefix: str = "branch") -> MultiSurface:
    directory = Path(directory)
    sils, fronts, backs = [], [], []
    for k in range(rig.n_pairs):
        sils.append(read_pgm(directory / f"{prefix}{k:02d}_sil.pgm"))
        fronts.append(read_msdi(directory / f"{prefix}{k:02d}_front.msdi"))
        backs.append(read_msdi(directory / f"{prefix}{k:02d}_back.msdi"))
    return MultiSurface(np.stack(sils), np.stack(fronts), np.stack(backs), rig)
