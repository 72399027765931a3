"""Shared geometry: rigid transforms, triangle meshes, orthographic cameras and view rigs.

Conventions used throughout the package:

* Object (model) coordinates have gravity along -z.
* An :class:`OrthoCamera` looks along ``view_dir``; ``(right, up, view_dir)`` is a
  right-handed orthonormal triad and the camera sees the square
  ``[-1, 1] x [-1, 1]`` of the (right, up) plane through ``origin``. Depth of a
  point ``p`` is ``view_dir . (p - origin)``.
* A view rig places cameras at the vertices of a dodecahedron (20 views) or an
  octahedron (6 views). Camera ``i`` and camera ``i + n/2`` are antipodal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyMesh

PHI = (1.0 + np.sqrt(5.0)) / 2.0
CANONICAL_DIR = np.ones(3) / np.sqrt(3.0)

VIEWER = "viewer"
OBJECT = "object"
FRAME_MODES = (VIEWER, OBJECT)

_UP_EPS = 1e-6


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def direction_from_angles(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector pointing from the object toward a viewer at (azimuth, elevation)."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def check_frame_mode(mode: str) -> str:
    if mode not in FRAME_MODES:
        raise ValueError(f"frame mode must be one of {FRAME_MODES}, got {mode!r}")
    return mode


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidTransform:
    """``p -> scale * rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        """Rotate direction vectors (no scale, no translation)."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """The transform applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation) / self.scale, 1.0 / self.scale)

    def is_identity(self, atol=1e-9) -> bool:
        return (
            np.allclose(self.rotation, np.eye(3), atol=atol)
            and np.allclose(self.translation, 0.0, atol=atol)
            and abs(self.scale - 1.0) <= atol
        )


# ---------------------------------------------------------------------------
# Triangle meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        V = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        F = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise IndexError(f"triangle index out of range for {len(V)} vertices")
        V.flags.writeable = False
        F.flags.writeable = False
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)
        if self.normals is not None:
            N = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(N) != len(V):
                raise ValueError("need one normal per vertex")
            N.flags.writeable = False
            object.__setattr__(self, "normals", N)

    def __repr__(self):
        return f"TriMesh({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    @property
    def corners(self) -> np.ndarray:
        """(F, 3, 3) array of triangle corner positions."""
        return self.vertices[self.triangles]

    def face_cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def triangle_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def face_normals(self) -> np.ndarray:
        n = self.face_cross()
        ln = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, ln, out=np.zeros_like(n), where=ln > 0)

    def centroid(self) -> np.ndarray:
        """Surface-area weighted average of triangle centroids."""
        areas = self.triangle_areas()
        total = areas.sum()
        if total <= 0:
            return self.vertices.mean(axis=0)
        return (self.corners.mean(axis=1) * areas[:, None]).sum(axis=0) / total

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, T: RigidTransform) -> "TriMesh":
        normals = None if self.normals is None else T.apply_vector(self.normals)
        return TriMesh(T.apply(self.vertices), self.triangles, normals)

    def cleaned(self, area_tol: float = 1e-12) -> "TriMesh":
        """Drop triangles with repeated indices or area <= area_tol."""
        F = self.triangles
        keep = (F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])
        if len(F):
            keep &= self.triangle_areas() > area_tol
        if keep.all():
            return self
        return TriMesh(self.vertices, F[keep], self.normals)

    @staticmethod
    def concatenate(meshes: Sequence["TriMesh"]) -> "TriMesh":
        verts, tris, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + off)
            off += len(m.vertices)
        if not verts:
            return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        return TriMesh(np.concatenate(verts), np.concatenate(tris))

    def euler_characteristic(self) -> int:
        F = self.triangles
        edges = np.sort(np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(F))
        return n_verts - n_edges + len(F)


def normalize_mesh(mesh: TriMesh) -> tuple[TriMesh, RigidTransform]:
    """Center on the area-weighted centroid and scale the bounding sphere to radius 1.

    Returns the normalized mesh and the transform that was applied, so results
    can be mapped back with ``T.inverse()``.
    """
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise EmptyMesh("cannot normalize an empty mesh")
    c = mesh.centroid()
    radius = np.linalg.norm(mesh.vertices - c, axis=1).max()
    if radius <= 0:
        raise EmptyMesh("mesh has no spatial extent")
    s = 1.0 / radius
    T = RigidTransform(np.eye(3), -s * c, s)
    return mesh.transformed(T), T


# ---------------------------------------------------------------------------
# Cameras and rigs
# ---------------------------------------------------------------------------


def camera_axes(view_dir, up_hint=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(right, up, view) for a camera looking along ``view_dir`` with gravity-aligned up.

    Up is world +z projected onto the image plane; +y is used instead when the
    view is within 1e-6 of vertical.
    """
    d = unit(view_dir)
    if up_hint is None:
        up_hint = np.array([0.0, 0.0, 1.0])
        if abs(d[2]) > 1.0 - _UP_EPS:
            up_hint = np.array([0.0, 1.0, 0.0])
    u = unit(up_hint - np.dot(up_hint, d) * d)
    r = np.cross(u, d)
    return r, u, d


@dataclass(frozen=True)
class OrthoCamera:
    view_dir: np.ndarray
    right: np.ndarray
    up: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("view_dir", "right", "up", "origin"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(3)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def looking(cls, view_dir, origin=None) -> "OrthoCamera":
        r, u, d = camera_axes(view_dir)
        return cls(d, r, u, np.zeros(3) if origin is None else origin)

    @classmethod
    def from_position(cls, position) -> "OrthoCamera":
        """Camera sitting in direction ``position`` from the origin, looking at it."""
        return cls.looking(-unit(position))

    @property
    def axes(self) -> np.ndarray:
        """3x3 matrix with rows (right, up, view_dir): world -> camera coordinates."""
        return np.stack([self.right, self.up, self.view_dir])

    def to_camera(self, points) -> np.ndarray:
        """World points -> (x, y, depth) in camera coordinates."""
        return (np.asarray(points, dtype=np.float64) - self.origin) @ self.axes.T

    def from_camera(self, xyd) -> np.ndarray:
        return np.asarray(xyd, dtype=np.float64) @ self.axes + self.origin

    def rotated(self, R) -> "OrthoCamera":
        R = np.asarray(R, dtype=np.float64)
        return OrthoCamera(R @ self.view_dir, R @ self.right, R @ self.up, R @ self.origin)

    def transformed(self, T: RigidTransform) -> "OrthoCamera":
        """The same camera expressed after applying ``T`` (rotation/translation only)."""
        R = T.rotation
        return OrthoCamera(R @ self.view_dir, R @ self.right, R @ self.up, T.apply(self.origin[None])[0])

    def antipode(self) -> "OrthoCamera":
        return OrthoCamera(-self.view_dir, -self.right, self.up, self.origin)

    def is_right_handed(self, atol=1e-9) -> bool:
        return np.allclose(np.cross(self.right, self.up), self.view_dir, atol=atol)


def dodecahedron_directions() -> np.ndarray:
    """The 20 dodecahedron vertices as unit vectors; row i and row i+10 are antipodal.

    Row 0 is (1, 1, 1)/sqrt(3).
    """
    p, q = PHI, 1.0 / PHI
    half = np.array(
        [
            [1, 1, 1],
            [1, 1, -1],
            [1, -1, 1],
            [-1, 1, 1],
            [0, q, p],
            [0, q, -p],
            [q, p, 0],
            [q, -p, 0],
            [p, 0, q],
            [p, 0, -q],
        ],
        dtype=np.float64,
    )
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    return np.concatenate([half, -half])


def octahedron_directions() -> np.ndarray:
    """Six axis directions of an octahedron whose first axis is (1, 1, 1)/sqrt(3).

    The other two axes are the up and right vectors of a gravity-aligned camera
    at (1, 1, 1); row i and row i+3 are antipodal.
    """
    r, u, d = camera_axes(-CANONICAL_DIR)
    half = np.stack([CANONICAL_DIR, u, r])
    return np.concatenate([half, -half])


def rig_directions(n_views: int) -> np.ndarray:
    if n_views == 20:
        return dodecahedron_directions()
    if n_views == 6:
        return octahedron_directions()
    raise ValueError(f"n_views must be 6 or 20, got {n_views}")


def _frame_matrix(cam: OrthoCamera) -> np.ndarray:
    return np.stack([cam.right, cam.up, cam.view_dir], axis=1)


def alignment_rotation(input_dir) -> np.ndarray:
    """Rotation taking the canonical camera at (1,1,1) onto a gravity-aligned camera at ``input_dir``.

    It maps (1,1,1)/sqrt(3) to ``input_dir`` and the canonical camera's up vector
    onto the input camera's up vector, so camera 0 of the rotated rig is exactly
    the input view.
    """
    d = unit(input_dir)
    if np.allclose(d, CANONICAL_DIR, atol=1e-12, rtol=0):
        return np.eye(3)
    F0 = _frame_matrix(OrthoCamera.from_position(CANONICAL_DIR))
    Fin = _frame_matrix(OrthoCamera.from_position(d))
    return Fin @ F0.T


@dataclass(frozen=True)
class ViewRig:
    """Cameras (in object coordinates) plus the frame the rig's outputs live in.

    ``rotation`` is the rigid rotation applied to the canonical rig; it is the
    identity in object mode. ``frame_transform`` maps object coordinates to the
    rig's output frame: identity in object mode, and the input-camera frame with
    the object centre at (0, 0, 1) in viewer mode.
    """

    cameras: tuple
    pairs: tuple
    frame_mode: str
    rotation: np.ndarray
    input_dir: np.ndarray

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def branch_cameras(self) -> list[OrthoCamera]:
        return [self.cameras[i] for i, _ in self.pairs]

    @property
    def frame_transform(self) -> RigidTransform:
        if self.frame_mode == OBJECT:
            return RigidTransform.identity()
        return viewer_frame_transform(self.cameras[0])

    def frame_cameras(self) -> list[OrthoCamera]:
        """Branch cameras expressed in the output frame.

        In viewer mode these do not depend on the input direction: they are the
        canonical rig seen from its own camera 0.
        """
        if self.frame_mode == OBJECT:
            return self.branch_cameras
        canon = canonical_rig(self.n_views)
        T = viewer_frame_transform(canon.cameras[0])
        return [c.transformed(T) for c in canon.branch_cameras]

    def directions(self) -> np.ndarray:
        """Camera positions (unit vectors from the object toward each camera)."""
        return -np.stack([c.view_dir for c in self.cameras])

    def rotated(self, R) -> "ViewRig":
        R = np.asarray(R, dtype=np.float64)
        return ViewRig(
            tuple(c.rotated(R) for c in self.cameras),
            self.pairs,
            self.frame_mode,
            R @ self.rotation,
            R @ self.input_dir,
        )


def viewer_frame_transform(camera0: OrthoCamera) -> RigidTransform:
    """Object coordinates -> input-camera coordinates, object centre at depth 1."""
    return RigidTransform(camera0.axes, np.array([0.0, 0.0, 1.0]), 1.0)


_CANONICAL_CACHE: dict = {}


def canonical_rig(n_views: int) -> ViewRig:
    if n_views not in _CANONICAL_CACHE:
        dirs = rig_directions(n_views)
        cams = tuple(OrthoCamera.from_position(v) for v in dirs)
        h = n_views // 2
        pairs = tuple((i, i + h) for i in range(h))
        _CANONICAL_CACHE[n_views] = ViewRig(cams, pairs, OBJECT, np.eye(3), CANONICAL_DIR.copy())
    return _CANONICAL_CACHE[n_views]


def build_view_rig(input_dir, n_views: int = 20, frame_mode: str = VIEWER) -> ViewRig:
    """Rig anchored to the input view (viewer mode) or to the canonical (1,1,1) view (object mode).

    ``input_dir`` points from the object toward the viewer. In viewer mode
    camera 0 sits at ``input_dir`` looking at the object with gravity-aligned up.
    """
    check_frame_mode(frame_mode)
    d = unit(input_dir)
    canon = canonical_rig(n_views)
    if frame_mode == OBJECT:
        return ViewRig(canon.cameras, canon.pairs, OBJECT, canon.rotation, d)
    R = alignment_rotation(d)
    rig = canon.rotated(R)
    return ViewRig(rig.cameras, rig.pairs, VIEWER, rig.rotation, d)


def input_camera(input_dir) -> OrthoCamera:
    """Gravity-aligned camera at ``input_dir`` (camera 0 of the viewer rig)."""
    return build_view_rig(input_dir, 6, VIEWER).cameras[0]
