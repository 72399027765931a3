"""Shape predictors: ground-truth target construction, an oracle and nearest-neighbour retrieval.

A predictor maps a normalized input (front depth + silhouette) to a
``Prediction``: either a multi-surface stack or a voxel grid, in the viewer or
object frame.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyGallery, InconsistentGallery, MvskError, NotFitted
from .geometry import CANONICAL_DIR, OBJECT, VIEWER, RigidTransform, TriMesh, build_view_rig, check_frame_mode
from .raster import (
    DEFAULT_RES,
    InputImage,
    MultiSurface,
    load_multisurface,
    read_msdi,
    read_pgm,
    render_multisurface,
    save_multisurface,
    write_msdi,
    write_pgm,
)
from .volumetric import DEFAULT_DIMS, VoxelGrid, object_voxel_target, read_msvx, viewer_voxel_target, write_msvx

MULTISURFACE = "multisurface"
VOXELS = "voxels"
REPRESENTATIONS = (MULTISURFACE, VOXELS)

DEPTH_WEIGHT = 0.8
ONE_SIDED_PENALTY = 0.25


@dataclass(frozen=True)
class PredictorInput:
    depth: np.ndarray
    silhouette: np.ndarray

    @classmethod
    def from_image(cls, image: InputImage) -> "PredictorInput":
        return cls(image.depth, image.silhouette)

    @property
    def res(self) -> int:
        return self.depth.shape[0]

    def key(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.depth, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.silhouette >= 0.5).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Prediction:
    frame_mode: str
    surfaces: MultiSurface | None = None
    voxels: VoxelGrid | None = None

    def __post_init__(self):
        check_frame_mode(self.frame_mode)
        if (self.surfaces is None) == (self.voxels is None):
            raise ValueError("a prediction holds exactly one of a multi-surface stack or a voxel grid")
        own = self.surfaces.frame_mode if self.surfaces is not None else self.voxels.frame
        if own != self.frame_mode:
            raise ValueError(f"{self.representation} in {own} frame tagged as {self.frame_mode}")

    @property
    def representation(self) -> str:
        return MULTISURFACE if self.surfaces is not None else VOXELS

    def equals(self, other: "Prediction") -> bool:
        """Bit-exact equality of the stored arrays."""
        if self.representation != other.representation or self.frame_mode != other.frame_mode:
            return False
        if self.voxels is not None:
            return self.voxels.same_layout(other.voxels) and np.array_equal(self.voxels.occupancy, other.voxels.occupancy)
        a, b = self.surfaces, other.surfaces
        return (
            np.array_equal(a.silhouettes, b.silhouettes)
            and np.array_equal(a.depth_front, b.depth_front)
            and np.array_equal(a.depth_back, b.depth_back)
        )


def make_targets(mesh: TriMesh, input_dir, frame_mode: str = VIEWER, representation: str = MULTISURFACE,
                 rig_size: int = 20, dims: int = DEFAULT_DIMS, res: int = DEFAULT_RES) -> Prediction:
    """Ground-truth target of a normalized mesh seen from ``input_dir``.

    Viewer mode anchors the rig (camera 0 = input view) and the voxel window to
    the input camera. Object mode uses the canonical rig and the model-frame
    window whatever ``input_dir`` is. Viewer-mode surfaces are rendered by
    turning the mesh into the canonical rig's frame and rendering with the
    canonical cameras, so they equal the object-mode surfaces of the turned mesh.
    """
    check_frame_mode(frame_mode)
    if representation not in REPRESENTATIONS:
        raise ValueError(f"unknown representation {representation!r}")
    if frame_mode == OBJECT:
        rig = build_view_rig(CANONICAL_DIR, rig_size, OBJECT)
        if representation == VOXELS:
            return Prediction(OBJECT, voxels=object_voxel_target(mesh, dims))
        return Prediction(OBJECT, surfaces=render_multisurface(mesh, rig, res))
    rig = build_view_rig(input_dir, rig_size, VIEWER)
    if representation == VOXELS:
        return Prediction(VIEWER, voxels=viewer_voxel_target(mesh, rig.cameras[0], dims))
    turned = mesh if np.array_equal(rig.rotation, np.eye(3)) else mesh.transformed(RigidTransform(rig.rotation.T))
    canon = build_view_rig(CANONICAL_DIR, rig_size, OBJECT)
    ms = render_multisurface(turned, canon, res)
    return Prediction(VIEWER, surfaces=ms.with_rig(rig))


# ---------------------------------------------------------------------------
# Gallery
# ---------------------------------------------------------------------------


@dataclass
class GalleryEntry:
    input: PredictorInput
    target: Prediction
    meta: dict = field(default_factory=dict)


class Gallery:
    """Input/target pairs sharing one representation, frame, rig size and resolution."""

    def __init__(self, entries=()):
        self.entries: list[GalleryEntry] = []
        for e in entries:
            self.add(e)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i) -> GalleryEntry:
        return self.entries[i]

    def signature(self, entry: GalleryEntry) -> tuple:
        t = entry.target
        if t.surfaces is not None:
            shape = (t.surfaces.rig.n_views, t.surfaces.res)
        else:
            shape = (t.voxels.dims,)
        return (t.representation, t.frame_mode, shape, entry.input.res)

    def add(self, entry: GalleryEntry) -> None:
        if self.entries and self.signature(entry) != self.signature(self.entries[0]):
            raise InconsistentGallery(f"entry {self.signature(entry)} does not match {self.signature(self.entries[0])}")
        self.entries.append(entry)

    @property
    def representation(self) -> str:
        return self.entries[0].target.representation

    @property
    def frame_mode(self) -> str:
        return self.entries[0].target.frame_mode

    def save(self, directory) -> None:
        """Directory manifest: ``index.json`` plus one subdirectory per entry."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = []
        for n, e in enumerate(self.entries):
            sub = directory / f"{n:05d}"
            sub.mkdir(exist_ok=True)
            write_msdi(sub / "input_depth.msdi", e.input.depth)
            write_pgm(sub / "input_sil.pgm", e.input.silhouette)
            rec = {"dir": sub.name, "meta": e.meta, "frame": e.target.frame_mode,
                   "representation": e.target.representation}
            if e.target.surfaces is not None:
                save_multisurface(e.target.surfaces, sub)
                rig = e.target.surfaces.rig
                rec["rig"] = {"n_views": rig.n_views, "input_dir": [float(x) for x in rig.input_dir]}
            else:
                write_msvx(sub / "target.msvx", e.target.voxels)
            index.append(rec)
        (directory / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Gallery":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text())
        g = cls()
        for rec in index:
            sub = directory / rec["dir"]
            inp = PredictorInput(read_msdi(sub / "input_depth.msdi"), read_pgm(sub / "input_sil.pgm"))
            frame = rec["frame"]
            if rec["representation"] == MULTISURFACE:
                r = rec["rig"]
                rig = build_view_rig(r["input_dir"], r["n_views"], frame)
                target = Prediction(frame, surfaces=load_multisurface(sub, rig))
            else:
                target = Prediction(frame, voxels=read_msvx(sub / "target.msvx"))
            g.add(GalleryEntry(inp, target, rec["meta"]))
        return g


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------


class Predictor:
    frame_mode: str
    representation: str

    def predict(self, inp: PredictorInput) -> Prediction:
        raise NotImplementedError


def predict(predictor: Predictor, inp: PredictorInput) -> Prediction:
    return predictor.predict(inp)


class OraclePredictor(Predictor):
    """Returns the stored ground truth of an exactly matching input."""

    def __init__(self, gallery: Gallery | None = None):
        self._table: dict[str, Prediction] = {}
        self.frame_mode = self.representation = None
        if gallery is not None:
            self.fit(gallery)

    def fit(self, gallery: Gallery) -> "OraclePredictor":
        if len(gallery) == 0:
            raise EmptyGallery("oracle needs at least one example")
        for e in gallery:
            self._table.setdefault(e.input.key(), e.target)
        self.frame_mode, self.representation = gallery.frame_mode, gallery.representation
        return self

    def predict(self, inp: PredictorInput) -> Prediction:
        if not self._table:
            raise NotFitted("oracle has no examples")
        try:
            return self._table[inp.key()]
        except KeyError:
            raise MvskError("oracle has no ground truth for this input") from None


class RetrievalPredictor(Predictor):
    """Nearest gallery input under a weighted depth + silhouette distance; its target is returned."""

    def __init__(self, depth_weight: float = DEPTH_WEIGHT):
        self.depth_weight = depth_weight
        self.gallery: Gallery | None = None

    def fit(self, gallery: Gallery) -> "RetrievalPredictor":
        if len(gallery) == 0:
            raise EmptyGallery("retrieval needs a non-empty gallery")
        res = {e.input.res for e in gallery}
        if len(res) != 1:
            raise InconsistentGallery(f"mixed input resolutions {sorted(res)}")
        self.gallery = gallery
        self._sil = np.stack([e.input.silhouette >= 0.5 for e in gallery])
        self._depth = np.stack([np.where(np.isfinite(e.input.depth), e.input.depth, 0.0) for e in gallery])
        self.frame_mode, self.representation = gallery.frame_mode, gallery.representation
        return self

    def distances(self, inp: PredictorInput) -> np.ndarray:
        if self.gallery is None:
            raise NotFitted("call fit() before predicting")
        qs = inp.silhouette >= 0.5
        qd = np.where(np.isfinite(inp.depth), inp.depth, 0.0)
        both = self._sil & qs
        union = self._sil | qs
        n_union = union.sum(axis=(1, 2))
        sq = np.where(both, (self._depth - qd) ** 2, 0.0).sum(axis=(1, 2))
        one_sided = (union & ~both).sum(axis=(1, 2))
        depth_term = np.where(n_union > 0, (sq + ONE_SIDED_PENALTY * one_sided) / np.maximum(n_union, 1), 0.0)
        hamming = one_sided / qs.size
        return self.depth_weight * depth_term + (1.0 - self.depth_weight) * hamming

    def nearest(self, inp: PredictorInput) -> int:
        return int(np.argmin(self.distances(inp)))  # argmin keeps the lowest index on ties

    def predict(self, inp: PredictorInput) -> Prediction:
        k = self.nearest(inp)
        return self.gallery[k].target


def fit_retrieval(gallery: Gallery, depth_weight: float = DEPTH_WEIGHT) -> RetrievalPredictor:
    return RetrievalPredictor(depth_weight).fit(gallery)
