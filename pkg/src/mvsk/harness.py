"""Procedural datasets, NovelView/NovelModel/NovelClass splits, experiments and reports.

Config files are plain ``key = value`` lines; ``#`` starts a comment and list
values are comma separated. See ``DatasetSpec`` and ``ExperimentConfig`` for
the recognised keys.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, GeometryError, InsufficientData, NoCrossing
from .fusion import carve_occupancy, fuse_point_cloud, fuse_tsdf
from .geometry import CANONICAL_DIR, OBJECT, VIEWER, TriMesh, build_view_rig, direction_from_angles
from .meshio import load_mesh, save_mesh
from .metrics import (
    EvalRecord,
    SurfaceSampler,
    multisurface_depth_error,
    projection_loss,
    silhouette_iou,
    surface_distance,
    voxel_iou,
)
from .predictors import (
    MULTISURFACE,
    REPRESENTATIONS,
    VOXELS,
    Gallery,
    GalleryEntry,
    OraclePredictor,
    Prediction,
    PredictorInput,
    RetrievalPredictor,
    make_targets,
)
from .raster import load_multisurface, make_input, read_msdi, read_pgm, save_multisurface, write_msdi, write_pgm
from .shapes import CATEGORIES, make_shape
from .volumetric import VoxelGrid, marching_cubes, read_msvx, write_msvx

SPLITS = ("NovelView", "NovelModel", "NovelClass")
FRAME_LABELS = {VIEWER: "View-centered", OBJECT: "Obj-centered"}
ALL_METRICS = ("voxel_iou", "surface_dist", "silhouette_iou", "depth_err", "proj_loss")
ELEVATION_RANGE = (-20.0, 50.0)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, str(path))


def _convert(cls, values: dict[str, str]):
    """Build dataclass ``cls`` from string values, using the field defaults' types."""
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__} (known: {', '.join(sorted(known))})")
        default = known[key].default
        try:
            if isinstance(default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            elif isinstance(default, tuple) or key in ("categories", "frames", "representations", "metrics"):
                kwargs[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
            else:
                kwargs[key] = raw
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    categories: tuple = ("box-table", "slat-chair", "superellipsoid", "open-cup")
    instances: int = 12
    views: int = 8
    seed: int = 0
    res: int = 128
    rig_size: int = 6
    dims: int = 48
    representations: tuple = REPRESENTATIONS

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "representations", tuple(self.representations))
        if not self.representations or any(r not in REPRESENTATIONS for r in self.representations):
            raise ValueError(f"representations must be drawn from {REPRESENTATIONS}")
        for c in self.categories:
            if c not in CATEGORIES:
                raise ValueError(f"unknown category {c!r}")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("duplicate categories")
        if self.instances < 1 or self.views < 1:
            raise ValueError("instances and views must be positive")
        if self.rig_size not in (6, 20):
            raise ValueError("rig_size must be 6 or 20")

    @classmethod
    def from_config(cls, values: dict[str, str]) -> "DatasetSpec":
        return _convert(cls, values)


@dataclass
class Example:
    id: str
    category: str
    instance: int
    view: int
    azimuth: float
    elevation: float
    input_dir: np.ndarray
    input: PredictorInput

    @property
    def mesh_id(self) -> str:
        return f"{self.category}-{self.instance:02d}"

    def record(self) -> dict:
        return {
            "id": self.id, "category": self.category, "instance": self.instance, "view": self.view,
            "azimuth": self.azimuth, "elevation": self.elevation,
            "input_dir": [float(x) for x in self.input_dir],
        }


class Dataset:
    """Meshes, inputs and ground-truth targets for every (instance, view).

    Object-frame targets are stored once per instance since they do not depend
    on the view.
    """

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        self.meshes: dict[str, TriMesh] = {}
        self.examples: list[Example] = []
        self._object: dict[tuple, Prediction] = {}
        self._viewer: dict[tuple, Prediction] = {}

    def __len__(self):
        return len(self.examples)

    def example(self, example_id: str) -> Example:
        for e in self.examples:
            if e.id == example_id:
                return e
        raise KeyError(example_id)

    def target(self, ex: Example, frame: str, representation: str) -> Prediction:
        if representation not in self.spec.representations:
            raise ConfigError(f"dataset has no {representation} targets")
        if frame == OBJECT:
            return self._object[(ex.mesh_id, representation)]
        return self._viewer[(ex.id, representation)]

    def frame_mesh(self, ex: Example, frame: str) -> TriMesh:
        mesh = self.meshes[ex.mesh_id]
        if frame == OBJECT:
            return mesh
        return mesh.transformed(build_view_rig(ex.input_dir, self.spec.rig_size, VIEWER).frame_transform)

    # -- persistence -------------------------------------------------------

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        for mid, mesh in self.meshes.items():
            d = root / "instances" / mid
            d.mkdir(parents=True, exist_ok=True)
            save_mesh(mesh, d / "mesh.ply")
            self._save_targets(self._object, mid, d)
        for ex in self.examples:
            d = root / "examples" / ex.id
            d.mkdir(parents=True, exist_ok=True)
            write_msdi(d / "input_depth.msdi", ex.input.depth)
            write_pgm(d / "input_sil.pgm", ex.input.silhouette)
            self._save_targets(self._viewer, ex.id, d)
        manifest = {"spec": asdict(self.spec), "examples": [e.record() for e in self.examples]}
        (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")

    def _save_targets(self, table, key, d):
        if MULTISURFACE in self.spec.representations:
            save_multisurface(table[(key, MULTISURFACE)].surfaces, d / "surfaces")
        if VOXELS in self.spec.representations:
            write_msvx(d / "voxels.msvx", table[(key, VOXELS)].voxels)

    def _load_targets(self, table, key, d, frame, rig):
        if MULTISURFACE in self.spec.representations:
            table[(key, MULTISURFACE)] = Prediction(frame, surfaces=load_multisurface(d / "surfaces", rig))
        if VOXELS in self.spec.representations:
            table[(key, VOXELS)] = Prediction(frame, voxels=read_msvx(d / "voxels.msvx"))

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        try:
            manifest = json.loads((root / "manifest.json").read_text())
        except OSError as e:
            raise ConfigError(f"no dataset at {root}: {e}") from None
        spec = DatasetSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["spec"].items()})
        ds = cls(spec)
        canon = build_view_rig(CANONICAL_DIR, spec.rig_size, OBJECT)
        for rec in manifest["examples"]:
            d = root / "examples" / rec["id"]
            inp = PredictorInput(read_msdi(d / "input_depth.msdi"), read_pgm(d / "input_sil.pgm"))
            ex = Example(rec["id"], rec["category"], rec["instance"], rec["view"], rec["azimuth"],
                         rec["elevation"], np.array(rec["input_dir"]), inp)
            ds.examples.append(ex)
            rig = build_view_rig(ex.input_dir, spec.rig_size, VIEWER)
            ds._load_targets(ds._viewer, ex.id, d, VIEWER, rig)
            mid = ex.mesh_id
            if mid not in ds.meshes:
                m = root / "instances" / mid
                ds.meshes[mid] = load_mesh(m / "mesh.ply")
                ds._load_targets(ds._object, mid, m, OBJECT, canon)
        return ds


def sample_view(rng: np.random.Generator) -> tuple[float, float]:
    return float(rng.uniform(0.0, 360.0)), float(rng.uniform(*ELEVATION_RANGE))


def generate_dataset(spec: DatasetSpec, out_dir=None) -> Dataset:
    """Meshes, inputs and all four targets per (instance, view); fully determined by ``spec.seed``."""
    ds = Dataset(spec)
    for ci, cat in enumerate(spec.categories):
        cat_key = CATEGORIES.index(cat)
        for inst in range(spec.instances):
            mesh = make_shape(cat, np.random.default_rng([spec.seed, cat_key, inst, 0]))
            mid = f"{cat}-{inst:02d}"
            ds.meshes[mid] = mesh
            try:
                for rep in spec.representations:
                    ds._object[(mid, rep)] = make_targets(mesh, CANONICAL_DIR, OBJECT, rep,
                                                         spec.rig_size, spec.dims, spec.res)
            except GeometryError as e:
                raise type(e)(f"{mid}: {e}") from e
            view_rng = np.random.default_rng([spec.seed, cat_key, inst, 1])
            for v in range(spec.views):
                az, el = sample_view(view_rng)
                d = direction_from_angles(az, el)
                eid = f"{mid}-v{v:02d}"
                try:
                    inp = PredictorInput.from_image(make_input(mesh, d, spec.res))
                    for rep in spec.representations:
                        ds._viewer[(eid, rep)] = make_targets(mesh, d, VIEWER, rep, spec.rig_size, spec.dims, spec.res)
                except GeometryError as e:
                    raise type(e)(f"{eid}: {e}") from e
                ds.examples.append(Example(eid, cat, inst, v, az, el, d, inp))
    if out_dir is not None:
        ds.save(out_dir)
    return ds


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass
class SplitSet:
    train: list[str]
    tests: dict[str, list[str]]

    def check(self, dataset: Dataset) -> None:
        """Assert the disjointness rules on actual ids."""
        by_id = {e.id: e for e in dataset.examples}
        train = set(self.train)
        train_meshes = {by_id[i].mesh_id for i in train}
        train_cats = {by_id[i].category for i in train}
        for name, ids in self.tests.items():
            overlap = train.intersection(ids)
            if overlap:
                raise AssertionError(f"{name} shares examples with train: {sorted(overlap)[:3]}")
        for i in self.tests["NovelView"]:
            if by_id[i].mesh_id not in train_meshes:
                raise AssertionError(f"NovelView example {i} has no training views")
        for i in self.tests["NovelModel"]:
            e = by_id[i]
            if e.mesh_id in train_meshes or e.category not in train_cats:
                raise AssertionError(f"NovelModel example {i} breaks the split rule")
        for i in self.tests["NovelClass"]:
            if by_id[i].category in train_cats:
                raise AssertionError(f"NovelClass example {i} has a training category")

    def to_json(self) -> str:
        return json.dumps({"train": self.train, **self.tests}, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitSet":
        d = json.loads(text)
        return cls(d["train"], {k: d[k] for k in SPLITS})


def _holdout(n: int, amount) -> int:
    """Number of items to hold out: an int count, or a fraction in (0, 1)."""
    if isinstance(amount, float) and 0.0 < amount < 1.0:
        return max(1, int(round(amount * n)))
    return int(amount)


def make_splits(dataset: Dataset, held_out_category: str | None = None, view_holdout=2, instance_holdout=2) -> SplitSet:
    """Hold out the last views of training instances, the last instances of each
    seen category and one whole category."""
    spec = dataset.spec
    cats = list(spec.categories)
    if len(cats) < 2:
        raise InsufficientData("NovelClass needs at least two categories")
    if spec.instances < 2 or spec.views < 2:
        raise InsufficientData("need at least two instances per category and two views per instance")
    held = held_out_category or cats[-1]
    if held not in cats:
        raise InsufficientData(f"held-out category {held!r} is not in the dataset")
    nv = _holdout(spec.views, view_holdout)
    ni = _holdout(spec.instances, instance_holdout)
    if not (1 <= nv < spec.views) or not (1 <= ni < spec.instances):
        raise InsufficientData("holdouts must leave at least one view and one instance for training")
    train, tests = [], {s: [] for s in SPLITS}
    for e in dataset.examples:
        if e.category == held:
            tests["NovelClass"].append(e.id)
        elif e.instance >= spec.instances - ni:
            tests["NovelModel"].append(e.id)
        elif e.view >= spec.views - nv:
            tests["NovelView"].append(e.id)
        else:
            train.append(e.id)
    split = SplitSet(train, tests)
    split.check(dataset)
    return split


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    out: str = "results"
    splits: str = ""
    frames: tuple = (VIEWER, OBJECT)
    representations: tuple = (MULTISURFACE, VOXELS)
    predictor: str = "retrieval"
    fusion: str = "carve"
    metrics: tuple = ALL_METRICS
    held_out_category: str = ""
    view_holdout: float = 2.0
    instance_holdout: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for f in self.frames:
            if f not in (VIEWER, OBJECT):
                raise ValueError(f"unknown frame {f!r}")
        for r in self.representations:
            if r not in REPRESENTATIONS:
                raise ValueError(f"unknown representation {r!r}")
        if self.predictor not in ("oracle", "retrieval"):
            raise ValueError(f"unknown predictor {self.predictor!r}")
        if self.fusion not in ("carve", "tsdf"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        for m in self.metrics:
            if m not in ALL_METRICS:
                raise ValueError(f"unknown metric {m!r}")

    @classmethod
    def from_config(cls, values: dict[str, str]) -> "ExperimentConfig":
        return _convert(cls, values)

    def holdouts(self):
        def norm(x):
            return int(x) if float(x).is_integer() and x >= 1 else float(x)
        return norm(self.view_holdout), norm(self.instance_holdout)


def thread_count() -> int:
    raw = os.environ.get("MVSK_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"MVSK_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def fuse(pred: Prediction, method: str, dims: int) -> VoxelGrid:
    """Voxel occupancy of a prediction; multi-surface stacks are fused first."""
    if pred.voxels is not None:
        return pred.voxels
    if method == "carve":
        return carve_occupancy(pred.surfaces, dims)
    field = fuse_tsdf(pred.surfaces, dims)
    occ = (field.values < 0) & field.observed
    return VoxelGrid(occ, field.spec.center, field.spec.side, field.spec.frame)


def _mesh_or_none(grid: VoxelGrid):
    try:
        return marching_cubes(grid)
    except NoCrossing:
        return None


class ShapeCache:
    """Fused grid and extracted mesh per prediction object.

    Retrieval returns gallery targets, so the same prediction is scored many
    times. Entries are keyed by object identity and hold a reference so the
    key stays valid. Concurrent misses compute the same deterministic value.
    """

    def __init__(self, fusion: str, dims: int):
        self.fusion, self.dims = fusion, dims
        self._grids: dict[int, tuple] = {}
        self._meshes: dict[int, tuple] = {}
        self._lock = threading.Lock()

    def grid(self, pred: Prediction) -> VoxelGrid:
        hit = self._grids.get(id(pred))
        if hit is None:
            hit = (pred, fuse(pred, self.fusion, self.dims))
            with self._lock:
                self._grids.setdefault(id(pred), hit)
        return hit[1]

    def mesh(self, pred: Prediction):
        hit = self._meshes.get(id(pred))
        if hit is None:
            hit = (pred, _mesh_or_none(self.grid(pred)))
            with self._lock:
                self._meshes.setdefault(id(pred), hit)
        return hit[1]


def evaluate_example(dataset: Dataset, ex: Example, pred: Prediction, frame: str, representation: str,
                     split: str, config: ExperimentConfig, sampler: SurfaceSampler,
                     cache: ShapeCache | None = None) -> EvalRecord:
    """Image metrics against the GT stack; shape metrics against the GT pushed through the same fusion."""
    gt = dataset.target(ex, frame, representation)
    rec = EvalRecord(ex.id, frame, split, representation)
    want = set(config.metrics)
    if representation == MULTISURFACE:
        if "silhouette_iou" in want:
            rec.silhouette_iou = silhouette_iou(pred.surfaces, gt.surfaces)
        if "depth_err" in want:
            rec.depth_err, rec.depth_rmse = multisurface_depth_error(pred.surfaces, gt.surfaces)
        if "proj_loss" in want:
            rec.proj_loss = projection_loss(pred.surfaces, gt.surfaces)
    if want & {"voxel_iou", "surface_dist"}:
        cache = cache or ShapeCache(config.fusion, dataset.spec.dims)
        if "voxel_iou" in want:
            rec.voxel_iou = voxel_iou(cache.grid(pred), cache.grid(gt))
        if "surface_dist" in want:
            pm, gm = cache.mesh(pred), cache.mesh(gt)
            if pm is not None and gm is not None:
                rec.surface_dist = surface_distance(gm, pm, sampler)
    return rec


def build_gallery(dataset: Dataset, ids, frame: str, representation: str) -> Gallery:
    by_id = {e.id: e for e in dataset.examples}
    g = Gallery()
    for i in ids:
        ex = by_id[i]
        g.add(GalleryEntry(ex.input, dataset.target(ex, frame, representation),
                           {"id": ex.id, "model": ex.mesh_id, "category": ex.category, "view": ex.view}))
    return g


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None, splits: SplitSet | None = None,
                   write: bool = True) -> list[EvalRecord]:
    """Predict every test example for each (frame, representation) and score it.

    Records come back in a fixed order (frame, representation, split, example)
    whatever the thread count; reports are written to ``config.out``.
    """
    if dataset is None:
        if not config.dataset:
            raise ConfigError("no dataset given")
        dataset = Dataset.load(config.dataset)
    if splits is None and config.splits:
        try:
            splits = SplitSet.from_json(Path(config.splits).read_text())
        except (OSError, KeyError, ValueError) as e:
            raise ConfigError(f"cannot read splits {config.splits}: {e}") from None
    if splits is None:
        vh, ih = config.holdouts()
        splits = make_splits(dataset, config.held_out_category or None, vh, ih)
    try:
        splits.check(dataset)
    except (AssertionError, KeyError) as e:
        raise ConfigError(f"splits do not fit the dataset: {e}") from None
    missing = set(config.representations) - set(dataset.spec.representations)
    if missing:
        raise ConfigError(f"dataset has no {', '.join(sorted(missing))} targets")
    by_id = {e.id: e for e in dataset.examples}
    sampler = SurfaceSampler(seed=config.seed)
    records: list[EvalRecord] = []
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        for frame in config.frames:
            for rep in config.representations:
                gallery = build_gallery(dataset, splits.train, frame, rep)
                if config.predictor == "oracle":
                    everything = splits.train + [i for s in SPLITS for i in splits.tests[s]]
                    predictor = OraclePredictor(build_gallery(dataset, everything, frame, rep))
                else:
                    predictor = RetrievalPredictor().fit(gallery)
                cache = ShapeCache(config.fusion, dataset.spec.dims)
                for split in SPLITS:
                    exs = [by_id[i] for i in splits.tests[split]]

                    def job(ex, frame=frame, rep=rep, split=split, predictor=predictor, cache=cache):
                        pred = predictor.predict(ex.input)
                        return evaluate_example(dataset, ex, pred, frame, rep, split, config, sampler, cache)

                    records.extend(pool.map(job, exs))
    if write:
        write_reports(records, config.out)
    return records


def aggregate(records) -> dict[tuple, float]:
    """Mean of every metric per (split, frame, representation), summed with fsum."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        for m, v in r.metrics().items():
            groups.setdefault((r.split, r.frame, r.representation, m), []).append(v)
    return {k: math.fsum(v) / len(v) for k, v in groups.items()}


def summary_csv(records) -> str:
    agg = aggregate(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", "frame", "representation", "metric", "mean"])
    order = {s: i for i, s in enumerate(SPLITS)}
    for key in sorted(agg, key=lambda k: (order[k[0]], k[1], k[2], k[3])):
        w.writerow([*key, repr(agg[key])])
    return buf.getvalue()


def wide_table(records, representation: str, metric: str) -> str:
    """Rows View-centered / Obj-centered, columns NovelView / NovelModel / NovelClass."""
    agg = aggregate(records)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", *SPLITS])
    for frame in (VIEWER, OBJECT):
        row = [agg.get((s, frame, representation, metric)) for s in SPLITS]
        w.writerow([FRAME_LABELS[frame], *("" if v is None else f"{v:.4f}" for v in row)])
    return buf.getvalue()


def write_reports(records, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "records.jsonl", out / "summary.csv"]
    written[0].write_text("".join(r.to_json() + "\n" for r in records))
    written[1].write_text(summary_csv(records))
    reps = sorted({r.representation for r in records})
    metrics = sorted({m for r in records for m in r.metrics()})
    for rep in reps:
        for m in metrics:
            if any(r.representation == rep and m in r.metrics() for r in records):
                p = out / f"table_{rep}_{m}.csv"
                p.write_text(wide_table(records, rep, m))
                written.append(p)
    return written


# ---------------------------------------------------------------------------
# Qualitative export
# ---------------------------------------------------------------------------


def export_qualitative(example_id: str, prediction: Prediction, out_dir, fusion: str = "carve",
                       dims: int = 48) -> list[Path]:
    """Fused point cloud (PLY), extracted mesh (OBJ) and per-branch images of one prediction."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if prediction.surfaces is not None:
        cloud = fuse_point_cloud(prediction.surfaces)
        p = out / f"{example_id}_points.ply"
        cloud.save(p)
        written.append(p)
        written += save_multisurface(prediction.surfaces, out / f"{example_id}_branches")
    mesh = _mesh_or_none(fuse(prediction, fusion, dims))
    if mesh is not None:
        p = out / f"{example_id}_mesh.obj"
        save_mesh(mesh, p)
        written.append(p)
    return written
