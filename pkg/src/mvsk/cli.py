"""Command line entry point.

Exit status is 0 on success, 2 on configuration errors and 3 on geometry errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import ConfigError, GeometryError, MvskError, ParseError
from .fusion import carve_occupancy, fuse_point_cloud, fuse_tsdf
from .geometry import CANONICAL_DIR, OBJECT, VIEWER, build_view_rig, normalize_mesh, unit
from .meshio import load_mesh, save_mesh
from .predictors import MULTISURFACE, VOXELS, OraclePredictor, RetrievalPredictor, make_targets
from .raster import DEFAULT_RES, load_multisurface, save_multisurface
from .volumetric import DEFAULT_DIMS, VoxelGrid, marching_cubes, write_msvx

RIG_FILE = "rig.json"


def _direction(text: str | None) -> np.ndarray:
    if text is None:
        return np.array(CANONICAL_DIR)
    try:
        parts = [float(s) for s in text.split(",")]
    except ValueError:
        raise ConfigError(f"--dir expects x,y,z, got {text!r}") from None
    if len(parts) != 3:
        raise ConfigError(f"--dir expects three components, got {text!r}")
    try:
        return unit(np.array(parts))
    except (ValueError, ZeroDivisionError):
        raise ConfigError("--dir must be non-zero") from None


def _settings(args) -> dict[str, str]:
    """Config file values, then --set overrides, then explicit flags."""
    values = harness.read_config(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for key in ("dataset", "out", "seed", "splits"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return values


def _load_mesh(path):
    try:
        mesh = load_mesh(path)
    except OSError as e:
        raise ConfigError(f"cannot read mesh {path}: {e}") from None
    return normalize_mesh(mesh)[0]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_dataset_gen(args) -> None:
    values = _settings(args)
    out = values.pop("out", None)
    values.pop("dataset", None)
    if not out:
        raise ConfigError("dataset gen needs an output directory (--out or out = ...)")
    spec = harness.DatasetSpec.from_config(values)
    ds = harness.generate_dataset(spec, out)
    print(f"wrote {len(ds)} examples to {out}")


def _split_config(values) -> harness.ExperimentConfig:
    return harness.ExperimentConfig.from_config(values)


def cmd_dataset_split(args) -> None:
    values = _settings(args)
    out = values.pop("out", None)
    cfg = _split_config(values)
    if not cfg.dataset:
        raise ConfigError("dataset split needs --dataset")
    ds = harness.Dataset.load(cfg.dataset)
    vh, ih = cfg.holdouts()
    split = harness.make_splits(ds, cfg.held_out_category or None, vh, ih)
    path = Path(out) if out else Path(cfg.dataset) / "splits.json"
    path.write_text(split.to_json())
    counts = ", ".join(f"{k} {len(v)}" for k, v in split.tests.items())
    print(f"train {len(split.train)}, {counts} -> {path}")


def cmd_experiment_run(args) -> None:
    cfg = harness.ExperimentConfig.from_config(_settings(args))
    records = harness.run_experiment(cfg)
    print(f"{len(records)} records -> {cfg.out}")
    for rep in cfg.representations:
        if "voxel_iou" in cfg.metrics:
            print(f"voxel_iou ({rep})")
            print(harness.wide_table(records, rep, "voxel_iou"), end="")


def cmd_export(args) -> None:
    values = _settings(args)
    for key in ("frame", "representation"):
        values.pop(key, None)
    cfg = harness.ExperimentConfig.from_config(values)
    if not cfg.dataset:
        raise ConfigError("export needs --dataset")
    ds = harness.Dataset.load(cfg.dataset)
    try:
        ex = ds.example(args.example)
    except KeyError:
        raise ConfigError(f"no example {args.example!r} in {cfg.dataset}") from None
    if cfg.predictor == "oracle":
        pred = ds.target(ex, args.frame, args.representation)
    else:
        splits = harness.SplitSet.from_json(Path(cfg.splits).read_text()) if cfg.splits else \
            harness.make_splits(ds, cfg.held_out_category or None, *cfg.holdouts())
        gallery = harness.build_gallery(ds, splits.train, args.frame, args.representation)
        pred = RetrievalPredictor().fit(gallery).predict(ex.input)
    written = harness.export_qualitative(ex.id, pred, cfg.out, cfg.fusion, ds.spec.dims)
    for p in written:
        print(p)


def cmd_render(args) -> None:
    mesh = _load_mesh(args.mesh)
    d = _direction(args.dir)
    pred = make_targets(mesh, d, args.frame, MULTISURFACE, args.views, res=args.res)
    out = Path(args.out)
    save_multisurface(pred.surfaces, out)
    rig = pred.surfaces.rig
    meta = {"n_views": rig.n_views, "frame": rig.frame_mode, "input_dir": [float(x) for x in rig.input_dir]}
    (out / RIG_FILE).write_text(json.dumps(meta, indent=1) + "\n")
    print(f"wrote {rig.n_pairs} branches to {out}")


def cmd_fuse(args) -> None:
    src = Path(args.input)
    try:
        meta = json.loads((src / RIG_FILE).read_text())
    except (OSError, ValueError) as e:
        raise ConfigError(f"{src} has no readable {RIG_FILE}: {e}") from None
    rig = build_view_rig(meta["input_dir"], meta["n_views"], meta["frame"])
    try:
        ms = load_multisurface(src, rig)
    except OSError as e:
        raise ConfigError(f"cannot read branches from {src}: {e}") from None
    if args.method == "carve":
        grid = carve_occupancy(ms, args.grid)
        mesh = marching_cubes(grid)
    else:
        mesh = marching_cubes(fuse_tsdf(ms, args.grid))
    save_mesh(mesh, args.out)
    print(f"wrote {len(mesh.triangles)} triangles to {args.out}")
    if args.points:
        fuse_point_cloud(ms).save(args.points)
        print(f"wrote point cloud to {args.points}")


def cmd_voxelize(args) -> None:
    mesh = _load_mesh(args.mesh)
    pred = make_targets(mesh, _direction(args.dir), args.frame, VOXELS, dims=args.grid)
    write_msvx(args.out, pred.voxels)
    print(f"wrote {pred.voxels.count()} occupied voxels to {args.out}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _config_args(p, out_help="output path"):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--out", help=out_help)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvsk", description="Multi-surface shape targets, fusion and evaluation.")
    sub = ap.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="generate or split a procedural dataset")
    dsub = ds.add_subparsers(dest="action", required=True)
    g = dsub.add_parser("gen", help="generate meshes, inputs and targets")
    _config_args(g, "dataset directory")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_dataset_gen)
    s = dsub.add_parser("split", help="write NovelView/NovelModel/NovelClass splits")
    _config_args(s, "splits file (default DATASET/splits.json)")
    s.add_argument("--dataset")
    s.set_defaults(func=cmd_dataset_split)

    ex = sub.add_parser("experiment", help="run experiments")
    esub = ex.add_subparsers(dest="action", required=True)
    r = esub.add_parser("run", help="predict and score every test example")
    _config_args(r, "report directory")
    r.add_argument("--dataset")
    r.add_argument("--splits", help="splits file from 'dataset split'")
    r.add_argument("--seed", type=int, help="surface sampling seed")
    r.set_defaults(func=cmd_experiment_run)

    e = sub.add_parser("export", help="write point cloud, mesh and branch images of one prediction")
    _config_args(e, "export directory")
    e.add_argument("--dataset")
    e.add_argument("--splits")
    e.add_argument("--example", required=True)
    e.add_argument("--frame", choices=(VIEWER, OBJECT), default=VIEWER)
    e.add_argument("--representation", choices=(MULTISURFACE, VOXELS), default=MULTISURFACE)
    e.set_defaults(func=cmd_export)

    rd = sub.add_parser("render", help="render the multi-surface target of a mesh")
    rd.add_argument("--mesh", required=True)
    rd.add_argument("--views", type=int, choices=(6, 20), default=20)
    rd.add_argument("--frame", choices=(VIEWER, OBJECT), default=VIEWER)
    rd.add_argument("--dir", help="input view direction x,y,z (object to camera)")
    rd.add_argument("--res", type=int, default=DEFAULT_RES)
    rd.add_argument("--out", required=True)
    rd.set_defaults(func=cmd_render)

    f = sub.add_parser("fuse", help="fuse a rendered multi-surface directory into a mesh")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--method", choices=("carve", "tsdf"), default="carve")
    f.add_argument("--grid", type=int, default=DEFAULT_DIMS)
    f.add_argument("--out", required=True)
    f.add_argument("--points", help="also write the oriented point cloud (PLY)")
    f.set_defaults(func=cmd_fuse)

    v = sub.add_parser("voxelize", help="solid voxel target of a mesh")
    v.add_argument("--mesh", required=True)
    v.add_argument("--grid", type=int, default=DEFAULT_DIMS)
    v.add_argument("--frame", choices=(VIEWER, OBJECT), default=VIEWER)
    v.add_argument("--dir")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_voxelize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, ParseError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except GeometryError as e:
        print(f"geometry error: {e}", file=sys.stderr)
        return 3
    except MvskError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
