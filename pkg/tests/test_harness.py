import csv
import filecmp
import io
import math
from pathlib import Path

import numpy as np
import pytest

from mvsk import harness
from mvsk.errors import ConfigError, InsufficientData
from mvsk.geometry import CANONICAL_DIR, OBJECT, VIEWER, OrthoCamera, normalize_mesh
from mvsk.harness import (
    SPLITS,
    Dataset,
    DatasetSpec,
    EvalRecord,
    ExperimentConfig,
    SplitSet,
    aggregate,
    export_qualitative,
    generate_dataset,
    make_splits,
    parse_config,
    run_experiment,
    wide_table,
)
from mvsk.meshio import load_mesh
from mvsk.metrics import surface_distance
from mvsk.predictors import MULTISURFACE, VOXELS, make_targets
from mvsk.raster import render_branch
from mvsk.shapes import icosphere, make_shape

TINY = dict(categories=("box-table", "open-cup", "superellipsoid"), instances=4, views=5, res=32, dims=16, rig_size=6)


@pytest.fixture(scope="module")
def tiny():
    return generate_dataset(DatasetSpec(**TINY))


def walk(root):
    return sorted(p.relative_to(root) for p in Path(root).rglob("*") if p.is_file())


# --- dataset ---------------------------------------------------------------------


def test_counts(tiny):
    assert len(tiny) == 60
    assert len({e.id for e in tiny.examples}) == 60
    n = 0
    for ex in tiny.examples:
        for frame in (VIEWER, OBJECT):
            for rep in (MULTISURFACE, VOXELS):
                t = tiny.target(ex, frame, rep)
                assert t.frame_mode == frame and t.representation == rep
                n += 1
    assert n == 60 * 2 * 2


def test_view_directions(tiny):
    for e in tiny.examples:
        assert np.linalg.norm(e.input_dir) == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= e.azimuth < 360.0 and -20.0 <= e.elevation <= 50.0


def test_object_targets_shared_by_views(tiny):
    a, b = tiny.examples[0], tiny.examples[1]
    assert a.mesh_id == b.mesh_id
    assert tiny.target(a, OBJECT, VOXELS) is tiny.target(b, OBJECT, VOXELS)


def test_same_seed_same_bytes(tmp_path):
    spec = DatasetSpec(categories=("open-cup", "slat-chair"), instances=2, views=2, res=24, dims=12, rig_size=6)
    generate_dataset(spec, tmp_path / "a")
    generate_dataset(spec, tmp_path / "b")
    files = walk(tmp_path / "a")
    assert files == walk(tmp_path / "b") and files
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", [str(f) for f in files], shallow=False)
    assert not mismatch and not errors


def test_different_seed_differs():
    a = generate_dataset(DatasetSpec(categories=("open-cup",), instances=1, views=1, res=16, dims=8, rig_size=6))
    b = generate_dataset(DatasetSpec(categories=("open-cup",), instances=1, views=1, res=16, dims=8, rig_size=6, seed=1))
    assert not np.array_equal(a.meshes["open-cup-00"].vertices, b.meshes["open-cup-00"].vertices)


def test_save_load_roundtrip(tmp_path, tiny):
    tiny.save(tmp_path / "ds")
    back = Dataset.load(tmp_path / "ds")
    assert back.spec == tiny.spec
    assert [e.id for e in back.examples] == [e.id for e in tiny.examples]
    ex = tiny.examples[7]
    bex = back.example(ex.id)
    np.testing.assert_array_equal(bex.input.silhouette, ex.input.silhouette)
    assert back.target(bex, VIEWER, VOXELS).equals(tiny.target(ex, VIEWER, VOXELS))
    a = back.target(bex, OBJECT, MULTISURFACE).surfaces
    b = tiny.target(ex, OBJECT, MULTISURFACE).surfaces
    np.testing.assert_array_equal(a.silhouettes, b.silhouettes)


def test_cup_cavity_seen_from_top():
    # looking straight down, the floor of the cup lies well below its rim
    for s in range(4):
        cup = normalize_mesh(make_shape("open-cup", np.random.default_rng(s)))[0]
        br = render_branch(cup, OrthoCamera.looking((0, 0, -1)), 64)
        sil = br.silhouette > 0
        c = br.res // 2
        assert sil[c, c]
        rim = br.depth_front[sil].min()
        assert br.depth_front[c, c] - rim > 0.3


def test_generated_meshes_fit_unit_sphere(tiny):
    for mesh in tiny.meshes.values():
        assert np.linalg.norm(mesh.vertices, axis=1).max() <= 1.0 + 1e-9
        assert mesh.euler_characteristic() % 2 == 0


# --- splits ----------------------------------------------------------------------


def test_split_counts(tiny):
    s = make_splits(tiny, "superellipsoid", 1, 1)
    assert {k: len(v) for k, v in s.tests.items()} == {"NovelView": 6, "NovelModel": 10, "NovelClass": 20}
    assert len(s.train) == 60 - 36


def test_split_disjoint_exhaustive(tiny):
    s = make_splits(tiny, "open-cup", 2, 1)
    by_id = {e.id: e for e in tiny.examples}
    train = set(s.train)
    train_meshes = {by_id[i].mesh_id for i in train}
    everything = list(s.train)
    for name, ids in s.tests.items():
        assert not train & set(ids)
        everything += ids
    assert sorted(everything) == sorted(by_id)
    assert all(by_id[i].mesh_id in train_meshes for i in s.tests["NovelView"])
    assert all(by_id[i].mesh_id not in train_meshes for i in s.tests["NovelModel"] + s.tests["NovelClass"])
    assert all(by_id[i].category == "open-cup" for i in s.tests["NovelClass"])


def test_split_check_catches_leaks(tiny):
    s = make_splits(tiny, None, 1, 1)
    bad = SplitSet(s.train + s.tests["NovelModel"][:1], s.tests)
    with pytest.raises(AssertionError):
        bad.check(tiny)


def test_split_json_roundtrip(tiny):
    s = make_splits(tiny)
    back = SplitSet.from_json(s.to_json())
    assert back.train == s.train and back.tests == s.tests


def test_split_fractions(tiny):
    s = make_splits(tiny, None, 0.2, 0.25)
    assert len(s.tests["NovelView"]) == 2 * 3 * 1


def test_insufficient_data():
    one = generate_dataset(DatasetSpec(categories=("open-cup",), instances=2, views=2, res=16, dims=8, rig_size=6))
    with pytest.raises(InsufficientData):
        make_splits(one)
    two = generate_dataset(DatasetSpec(categories=("open-cup", "box-table"), instances=2, views=2, res=16, dims=8,
                                       rig_size=6))
    with pytest.raises(InsufficientData):
        make_splits(two, None, 2, 1)
    with pytest.raises(InsufficientData):
        make_splits(two, "bar-frame")


# --- config --------------------------------------------------------------------------


def test_parse_config():
    text = "# comment\ninstances = 3\n\ncategories = open-cup, box-table\n"
    spec = DatasetSpec.from_config(parse_config(text))
    assert spec.instances == 3 and spec.categories == ("open-cup", "box-table")


@pytest.mark.parametrize("text", ["no equals sign", "instances = three", "bogus = 1"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        DatasetSpec.from_config(parse_config(text))


def test_experiment_config_validation():
    with pytest.raises((ConfigError, ValueError)):
        ExperimentConfig.from_config({"predictor": "cnn"})
    cfg = ExperimentConfig.from_config({"frames": "viewer", "metrics": "voxel_iou"})
    assert cfg.frames == ("viewer",) and cfg.metrics == ("voxel_iou",)


def test_thread_count(monkeypatch):
    monkeypatch.setenv("MVSK_THREADS", "3")
    assert harness.thread_count() == 3
    monkeypatch.setenv("MVSK_THREADS", "lots")
    with pytest.raises(ConfigError):
        harness.thread_count()


# --- experiments -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def oracle_records(tiny, tmp_path_factory):
    out = tmp_path_factory.mktemp("oracle")
    cfg = ExperimentConfig(out=str(out), predictor="oracle", view_holdout=1, instance_holdout=1)
    return run_experiment(cfg, tiny, make_splits(tiny, None, 1, 1)), out


def test_oracle_experiment_is_perfect(oracle_records):
    records, _ = oracle_records
    assert len(records) == 2 * 2 * 36
    for r in records:
        assert r.voxel_iou == 1.0
        assert r.surface_dist < 1e-3
        if r.representation == MULTISURFACE:
            assert r.silhouette_iou == 1.0 and r.depth_err == 0.0
            assert r.proj_loss <= 2.0000001e-8


def test_aggregation_matches_records(oracle_records, tiny):
    records, out = oracle_records
    rows = list(csv.DictReader(io.StringIO((out / "summary.csv").read_text())))
    lines = [EvalRecord.from_json(l) for l in (out / "records.jsonl").read_text().splitlines()]
    assert len(lines) == len(records)
    for row in rows:
        vals = [getattr(r, row["metric"]) for r in lines
                if (r.split, r.frame, r.representation) == (row["split"], row["frame"], row["representation"])]
        assert abs(float(row["mean"]) - sum(vals) / len(vals)) <= 1e-12


def test_aggregation_is_order_independent():
    rng = np.random.default_rng(0)
    recs = [EvalRecord(f"e{i}", VIEWER, "NovelView", VOXELS, voxel_iou=float(v)) for i, v in enumerate(rng.random(500))]
    a = aggregate(recs)
    b = aggregate(recs[::-1])
    assert a == b
    assert a[("NovelView", VIEWER, VOXELS, "voxel_iou")] == math.fsum(r.voxel_iou for r in recs) / 500


def test_table_labels(oracle_records):
    records, out = oracle_records
    rows = list(csv.reader(io.StringIO(wide_table(records, VOXELS, "voxel_iou"))))
    assert rows[0] == ["frame", "NovelView", "NovelModel", "NovelClass"]
    assert [r[0] for r in rows[1:]] == ["View-centered", "Obj-centered"]
    assert (out / "table_voxels_voxel_iou.csv").exists()


def test_retrieval_experiment_runs(tiny, tmp_path):
    cfg = ExperimentConfig(out=str(tmp_path), frames=(VIEWER,), representations=(VOXELS,), metrics=("voxel_iou",))
    records = run_experiment(cfg, tiny)
    assert {r.split for r in records} == set(SPLITS)
    assert all(0.0 <= r.voxel_iou <= 1.0 for r in records)


def test_single_representation_dataset(tmp_path):
    spec = DatasetSpec(categories=("open-cup", "box-table"), instances=2, views=2, res=16, dims=8, rig_size=6,
                       representations=(MULTISURFACE,))
    ds = generate_dataset(spec, tmp_path / "ds")
    assert not list((tmp_path / "ds").rglob("*.msvx"))
    back = Dataset.load(tmp_path / "ds")
    assert back.spec.representations == (MULTISURFACE,)
    with pytest.raises(ConfigError):
        back.target(back.examples[0], VIEWER, VOXELS)
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(out=str(tmp_path / "r")), ds, make_splits(ds, None, 1, 1))


def test_mismatched_splits_rejected(tiny, tmp_path):
    other = SplitSet(["nope"], {s: [] for s in SPLITS})
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(out=str(tmp_path)), tiny, other)


def test_threads_do_not_change_reports(tiny, tmp_path, monkeypatch):
    cfg = dict(frames=(VIEWER,), representations=(MULTISURFACE,), metrics=("voxel_iou", "surface_dist"))
    outs = []
    for n in ("1", "3"):
        monkeypatch.setenv("MVSK_THREADS", n)
        out = tmp_path / n
        run_experiment(ExperimentConfig(out=str(out), **cfg), tiny)
        outs.append(out)
    for name in ("records.jsonl", "summary.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


# --- export -------------------------------------------------------------------------------


def test_export_multisurface(tmp_path):
    sphere = icosphere(4, 0.5)
    pred = make_targets(sphere, CANONICAL_DIR, OBJECT, MULTISURFACE, 20, 48, 96)
    written = export_qualitative("sphere", pred, tmp_path, dims=48)
    branches = list((tmp_path / "sphere_branches").glob("*_sil.pgm"))
    assert len(branches) == pred.surfaces.rig.n_pairs
    assert (tmp_path / "sphere_points.ply") in written
    mesh = load_mesh(tmp_path / "sphere_mesh.obj")
    assert surface_distance(sphere, mesh) < 0.05


def test_export_voxels(tmp_path):
    pred = make_targets(icosphere(3, 0.5), CANONICAL_DIR, OBJECT, VOXELS, dims=24)
    written = export_qualitative("v", pred, tmp_path, dims=24)
    assert [p.name for p in written] == ["v_mesh.obj"]
    assert len(load_mesh(written[0]).triangles) > 0
