"""A small end-to-end benchmark: generate, split, retrieve, fuse and tabulate.

    python demos/small_experiment.py --out /tmp/mvsk_small
"""

import argparse
import time
from pathlib import Path

from mvsk.harness import DatasetSpec, ExperimentConfig, generate_dataset, make_splits, run_experiment, wide_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="mvsk_small")
    ap.add_argument("--instances", type=int, default=6)
    ap.add_argument("--views", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)

    t = time.perf_counter()
    spec = DatasetSpec(instances=args.instances, views=args.views, seed=args.seed, res=64, dims=32)
    ds = generate_dataset(spec, out / "dataset")
    splits = make_splits(ds, None, 1, 1)
    print(f"{len(ds)} examples in {time.perf_counter() - t:.1f} s; "
          + ", ".join(f"{k} {len(v)}" for k, v in splits.tests.items()))

    for predictor in ("oracle", "retrieval"):
        cfg = ExperimentConfig(out=str(out / predictor), predictor=predictor, metrics=("voxel_iou", "silhouette_iou"))
        records = run_experiment(cfg, ds, splits)
        print(f"\n{predictor}: fused voxel IoU, multi-surface predictions")
        print(wide_table(records, "multisurface", "voxel_iou"), end="")
        print(f"{predictor}: voxel IoU, voxel predictions")
        print(wide_table(records, "voxels", "voxel_iou"), end="")


if __name__ == "__main__":
    main()
