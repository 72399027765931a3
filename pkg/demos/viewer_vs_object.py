"""Viewer-centered targets move with the input view; object-centered targets do not.

    python demos/viewer_vs_object.py
"""

import argparse

import numpy as np

from mvsk.geometry import OBJECT, VIEWER, direction_from_angles
from mvsk.metrics import voxel_iou
from mvsk.predictors import MULTISURFACE, VOXELS, make_targets
from mvsk.shapes import make_shape


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--category", default="slat-chair")
    ap.add_argument("--dims", type=int, default=32)
    args = ap.parse_args()

    mesh = make_shape(args.category, np.random.default_rng(1))
    views = [(30, 10), (120, 35), (250, -5)]
    dirs = [direction_from_angles(a, e) for a, e in views]

    for frame in (VIEWER, OBJECT):
        grids = [make_targets(mesh, d, frame, VOXELS, dims=args.dims).voxels for d in dirs]
        ious = [voxel_iou(grids[0], g) for g in grids[1:]]
        print(f"{frame:>6}: IoU of view 0 target against views 1, 2 = " + ", ".join(f"{v:.3f}" for v in ious))

    # camera 0 of a viewer rig is the input camera, so branch 0 looks like the input
    for d, (a, e) in zip(dirs, views):
        ms = make_targets(mesh, d, VIEWER, MULTISURFACE, rig_size=6, res=64).surfaces
        print(f"azimuth {a:3d}, elevation {e:3d}: branch 0 covers {int(ms.silhouettes[0].sum())} pixels")


if __name__ == "__main__":
    main()
