#!/usr/bin/env python3
"""Viewpoint-optimization experiment: perturb the training poses, train with
per-image corrections enabled, and report the rotation error before/after.
"""

import argparse
import os
import sys

from hintfield.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/pose")
    ap.add_argument("--data", default=None)
    ap.add_argument("--iters", type=int, default=None)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--rot", type=float, default=1.0, help="degrees")
    ap.add_argument("--trans", type=float, default=0.005,
                    help="fraction of the scene radius")
    args = ap.parse_args()

    data = args.data or os.path.join(args.workdir, "data")
    if not os.path.exists(os.path.join(data, "manifest.json")):
        rc = cli(["gen", "--scene", "sphere_plane_glossy", "--train", "100",
                  "--test", "10", "--size", "32", "--seed", str(args.seed),
                  "--out", data])
        if rc:
            return rc

    extra = [] if args.iters is None else ["--iters", str(args.iters)]
    return cli(["train", "--data", data,
                "--out", os.path.join(args.workdir, "pose.ckpt"),
                "--seed", str(args.seed), "--optimize-poses",
                "--perturb-rot", str(args.rot),
                "--perturb-trans", str(args.trans), *extra])


if __name__ == "__main__":
    sys.exit(main())
