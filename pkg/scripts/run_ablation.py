#!/usr/bin/env python3
"""Shadow-hint ablation: train twice (with and without the shadow hint) on
the same dataset and emit the comparison report produced by `ablate`.
"""

import argparse
import os
import sys

from hintfield.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/ablation")
    ap.add_argument("--data", default=None,
                    help="existing dataset dir (generated if omitted)")
    ap.add_argument("--iters", type=int, default=None)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    data = args.data or os.path.join(args.workdir, "data")
    if not os.path.exists(os.path.join(data, "manifest.json")):
        rc = cli(["gen", "--scene", "sphere_plane_glossy", "--train", "100",
                  "--test", "10", "--size", "32", "--seed", str(args.seed),
                  "--out", data])
        if rc:
            return rc

    extra = [] if args.iters is None else ["--iters", str(args.iters)]
    with_ckpt = os.path.join(args.workdir, "with_hints.ckpt")
    without_ckpt = os.path.join(args.workdir, "without_hints.ckpt")
    for out, flags in ((with_ckpt, []), (without_ckpt, ["--no-shadow-hint"])):
        rc = cli(["train", "--data", data, "--out", out,
                  "--seed", str(args.seed), *extra, *flags])
        if rc:
            return rc

    return cli(["ablate", "--data", data, "--with-hints", with_ckpt,
                "--without-hints", without_ckpt,
                "--out", os.path.join(args.workdir, "ablation.json")])


if __name__ == "__main__":
    sys.exit(main())
