#!/usr/bin/env python3
"""Reproduce the desk-scale end-to-end result: generate the canonical
dataset, train the tiny preset, and evaluate on the held-out split.

Roughly an hour on a single core. Artifacts land in --workdir.
"""

import argparse
import os
import sys

from hintfield.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/tiny")
    ap.add_argument("--iters", type=int, default=None,
                    help="override the preset iteration count (for smoke runs)")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    data = os.path.join(args.workdir, "data")
    ckpt = os.path.join(args.workdir, "model.ckpt")
    report = os.path.join(args.workdir, "report.json")

    if not os.path.exists(os.path.join(data, "manifest.json")):
        rc = cli(["gen", "--scene", "sphere_plane_glossy", "--train", "100",
                  "--test", "10", "--size", "32", "--seed", str(args.seed),
                  "--out", data])
        if rc:
            return rc

    train_args = ["train", "--data", data, "--out", ckpt,
                  "--seed", str(args.seed), "--checkpoint-every", "500"]
    if args.iters is not None:
        train_args += ["--iters", str(args.iters)]
    rc = cli(train_args)
    if rc:
        return rc

    return cli(["eval", "--checkpoint", ckpt, "--data", data,
                "--shadow-l1", "--out", report])


if __name__ == "__main__":
    sys.exit(main())
