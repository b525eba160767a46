"""Command-line surface: dataset generation, training, rendering, evaluation,
property-check runner and the hint ablation report.

Exit codes: 0 success, 1 failed run or failed checks, 2 usage errors
(argparse). Diagnostics go to stderr; reports are JSON on disk.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import trainer as tr
from .metrics import build_report, psnr, ssim, validate_report
from .pfm import read_pfm, write_pfm, write_png_preview
from .renderer import LightSource, RenderConfig, render_image
from .scenegen import (SCENES, DatasetManifest, lookat_pose, make_camera,
                       oracle_shadow_mask, perturb_poses, generate_dataset)


def _load_manifest(data_dir):
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.json in {data_dir}")
    return DatasetManifest.load(path)


def _render_cfg(state, seed, deterministic=True):
    return RenderConfig(sample=state.config.sample,
                        hint=state.config.hint_config(),
                        bounding_radius=state.config.bounding_radius,
                        seed=seed, deterministic=deterministic)


def _parse_vec3(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return np.array(parts)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args):
    if args.scene not in SCENES:
        print(f"unknown scene {args.scene!r}; available: {sorted(SCENES)}",
              file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    man = generate_dataset(SCENES[args.scene](), args.train, args.test,
                           args.size, args.seed, args.out, fov_deg=args.fov,
                           light_intensity=args.light_intensity)
    print(f"wrote {len(man.records)} images + manifest to {args.out}")
    return 0


def _train_config(args):
    if args.preset not in tr.PRESETS:
        raise ValueError(f"unknown preset {args.preset!r}")
    overrides = dict(
        seed=args.seed,
        use_shadow_hint=not args.no_shadow_hint,
        use_highlight_hint=not args.no_highlight_hint,
        shadow_rays=args.shadow_rays,
        basis_size=args.basis,
        optimize_poses=args.optimize_poses,
    )
    if args.iters is not None:
        overrides["total_iters"] = args.iters
        overrides["warmup_iters"] = min(args.iters // 10,
                                        tr.PRESETS[args.preset]().warmup_iters)
    if args.lr is not None:
        overrides["lr0"] = args.lr
    return tr.PRESETS[args.preset](**overrides)


def _pose_errors(data, corrections):
    errs = []
    for i, cam in enumerate(data.cameras):
        if data.poses_true is None or data.poses_true[i] is None:
            continue
        fitted = tr.corrected_pose(cam, corrections[i])
        errs.append(tr.rotation_angle_deg(fitted.rotation,
                                          data.poses_true[i].rotation))
    return errs


def cmd_train(args):
    man = _load_manifest(args.data)
    if args.perturb_rot > 0 or args.perturb_trans > 0:
        man = perturb_poses(man, args.perturb_rot, args.perturb_trans,
                            seed=args.perturb_seed)
    data = tr.RayDataset.from_manifest(man, args.data)
    config = _train_config(args)
    state = tr.TrainState.create(config, data.n_images)

    before = _pose_errors(data, state.corrections)
    if before:
        print(f"initial mean rotation error {np.mean(before):.4f} deg")

    state, reports = tr.fit(data, config, state=state,
                            checkpoint_path=args.out,
                            checkpoint_every=args.checkpoint_every,
                            progress=lambda r: print(
                                f"iter {r.iteration:6d}  color {r.l_color:.4f}  "
                                f"eikonal {r.l_eikonal:.4f}  lr {r.lr:.2e}",
                                flush=True))
    ckpt.save_checkpoint(args.out, state)

    after = _pose_errors(data, state.corrections)
    if after:
        print(f"final mean rotation error {np.mean(after):.4f} deg")
    print(f"saved checkpoint to {args.out}")
    return 0


def cmd_render(args):
    state = ckpt.load_checkpoint(args.checkpoint)
    if args.view_index is not None:
        man = _load_manifest(args.data)
        rec = man.records[args.view_index]
        cameras = [rec.camera]
        light = LightSource(np.asarray(rec.light_pos), rec.light_intensity)
    else:
        if args.eye is None or args.light is None:
            print("render needs either --view-index with --data, or --eye and"
                  " --light", file=sys.stderr)
            return 2
        cam = make_camera(args.eye, args.size, args.fov)
        if args.orbit > 1:
            r = np.linalg.norm(args.eye[:2])
            phi0 = np.arctan2(args.eye[1], args.eye[0])
            cameras = []
            for k in range(args.orbit):
                phi = phi0 + 2.0 * np.pi * k / args.orbit
                eye = np.array([r * np.cos(phi), r * np.sin(phi), args.eye[2]])
                cameras.append(make_camera(eye, args.size, args.fov))
        else:
            cameras = [cam]
        light = LightSource(args.light, args.light_intensity)

    cfg = _render_cfg(state, args.seed, args.deterministic)
    base, ext = os.path.splitext(args.out)
    if ext.lower() != ".pfm":
        base = args.out
    for k, camera in enumerate(cameras):
        img = render_image(state.density, state.radiance, camera, light, cfg,
                           n_workers=args.workers)
        # trained at fixed intensity; relighting strength applies post-hoc
        img = (args.light_scale * img).astype(np.float32)
        suffix = f"_{k:03d}" if len(cameras) > 1 else ""
        write_pfm(f"{base}{suffix}.pfm", img)
        write_png_preview(f"{base}{suffix}.png", img)
        print(f"wrote {base}{suffix}.pfm / .png")
    return 0


def eval_checkpoint(state, man, data_dir, split="test", shadow_l1=False,
                    seed=0, workers=None):
    """Per-image PSNR/SSIM (and optional oracle-shadow-region L1) entries."""
    records = man.split(split)
    if not records:
        raise ValueError(f"no images in split {split!r}")
    cfg = _render_cfg(state, seed)
    entries = []
    for rec in records:
        img = render_image(state.density, state.radiance, rec.camera,
                           LightSource(np.asarray(rec.light_pos),
                                       rec.light_intensity),
                           cfg, n_workers=workers)
        ref = read_pfm(os.path.join(data_dir, rec.file))
        entry = {"file": rec.file, "psnr": psnr(img, ref),
                 "ssim": ssim(img, ref)}
        if shadow_l1:
            mask = oracle_shadow_mask(man.scene, rec.camera,
                                      np.asarray(rec.light_pos))
            if mask.any():
                entry["shadow_l1"] = float(
                    np.mean(np.abs(img - ref)[mask]))
        entries.append(entry)
    return entries


def cmd_eval(args):
    state = ckpt.load_checkpoint(args.checkpoint)
    man = _load_manifest(args.data)
    entries = eval_checkpoint(state, man, args.data, split=args.split,
                              shadow_l1=args.shadow_l1, seed=args.seed,
                              workers=args.workers)
    report = validate_report(build_report(entries, split=args.split,
                                          checkpoint=args.checkpoint))
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=1)
    print(f"mean PSNR {report['mean_psnr']:.2f} dB  "
          f"mean SSIM {report['mean_ssim']:.4f}  -> {args.out}")
    return 0


CHECK_SUITES = {
    "numeric": ["test_numerics.py"],
    "fields": ["test_fields.py"],
    "hints": ["test_hints.py"],
    "render": ["test_renderer.py", "test_scenegen.py", "test_pfm_metrics.py"],
    "trainer": ["test_trainer.py", "test_checkpoint.py"],
    "cli": ["test_cli.py"],
    "acceptance": ["test_acceptance.py"],
}


def cmd_check(args):
    if args.suite != "all" and args.suite not in CHECK_SUITES:
        print(f"unknown suite {args.suite!r}; choose from "
              f"{sorted(CHECK_SUITES) + ['all']}", file=sys.stderr)
        return 2
    tests_dir = Path(__file__).resolve().parents[2] / "tests"
    if not tests_dir.is_dir():
        print(f"tests directory not found at {tests_dir}", file=sys.stderr)
        return 1
    if args.suite == "all":
        targets = [str(tests_dir)]
    else:
        targets = [str(tests_dir / t) for t in CHECK_SUITES[args.suite]]
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", *targets])
    return 0 if proc.returncode == 0 else 1


def hint_consistency_rms(state, man, data_dir, n_rays=256, k=16, seed=0):
    """RMS difference between k-sample and single-sample shadow hints on rays
    from the first test view."""
    import dataclasses
    from .fields import sample_ray
    from .hints import compute_hints
    from .renderer import camera_rays, ray_sphere_span

    rec = (man.split("test") or man.records)[0]
    origins, dirs = camera_rays(rec.camera)
    rng = np.random.default_rng(seed)
    pick = rng.choice(origins.shape[0], size=min(n_rays, origins.shape[0]),
                      replace=False)
    origins, dirs = origins[pick], dirs[pick]
    lights = np.broadcast_to(np.asarray(rec.light_pos, dtype=float),
                             (origins.shape[0], 3))
    near, far = ray_sphere_span(origins, dirs, state.config.bounding_radius)
    samples = sample_ray(state.density, origins, dirs, near, far,
                         state.config.sample, np.random.default_rng(seed))
    base_cfg = state.config.hint_config()
    h1 = compute_hints(state.density, samples, origins, lights,
                       dataclasses.replace(base_cfg, shadow_rays=1),
                       np.random.default_rng(seed + 1))
    hk = compute_hints(state.density, samples, origins, lights,
                       dataclasses.replace(base_cfg, shadow_rays=k),
                       np.random.default_rng(seed + 2))
    return float(np.sqrt(np.mean((h1.shadow - hk.shadow) ** 2)))


def cmd_ablate(args):
    man = _load_manifest(args.data)
    state_with = ckpt.load_checkpoint(args.with_hints)
    state_without = ckpt.load_checkpoint(args.without_hints)
    report = {"schema_version": 1, "metric": "shadow-region L1 vs oracle mask"}
    for tag, state in (("with_shadow_hints", state_with),
                       ("without_shadow_hints", state_without)):
        entries = eval_checkpoint(state, man, args.data, split=args.split,
                                  shadow_l1=True, seed=args.seed,
                                  workers=args.workers)
        agg = build_report(entries)
        report[tag] = {
            "mean_psnr": agg["mean_psnr"], "mean_ssim": agg["mean_ssim"],
            "mean_shadow_l1": agg.get("mean_shadow_l1"),
        }
    report["shadow_hint_rms_k16_vs_k1"] = hint_consistency_rms(
        state_with, man, args.data, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=1)
    a = report["with_shadow_hints"]["mean_shadow_l1"]
    b = report["without_shadow_hints"]["mean_shadow_l1"]
    print(f"shadow-region L1: with hints {a:.4f}, without {b:.4f} -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hintfield",
                                description="Relightable neural field toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic capture dataset")
    g.add_argument("--scene", default="sphere_plane_glossy")
    g.add_argument("--train", type=int, default=100)
    g.add_argument("--test", type=int, default=10)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--fov", type=float, default=55.0)
    g.add_argument("--light-intensity", type=float, default=10.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--preset", default="tiny")
    t.add_argument("--iters", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--no-shadow-hint", action="store_true")
    t.add_argument("--no-highlight-hint", action="store_true")
    t.add_argument("--shadow-rays", type=int, default=1, metavar="K")
    t.add_argument("--basis", type=int, default=4, metavar="N")
    t.add_argument("--optimize-poses", action="store_true")
    t.add_argument("--deterministic", action="store_true",
                   help="training is always deterministic for a fixed seed")
    t.add_argument("--perturb-rot", type=float, default=0.0, metavar="DEG")
    t.add_argument("--perturb-trans", type=float, default=0.0, metavar="FRAC")
    t.add_argument("--perturb-seed", type=int, default=0)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render images from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--data", help="dataset dir (for --view-index)")
    r.add_argument("--view-index", type=int, default=None)
    r.add_argument("--eye", type=_parse_vec3, default=None)
    r.add_argument("--light", type=_parse_vec3, default=None)
    r.add_argument("--light-intensity", type=float, default=10.0)
    r.add_argument("--light-scale", type=float, default=1.0)
    r.add_argument("--size", type=int, default=64)
    r.add_argument("--fov", type=float, default=55.0)
    r.add_argument("--orbit", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--deterministic", action="store_true", default=True)
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--shadow-l1", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run the property/acceptance suites")
    c.add_argument("--suite", default="all")
    c.set_defaults(func=cmd_check)

    a = sub.add_parser("ablate", help="hints on/off comparison report")
    a.add_argument("--data", required=True)
    a.add_argument("--with-hints", required=True, metavar="CKPT",
                   help="checkpoint trained with shadow hints")
    a.add_argument("--without-hints", required=True, metavar="CKPT",
                   help="checkpoint trained without shadow hints")
    a.add_argument("--out", required=True)
    a.add_argument("--split", default="test")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--workers", type=int, default=None)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
