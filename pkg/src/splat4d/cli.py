"""Command-line interface.

Subcommands:
  render <scene> <trajectory> [--fps 10] [--duration S] [--out-dir DIR]
      Render RGB frames (frame_NNNNN.png) and depth planes (depth_NNNNN.bin)
      along a trajectory. Trajectory times are seconds since the input frame.
  fit <config.json>
      Fit raw splat maps to ground-truth frames; writes a scene file and a
      JSON report (paths given in the config).
  metrics <pred-dir> <gt-dir>
      PSNR/SSIM (and depth MRE when depth planes are present) per frame as
      JSON lines, then a summary line.
  aggregate <scene> <mask> [--out PATH]
      Re-label splats from an instance mask, recompute per-object motion and
      store it back into the scene file.
  serve <scene> [--port 8000] [--host 127.0.0.1] [--max-time 2.0]
      Start the interactive render service.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .camera import DTYPE, CameraIntrinsics, Pose
from .fitter import FitProblem, FitTarget, LearningRates, fit
from .motion import aggregate, propagate
from .objectives import LossWeights, metrics as compute_metrics
from .rasterizer import DEFAULT_CONFIG, render
from .scene_io import (interpolate_pose, load_depth, load_image, load_mask, load_scene,
                       load_trajectory, save_depth, save_image, save_scene)
from .splat_model import decode


def _pose_from_json(obj) -> Pose:
    return Pose(
        torch.tensor([float(v) for v in obj["quaternion"]], dtype=DTYPE),
        torch.tensor([float(v) for v in obj["translation"]], dtype=DTYPE),
    )


def cmd_render(args) -> int:
    smap, K, motion = load_scene(args.scene)
    traj = load_trajectory(args.trajectory)
    splats = decode(smap.to(DTYPE), K)
    table = motion if motion is not None else aggregate(splats)

    duration = args.duration if args.duration is not None else traj.t_end - traj.t_start
    n_frames = max(1, int(round(duration * args.fps)) + 1)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_frames):
        t = traj.t_start + min(i / args.fps, duration)
        if t < 0:
            raise ValueError("trajectory times must be >= 0 (seconds since the input frame)")
        pose = interpolate_pose(traj, min(t, traj.t_end))
        out = render(propagate(splats, table, t), pose, K, DEFAULT_CONFIG)
        save_image(out_dir / f"frame_{i:05d}.png", out.rgb)
        save_depth(out_dir / f"depth_{i:05d}.bin", out.depth)
    print(f"wrote {n_frames} frames to {out_dir}")
    return 0


def _target_from_json(obj) -> FitTarget:
    return FitTarget(
        image=load_image(obj["image"]),
        depth=load_depth(obj["depth"]),
        pose=_pose_from_json(obj["pose"]),
        time=float(obj["time"]),
    )


def cmd_fit(args) -> int:
    with open(args.config) as f:
        cfg = json.load(f)
    ki = cfg["intrinsics"]
    image = load_image(cfg["input"]["image"])
    H, W = image.shape[:2]
    K = CameraIntrinsics(fx=float(ki["fx"]), fy=float(ki["fy"]),
                         cx=float(ki["cx"]), cy=float(ki["cy"]), width=W, height=H)
    problem = FitProblem(
        input_image=image,
        input_depth=load_depth(cfg["input"]["depth"]),
        mask=load_mask(cfg["input"]["mask"]),
        intrinsics=K,
        target_far=_target_from_json(cfg["targets"]["far"]),
        target_near=_target_from_json(cfg["targets"]["near"]),
        weights=LossWeights(**cfg.get("weights", {})),
        iterations=int(cfg.get("iterations", 500)),
        seed=int(cfg.get("seed", 0)),
        layers=int(cfg.get("layers", 2)),
        learning_rates=LearningRates(**cfg.get("learning_rates", {})),
        velocity_prior_scale=float(cfg.get("velocity_prior_scale", 1.0)),
    )
    best_map, table, report = fit(problem)
    out = cfg.get("output", {})
    scene_path = out.get("scene", "fitted_scene.s4d")
    report_path = out.get("report", "fit_report.json")
    save_scene(scene_path, best_map, K, table)
    with open(report_path, "w") as f:
        json.dump({
            "loss_trace": report.loss_trace,
            "best_iteration": report.best_iteration,
            "best_loss": report.best_loss,
            "final_metrics": report.final_metrics,
            "wall_clock_seconds": report.wall_clock_seconds,
        }, f, indent=2)
    print(f"wrote {scene_path} and {report_path} "
          f"(best loss {report.best_loss:.6g} at iteration {report.best_iteration})")
    return 0


def cmd_metrics(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    frames = sorted(p.name for p in gt_dir.glob("frame_*.png"))
    if not frames:
        raise FileNotFoundError(f"no frame_*.png in {gt_dir}")
    records = []
    for name in frames:
        pred = load_image(pred_dir / name)
        gt = load_image(gt_dir / name)
        depth_name = name.replace("frame_", "depth_").replace(".png", ".bin")
        kwargs = {}
        if (pred_dir / depth_name).exists() and (gt_dir / depth_name).exists():
            d_gt = load_depth(gt_dir / depth_name)
            d_pred = load_depth(pred_dir / depth_name)
            kwargs = {"depth": d_gt, "depth_pred": d_pred,
                      "depth_valid_mask": (d_gt > 0) & (d_gt < 1e4)}
        rec = {"frame": name, **compute_metrics(gt, pred, **kwargs)}
        records.append(rec)
        print(json.dumps(rec))
    summary = {"frames": len(records)}
    for key in ("psnr", "ssim", "depth_mre"):
        vals = [r[key] for r in records if key in r]
        if vals:
            summary[key] = sum(vals) / len(vals)
    print(json.dumps({"summary": summary}))
    return 0


def cmd_aggregate(args) -> int:
    smap, K, _ = load_scene(args.scene)
    mask = load_mask(args.mask)
    if tuple(mask.shape) != (smap.height, smap.width):
        raise ValueError(f"mask {tuple(mask.shape)} does not match scene "
                         f"{smap.height}x{smap.width}")
    smap = replace(smap, object_id=mask.to(torch.int64))
    table = aggregate(decode(smap.to(DTYPE), K))
    out_path = args.out if args.out else args.scene
    save_scene(out_path, smap, K, table)
    print(f"wrote {out_path} with {len(table)} motion entries")
    return 0


def cmd_serve(args) -> int:
    from .viewer_server import serve

    serve(args.scene, port=args.port, host=args.host, max_time=args.max_time)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splat4d", description="4D Gaussian splat scene engine")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("render", help="render frames along a camera trajectory")
    pr.add_argument("scene")
    pr.add_argument("trajectory")
    pr.add_argument("--fps", type=float, default=10.0, help="frames per second (default 10)")
    pr.add_argument("--duration", type=float, default=None,
                    help="seconds to render (default: trajectory span)")
    pr.add_argument("--out-dir", default="renders", help="output directory (default renders)")
    pr.set_defaults(func=cmd_render)

    pf = sub.add_parser("fit", help="fit a scene to ground-truth frames")
    pf.add_argument("config", help="JSON config file")
    pf.set_defaults(func=cmd_fit)

    pm = sub.add_parser("metrics", help="compare rendered frames against ground truth")
    pm.add_argument("pred_dir")
    pm.add_argument("gt_dir")
    pm.set_defaults(func=cmd_metrics)

    pa = sub.add_parser("aggregate", help="recompute per-object motion from a mask")
    pa.add_argument("scene")
    pa.add_argument("mask")
    pa.add_argument("--out", default=None, help="output scene path (default: in place)")
    pa.set_defaults(func=cmd_aggregate)

    ps = sub.add_parser("serve", help="serve interactive renders over HTTP/WebSocket")
    ps.add_argument("scene")
    ps.add_argument("--port", type=int, default=8000)
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--max-time", type=float, default=2.0)
    ps.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
