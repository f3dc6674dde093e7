"""Command-line interface.

Subcommands: `depth` estimates pose and depth from a burst directory,
`enhance` runs the photographic applications on top of a depth map,
`synth` generates a synthetic burst with ground truth, and `eval` scores
an estimated depth map against ground truth (scale-aligned, since the
recovered depth is defined only up to scale).

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import applications, figures, formats, network, pipeline
from .errors import BurstDepthError, PipelineStageError
from .geometry import InverseDepthMap
from .matching import ClassicalBackend, LearnedBackend
from .synthetic import SceneConfig, exposure_ramp, render_burst

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class UsageError(Exception):
    pass


def _list_frames(input_dir: Path) -> list[Path]:
    if not input_dir.is_dir():
        raise UsageError(f"input directory not found: {input_dir}")
    paths = sorted(
        p for p in input_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise UsageError(f"no frames in {input_dir}")
    return paths


def _load_burst(input_dir: Path, calib_path: Path):
    if calib_path is None:
        raise UsageError("a calibration file is required (--calib)")
    if not calib_path.is_file():
        raise UsageError(f"calibration file not found: {calib_path}")
    intrinsics, width, height = formats.read_calibration(calib_path)
    frames = [formats.load_image(p) for p in _list_frames(input_dir)]
    if len(frames) < pipeline.MIN_FRAMES:
        raise UsageError(
            f"need at least {pipeline.MIN_FRAMES} frames, found {len(frames)}"
        )
    for i, frame in enumerate(frames):
        if frame.shape[:2] != (height, width):
            raise UsageError(
                f"frame {i} is {frame.shape[1]}x{frame.shape[0]}, calibration "
                f"says {width}x{height}"
            )
    return frames, intrinsics


def _make_backend(args) -> ClassicalBackend | LearnedBackend:
    if args.backend == "classical":
        return ClassicalBackend()
    if args.weights is None:
        raise UsageError("--backend learned requires --weights")
    return LearnedBackend(net=network.load_weights(args.weights))


def cmd_depth(args) -> int:
    frames, intrinsics = _load_burst(Path(args.input_dir), Path(args.calib))
    cfg = pipeline.PipelineConfig(
        backend=_make_backend(args), average_depth=args.depth_average
    )
    result = pipeline.run(frames, intrinsics, cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    z = result.depth
    depth_out = np.where(np.isfinite(z), z, 0.0).astype(np.float32)
    formats.write_pfm(out_dir / "depth.pfm", depth_out)
    formats.save_image(
        out_dir / "depth_color.png",
        figures.colorize_depth(z, result.inverse_depth.valid),
    )
    formats.write_poses(out_dir / "poses.txt", result.poses.poses)
    if args.flow_out:
        flow_dir = out_dir / "flows"
        flow_dir.mkdir(exist_ok=True)
        for i, flow in sorted(result.refined_flows.items()):
            data = np.where(flow.valid[..., None], flow.data, 0.0)
            formats.write_flo(flow_dir / f"flow_{i:04d}.flo", data)

    diag = result.diagnostics
    print(f"processed {len(frames)} frames, order {diag.processing_order}")
    for frame, reason in diag.skipped_frames:
        print(f"skipped frame {frame}: {reason}")
    print(f"bundle RMS reprojection: {diag.rms_reprojection:.4f} px")
    for stage, seconds in diag.stage_seconds.items():
        print(f"  {stage}: {seconds:.2f}s")
    print(f"wrote {out_dir / 'depth.pfm'}")
    return 0


def _load_depth_and_poses(args, frames, intrinsics):
    if args.estimate:
        result = pipeline.run(
            frames, intrinsics, pipeline.PipelineConfig(backend=_make_backend(args))
        )
        return result.inverse_depth, result.poses.poses
    if args.depth is None:
        raise UsageError("provide --depth/--poses or --estimate")
    z, _ = formats.read_pfm(args.depth)
    if z.shape != frames[0].shape[:2]:
        raise UsageError("depth map dimensions do not match the frames")
    valid = z > 0
    w = np.zeros_like(z, dtype=np.float64)
    w[valid] = 1.0 / z[valid]
    inverse_depth = InverseDepthMap(w, valid)
    poses = formats.read_poses(args.poses) if args.poses else None
    return inverse_depth, poses


def cmd_enhance(args) -> int:
    frames, intrinsics = _load_burst(Path(args.input_dir), Path(args.calib))
    inverse_depth, poses = _load_depth_and_poses(args, frames, intrinsics)

    if args.mode in ("denoise", "fuse"):
        if poses is None:
            raise UsageError(f"--mode {args.mode} needs --poses (or --estimate)")
        if len(poses) != len(frames):
            raise UsageError("pose table length does not match the frame count")
        burst = applications.align_to_reference(frames, intrinsics, poses, inverse_depth)
        if args.mode == "denoise":
            out = applications.denoise_weighted_average(burst)
        else:
            out = applications.exposure_fuse(burst)
    elif args.mode == "refocus":
        if args.focal_depth is None or args.aperture is None:
            raise UsageError("--mode refocus needs --focal-depth and --aperture")
        out = applications.synthetic_refocus(
            frames[0], inverse_depth, args.focal_depth, args.aperture
        )
    elif args.mode == "recolor":
        if args.z_min is None or args.z_max is None:
            raise UsageError("--mode recolor needs --z-min and --z-max")
        out = applications.recolor_depth_range(
            frames[0], inverse_depth.depth(), args.z_min, args.z_max
        )
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown mode {args.mode}")

    formats.save_image(args.out, out)
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    gains = exposure_ramp(args.exposure_ramp) if args.exposure_ramp else None
    try:
        cfg = SceneConfig(
            width=args.width,
            height=args.height,
            n_frames=args.frames,
            exposure_gains=gains,
            noise_sigma=args.noise_sigma,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    burst = render_burst(cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame_names = []
    for i, frame in enumerate(burst.frames):
        name = f"frame_{i:04d}.png"
        formats.save_image(out_dir / name, frame, bit_depth=16)
        frame_names.append(name)
    formats.write_pfm(out_dir / "gt_depth.pfm", burst.gt_depth)
    formats.write_poses(out_dir / "gt_poses.txt", burst.poses)
    for i, flow in sorted(burst.gt_flows.items()):
        formats.write_flo(out_dir / f"gt_flow_{i:04d}.flo", flow)
    formats.write_calibration(
        out_dir / "calib.txt", burst.intrinsics, cfg.width, cfg.height,
        comment="synthetic two-plane burst",
    )
    manifest = {
        "seed": cfg.seed,
        "frames": frame_names,
        "width": cfg.width,
        "height": cfg.height,
        "noise_sigma": cfg.noise_sigma,
        "exposure_gains": list(map(float, burst.gains)),
        "background_depth": cfg.background_depth,
        "patch_depth": cfg.patch_depth,
        "patch_rect": list(cfg.patch_rect),
        "calibration": "calib.txt",
        "ground_truth_depth": "gt_depth.pfm",
        "ground_truth_poses": "gt_poses.txt",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {cfg.n_frames} frames to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    est, _ = formats.read_pfm(args.estimate)
    gt, _ = formats.read_pfm(args.ground_truth)
    if est.shape != gt.shape:
        raise UsageError(
            f"dimension mismatch: estimate {est.shape}, ground truth {gt.shape}"
        )
    est = est.astype(np.float64)
    gt = gt.astype(np.float64)
    valid = (est > 0) & (gt > 0) & np.isfinite(est) & np.isfinite(gt)
    if not valid.any():
        raise UsageError("no jointly valid pixels to score")

    scale = applications.median_scale(est, gt, valid)
    aligned = est * scale
    metrics = {
        "rmse": applications.rmse(aligned, gt, valid),
        "bad_pixel_rate_percent": applications.bad_pixel_rate(aligned, gt, valid),
        "scale": scale,
    }

    if args.json:
        print(json.dumps(metrics))
    else:
        print(f"{'metric':<28}{'value':>12}")
        for key, value in metrics.items():
            print(f"{key:<28}{value:>12.6f}")

    if args.report_dir:
        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        with open(report_dir / "metrics.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["metric", "value"])
            for key, value in metrics.items():
                writer.writerow([key, f"{value:.10g}"])
        figures.save_eval_report(
            report_dir / "depth_report.png", aligned, gt, valid, metrics
        )
        print(f"report written to {report_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstdepth",
        description="Depth from narrow-baseline bursts, and what to do with it.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_depth = sub.add_parser("depth", help="estimate pose and depth from a burst")
    p_depth.add_argument("input_dir", help="directory of ordered frames")
    p_depth.add_argument("--calib", required=True, help="calibration file")
    p_depth.add_argument("--out-dir", required=True)
    p_depth.add_argument("--flow-out", action="store_true",
                         help="also write per-frame refined flows (.flo)")
    p_depth.add_argument("--backend", choices=("classical", "learned"),
                         default="classical")
    p_depth.add_argument("--weights", help="weight file for the learned backend")
    p_depth.add_argument("--depth-average", action="store_true",
                         help="average inverse depth over all frames")
    p_depth.set_defaults(func=cmd_depth)

    p_enh = sub.add_parser("enhance", help="denoise / fuse / refocus / recolor")
    p_enh.add_argument("input_dir")
    p_enh.add_argument("--mode", required=True,
                       choices=("denoise", "fuse", "refocus", "recolor"))
    p_enh.add_argument("--calib", required=True)
    p_enh.add_argument("--out", required=True)
    p_enh.add_argument("--depth", help="depth map (PFM) from a prior depth run")
    p_enh.add_argument("--poses", help="pose table from a prior depth run")
    p_enh.add_argument("--estimate", action="store_true",
                       help="run the pipeline inline instead")
    p_enh.add_argument("--backend", choices=("classical", "learned"),
                       default="classical")
    p_enh.add_argument("--weights")
    p_enh.add_argument("--focal-depth", type=float)
    p_enh.add_argument("--aperture", type=float)
    p_enh.add_argument("--z-min", type=float)
    p_enh.add_argument("--z-max", type=float)
    p_enh.set_defaults(func=cmd_enhance)

    p_synth = sub.add_parser("synth", help="generate a synthetic burst + ground truth")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--frames", type=int, default=28)
    p_synth.add_argument("--width", type=int, default=640)
    p_synth.add_argument("--height", type=int, default=480)
    p_synth.add_argument("--noise-sigma", type=float, default=0.0)
    p_synth.add_argument("--exposure-ramp", type=int, default=0,
                         help="number of exposure gain levels to cycle through")
    p_synth.add_argument("--seed", type=int, default=1234)
    p_synth.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="score an estimated depth map")
    p_eval.add_argument("--estimate", required=True, help="estimated depth (PFM)")
    p_eval.add_argument("--ground-truth", required=True, help="ground-truth depth (PFM)")
    p_eval.add_argument("--json", action="store_true", help="print metrics as JSON")
    p_eval.add_argument("--report-dir",
                        help="write metrics.csv and comparison figures here")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PipelineStageError as exc:
        print(f"pipeline failed: {exc}", file=sys.stderr)
        return 1
    except BurstDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
