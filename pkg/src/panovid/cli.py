"""Command-line interface.

Subcommands cover the full workflow:

* ``panovid synth-bench``: generate a synthetic panning benchmark with
  exact ground truth.
* ``panovid register``: project a panning clip onto the panoramic canvas
  (estimating the camera when no path file is given).
* ``panovid complete``: run the completion pipeline from a JSON job config.
* ``panovid evaluate``: PSNR and flow endpoint error against ground truth.
* ``panovid inspect``: print a JSON summary of a video, canvas, camera
  path, or bench directory.

Exit codes: 0 success, 2 config or file-format problems, 3 registration
failures, 4 backend failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .c2f import run_coarse_to_fine
from .config import (
    load_config,
    make_backend,
    make_settings,
    resolve_config,
    write_resolved,
)
from .errors import FormatError, PanovidError
from .metrics import evaluate_completion, write_report
from .registration import (
    auto_fit_canvas,
    estimate_camera,
    load_camera_path,
    project_to_canvas,
    save_camera_path,
)
from .video_io import (
    CanvasVideo,
    MaskVolume,
    VideoVolume,
    load_canvas_video,
    load_mask,
    load_video,
    save_canvas_video,
    save_mask,
    save_video,
)

log = logging.getLogger(__name__)


def _cmd_synth_bench(args) -> int:
    meta = bench_mod.make_synthetic(
        args.out,
        preset=args.preset,
        seed=args.seed,
        num_frames=args.frames,
        canvas_height=args.canvas_height,
        canvas_width=args.canvas_width,
        crop_ratio=args.crop_ratio,
        frame_rate=args.fps,
        trajectory_file=args.trajectory,
        sprites=args.sprites,
        moving=not args.static_scene,
    )
    print(
        f"bench '{meta['preset']}': {meta['frames']} frames, canvas "
        f"{meta['canvas']['width']}x{meta['canvas']['height']}, crop "
        f"{meta['crop']['width']}x{meta['crop']['height']} -> {args.out}"
    )
    return 0


def _cmd_register(args) -> int:
    video = load_video(args.video, frame_rate=args.fps)
    if args.camera is not None:
        camera = load_camera_path(args.camera)
    else:
        camera = estimate_camera(video, focal_px=args.focal, seed=args.seed)
    geom = None
    if camera.mode == "rotation":
        geom = auto_fit_canvas(camera, (video.width, video.height), margin_px=args.margin)
    canvas = project_to_canvas(video, camera, geom)
    out = Path(args.out)
    save_canvas_video(canvas, out / "canvas")
    save_camera_path(camera, out / "camera.json")
    density = float(canvas.mask.mean())
    print(
        f"canvas {canvas.frames.shape[2]}x{canvas.frames.shape[1]} "
        f"({canvas.frames.shape[0]} frames), coverage {density:.3f} -> {out / 'canvas'}"
    )
    return 0


def _load_job_input(resolved: dict) -> CanvasVideo:
    src = resolved["input"]
    if "canvas" in src:
        video = load_video(src["canvas"]["video"])
        mask = load_mask(src["canvas"]["mask"])
        if mask.shape != video.frames.shape[:3]:
            raise FormatError(
                f"canvas mask {mask.shape} does not match video "
                f"{video.frames.shape[:3]}"
            )
        return CanvasVideo(video.frames, mask.mask, frame_rate=video.frame_rate)
    raw = src["raw"]
    video = load_video(raw["video"])
    if "camera" in raw:
        camera = load_camera_path(raw["camera"])
    else:
        camera = estimate_camera(video)
    geom = None
    if camera.mode == "rotation":
        geom = auto_fit_canvas(camera, (video.width, video.height))
    return project_to_canvas(video, camera, geom)


def _save_output(canvas_out: np.ndarray, mask: np.ndarray, frame_rate: float,
                 sample_dir: Path, fmt: str) -> Path:
    out_dir = sample_dir / "output"
    video = VideoVolume(frames=np.clip(canvas_out, 0.0, 1.0), frame_rate=frame_rate)
    if fmt == "y4m":
        target = out_dir / "video.y4m"
        save_video(video, target)
    else:
        target = out_dir / "video"
        save_video(video, target)
    save_mask(MaskVolume(mask), out_dir / "mask", frame_rate=frame_rate)
    return target


def _cmd_complete(args) -> int:
    doc = load_config(args.config)
    resolved = resolve_config(
        doc, seed=args.seed, samples=args.samples, threads=args.threads,
        output_dir=args.output,
    )
    out_root = Path(resolved["output"]["dir"])
    write_resolved(resolved, out_root)
    canvas = _load_job_input(resolved)
    gt_frames = None
    if resolved["backend"]["kind"] == "oracle":
        gt_frames = load_video(resolved["ground_truth"]["video"]).frames
    base_seed = resolved["run"]["seed"]
    samples = resolved["run"]["samples"]
    threads = resolved["run"]["threads"]
    fmt = resolved["output"]["format"]
    for i in range(samples):
        seed = base_seed + i
        sample_dir = out_root if samples == 1 else out_root / f"seed_{seed:04d}"
        backend = make_backend(resolved, gt_frames)
        try:
            result = run_coarse_to_fine(
                canvas, backend, seed, make_settings(resolved),
                job_dir=sample_dir, threads=threads,
            )
        finally:
            if hasattr(backend, "close"):
                backend.close()
        target = _save_output(
            result, canvas.mask, canvas.frame_rate, sample_dir, fmt
        )
        print(f"seed {seed}: completed {result.shape[0]} frames -> {target}")
    return 0


def _cmd_evaluate(args) -> int:
    output = load_video(args.output)
    gt = load_video(args.gt)
    mask = load_mask(args.mask)
    if output.frames.shape != gt.frames.shape:
        raise FormatError(
            f"output {output.frames.shape} and ground truth {gt.frames.shape} differ"
        )
    metrics = evaluate_completion(
        output.frames, gt.frames, mask.mask,
        threshold=args.threshold,
        spacing=args.flow_spacing, octaves=args.flow_octaves,
        iters=args.flow_iters, max_disp=args.max_disp,
    )
    write_report(args.report, metrics, output.frames, mask.mask)

    def show(v):
        return "n/a" if v is None else f"{v:.3f}"

    print(f"psnr overall {show(metrics['psnr']['overall'])} dB "
          f"(static {show(metrics['psnr']['static'])}, "
          f"dynamic {show(metrics['psnr']['dynamic'])})")
    print(f"epe static {show(metrics['epe']['static'])} px, "
          f"dynamic {show(metrics['epe']['dynamic'])} px")
    print(f"ssim {metrics['ssim']:.4f} (auxiliary)")
    print(f"report -> {Path(args.report) / 'metrics.json'}")
    return 0


def _summarize_video(path: Path) -> dict:
    video = load_video(path)
    return {
        "type": "video",
        "frames": video.num_frames,
        "width": video.width,
        "height": video.height,
        "frame_rate": video.frame_rate,
        "color_space": video.color_space,
        "bit_depth": video.bit_depth,
    }


def _cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise FormatError(f"no such path: {path}")
    if path.is_file() and path.suffix == ".json":
        with open(path) as fh:
            doc = json.load(fh)
        frame_list = doc.get("frames") if isinstance(doc.get("frames"), list) else []
        if "rotation_rowmajor_9" in json.dumps(frame_list[:1]):
            cam = load_camera_path(path)
            summary = {
                "type": "camera_path",
                "mode": cam.mode,
                "frames": cam.num_frames,
                "focal_px": cam.focal_px,
                "principal": list(cam.principal),
            }
        elif "offsets" in doc and "canvas" in doc:
            summary = {"type": "bench", **{k: doc[k] for k in
                       ("preset", "seed", "frames", "canvas", "crop") if k in doc}}
        else:
            summary = {"type": "json", "keys": sorted(doc)}
    elif (path / "video").exists() and (path / "mask").exists():
        canvas = load_canvas_video(path)
        summary = {
            "type": "canvas",
            "frames": canvas.frames.shape[0],
            "width": canvas.frames.shape[2],
            "height": canvas.frames.shape[1],
            "frame_rate": canvas.frame_rate,
            "coverage": float(canvas.mask.mean()),
        }
    else:
        summary = _summarize_video(path)
    print(json.dumps(summary, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panovid",
        description="Panoramic completion of panning videos.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-bench", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", default="left-right-left", choices=bench_mod.PRESETS)
    p.add_argument("--trajectory", default=None,
                   help="custom trajectory JSON (overrides --preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=bench_mod.DEFAULT_FRAMES)
    p.add_argument("--canvas-width", type=int, default=bench_mod.DEFAULT_CANVAS[1])
    p.add_argument("--canvas-height", type=int, default=bench_mod.DEFAULT_CANVAS[0])
    p.add_argument("--crop-ratio", type=int, default=bench_mod.DEFAULT_CROP_RATIO)
    p.add_argument("--fps", type=float, default=bench_mod.DEFAULT_FRAME_RATE)
    p.add_argument("--sprites", type=int, default=3)
    p.add_argument("--static-scene", action="store_true",
                   help="freeze all scene motion")
    p.set_defaults(func=_cmd_synth_bench)

    p = sub.add_parser("register", help="project a clip onto the canvas")
    p.add_argument("--video", required=True)
    p.add_argument("--camera", default=None,
                   help="camera path JSON; estimated from the video if omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--focal", type=float, default=None,
                   help="fix the focal length (px) instead of estimating it")
    p.add_argument("--margin", type=float, default=1.0,
                   help="canvas margin in pixels")
    p.add_argument("--fps", type=float, default=None,
                   help="frame rate when the video container lacks one")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("complete", help="run the completion pipeline")
    p.add_argument("--config", required=True, help="job config JSON")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--samples", type=int, default=1,
                   help="number of samples (seeds seed..seed+N-1)")
    p.add_argument("--threads", type=int, default=1,
                   help="prediction threads (outputs are identical for any value)")
    p.add_argument("--output", default=None, help="override output dir")
    p.set_defaults(func=_cmd_complete)

    p = sub.add_parser("evaluate", help="compare a completion to ground truth")
    p.add_argument("--output", required=True, help="completed video")
    p.add_argument("--gt", required=True, help="ground-truth video")
    p.add_argument("--mask", required=True, help="observation mask (m0)")
    p.add_argument("--report", required=True, help="report directory")
    p.add_argument("--threshold", type=float, default=0.2,
                   help="flow magnitude splitting static from dynamic")
    p.add_argument("--flow-spacing", type=int, default=8)
    p.add_argument("--flow-octaves", type=int, default=2)
    p.add_argument("--flow-iters", type=int, default=10)
    p.add_argument("--max-disp", type=float, default=8.0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("inspect", help="summarize an artifact as JSON")
    p.add_argument("--path", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PanovidError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
