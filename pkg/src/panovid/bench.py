"""Synthetic panning-video benchmark with exact ground truth.

A full panoramic canvas is generated procedurally (smoothed noise background
plus a few translating sprites), then a virtual camera crops an axis-aligned
window that pans across it. Crops use integer offsets, so the registered
canvas matches the ground truth bit-exactly wherever it was observed: ideal
for oracle and closure tests.

A generated job directory looks like::

    <out>/
      input/video/          cropped panning clip (what a user would shoot)
      input/camera.json     canvas-crop camera path (integer offsets)
      gt/video/             full-canvas ground truth
      bench.json            generation parameters

The camera path uses the ``canvas-crop`` mode understood by the
registration stage, which pastes crops back instead of estimating geometry.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .registration import CameraModel, save_camera_path
from .rng import keyed_rng
from .video_io import VideoVolume, save_video

log = logging.getLogger(__name__)

PRESETS = ("left-right", "left-right-left", "static")

DEFAULT_FRAMES = 88
DEFAULT_FRAME_RATE = 15.0
DEFAULT_CANVAS = (128, 512)  # (height, width)
DEFAULT_CROP_RATIO = 4  # crop width = canvas width / ratio


@dataclass
class PanTrajectory:
    """Piecewise-linear horizontal pan through (frame, offset) control points.

    Offsets are rounded to integers so crops land on pixel boundaries and
    reconstruction is exact.
    """

    control_frames: np.ndarray
    control_offsets: np.ndarray

    @classmethod
    def from_points(cls, points) -> "PanTrajectory":
        pts = sorted((float(f), float(x)) for f, x in points)
        if len(pts) < 1:
            raise ConfigError("trajectory needs at least one control point")
        return cls(
            control_frames=np.array([p[0] for p in pts]),
            control_offsets=np.array([p[1] for p in pts]),
        )

    @classmethod
    def from_file(cls, path) -> "PanTrajectory":
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or "points" not in data:
            raise ConfigError(f"{path}: expected an object with a 'points' list")
        return cls.from_points(data["points"])

    def offsets(self, num_frames: int, max_offset: int) -> np.ndarray:
        xs = np.interp(
            np.arange(num_frames), self.control_frames, self.control_offsets
        )
        out = np.rint(xs).astype(np.int64)
        if out.min() < 0 or out.max() > max_offset:
            raise ConfigError(
                f"trajectory offsets [{out.min()}, {out.max()}] leave the "
                f"canvas (max {max_offset})"
            )
        return out


def preset_trajectory(name: str, num_frames: int, max_offset: int) -> PanTrajectory:
    if name == "left-right":
        points = [(0, 0), (num_frames - 1, max_offset)]
    elif name == "left-right-left":
        points = [(0, 0), ((num_frames - 1) / 2, max_offset), (num_frames - 1, 0)]
    elif name == "static":
        points = [(0, max_offset // 2)]
    else:
        raise ConfigError(f"unknown preset '{name}' (choose from {PRESETS})")
    return PanTrajectory.from_points(points)


def make_default_source(
    seed: int,
    num_frames: int,
    height: int,
    width: int,
    *,
    sprites: int = 3,
    moving: bool = True,
) -> np.ndarray:
    """Procedural ground-truth canvas video, (T, H, W, 3) float32 in [0, 1].

    Smoothed-noise background (fixed over time) with translating solid
    sprites on top. Sprites move at integer pixel velocities and wrap
    around, so all motion is crisp; ``moving=False`` freezes them for fully
    static scenes.
    """
    rng = keyed_rng(seed, "bench-source")
    bg = gaussian_filter(rng.random((height, width, 3)), sigma=(8, 8, 0))
    lo, hi = bg.min(axis=(0, 1)), bg.max(axis=(0, 1))
    bg = 0.1 + 0.8 * (bg - lo) / np.maximum(hi - lo, 1e-9)
    bg = bg.astype(np.float32)

    frames = np.repeat(bg[None], num_frames, axis=0)
    for s in range(sprites):
        srng = keyed_rng(seed, "bench-sprite", s)
        sh = int(srng.integers(height // 8, height // 4 + 1))
        sw = int(srng.integers(height // 8, height // 4 + 1))
        color = (0.2 + 0.8 * srng.random(3)).astype(np.float32)
        x0 = int(srng.integers(0, width))
        y0 = int(srng.integers(0, height))
        vx = int(srng.choice([-2, -1, 1, 2]))
        vy = int(srng.choice([-1, 0, 1]))
        if not moving:
            vx = vy = 0
        for t in range(num_frames):
            rows = (y0 + vy * t + np.arange(sh)) % height
            cols = (x0 + vx * t + np.arange(sw)) % width
            frames[t][np.ix_(rows, cols)] = color
    return frames


def make_synthetic(
    out_dir,
    *,
    preset: str = "left-right-left",
    seed: int = 0,
    num_frames: int = DEFAULT_FRAMES,
    canvas_height: int = DEFAULT_CANVAS[0],
    canvas_width: int = DEFAULT_CANVAS[1],
    crop_ratio: int = DEFAULT_CROP_RATIO,
    frame_rate: float = DEFAULT_FRAME_RATE,
    trajectory_file=None,
    sprites: int = 3,
    moving: bool = True,
) -> dict:
    """Generate a benchmark job directory; returns its metadata dict."""
    if canvas_width % crop_ratio:
        raise ConfigError(
            f"canvas width {canvas_width} not divisible by crop ratio {crop_ratio}"
        )
    crop_width = canvas_width // crop_ratio
    max_offset = canvas_width - crop_width
    if trajectory_file is not None:
        traj = PanTrajectory.from_file(trajectory_file)
    else:
        traj = preset_trajectory(preset, num_frames, max_offset)
    offsets = traj.offsets(num_frames, max_offset)

    source = make_default_source(
        seed, num_frames, canvas_height, canvas_width, sprites=sprites, moving=moving
    )
    crops = np.stack(
        [source[t, :, off : off + crop_width] for t, off in enumerate(offsets)]
    )

    out_dir = Path(out_dir)
    save_video(VideoVolume(frames=crops, frame_rate=frame_rate), out_dir / "input" / "video")
    save_video(VideoVolume(frames=source, frame_rate=frame_rate), out_dir / "gt" / "video")

    offsets_xy = np.stack([offsets, np.zeros_like(offsets)], axis=1)
    camera = CameraModel(
        focal_px=float(canvas_width) / (2.0 * np.pi),
        principal=(crop_width / 2.0, canvas_height / 2.0),
        rotations=np.repeat(np.eye(3)[None], num_frames, axis=0),
        mode="canvas-crop",
        offsets=offsets_xy,
        canvas_size=(canvas_width, canvas_height),
    )
    save_camera_path(camera, out_dir / "input" / "camera.json")

    meta = {
        "preset": preset if trajectory_file is None else "custom",
        "seed": seed,
        "frames": num_frames,
        "frame_rate": frame_rate,
        "canvas": {"height": canvas_height, "width": canvas_width},
        "crop": {"height": canvas_height, "width": crop_width},
        "offsets": offsets.tolist(),
        "sprites": sprites,
        "moving": moving,
    }
    with open(out_dir / "bench.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    log.info("wrote synthetic bench '%s' (%d frames) to %s",
             meta["preset"], num_frames, out_dir)
    return meta
