"""Video volumes and their on-disk formats.

In memory a video is a float32 array of shape (T, H, W, 3) with values in
[0, 1]; masks are boolean (T, H, W). All arithmetic stays in float32,
quantization happens only when saving.

Formats:

* png directory (canonical): ``frame_%06d.png`` files plus ``manifest.json``
  holding exactly {frame_rate, width, height, frames, color_space}. Masks use
  ``mask_%06d.png``. 8- and 16-bit content round-trips bit-exact.
* y4m (convenience): YUV4MPEG2 with C420 (chroma replicated up to 4:4:4 on
  load) or C444 sampling. RGB <-> YCbCr uses full-range BT.601 coefficients:

      Y  = 0.299 R + 0.587 G + 0.114 B
      Cb = (B - Y) / 1.772 + 0.5
      Cr = (R - Y) / 1.402 + 0.5

  The conversion is kept in float, so a y4m file written by this module reads
  back byte-exact (for in-gamut content); arbitrary RGB volumes quantize once
  through the YCbCr grid. Use png directories when bit-exactness of RGB
  samples matters.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import cv2
import numpy as np

from .errors import FormatError

log = logging.getLogger(__name__)

FRAME_PATTERN = "frame_%06d.png"
MASK_PATTERN = "mask_%06d.png"
MANIFEST_KEYS = ("frame_rate", "width", "height", "frames", "color_space")


@dataclass
class VideoVolume:
    """A video as (T, H, W, 3) float32 samples in [0, 1]."""

    frames: np.ndarray
    frame_rate: float = 30.0
    color_space: str = "sRGB"
    bit_depth: int = 8

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise FormatError(f"video frames must be (T, H, W, 3), got {self.frames.shape}")
        if self.bit_depth not in (8, 16):
            raise FormatError(f"bit_depth must be 8 or 16, got {self.bit_depth}")

    @property
    def shape(self):
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class MaskVolume:
    """Per-pixel binary validity, shape (T, H, W)."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.ndim != 3:
            raise FormatError(f"mask must be (T, H, W), got {self.mask.shape}")

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class CanvasVideo:
    """A panoramic-canvas video: frames plus per-pixel validity."""

    frames: np.ndarray  # (T, H, W, 3) float32
    mask: np.ndarray  # (T, H, W) bool
    frame_rate: float = 30.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.mask = np.asarray(self.mask).astype(bool)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise FormatError(f"canvas frames must be (T, H, W, 3), got {self.frames.shape}")
        if self.mask.shape != self.frames.shape[:3]:
            raise FormatError(
                f"mask shape {self.mask.shape} does not match video {self.frames.shape[:3]}"
            )

    @property
    def shape(self):
        return self.frames.shape


# ---------------------------------------------------------------------------
# png directory format


def _quantize(frames: np.ndarray, bit_depth: int) -> np.ndarray:
    scale = 255.0 if bit_depth == 8 else 65535.0
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.round(np.clip(frames, 0.0, 1.0) * scale).astype(dtype)


def _dequantize(arr: np.ndarray) -> np.ndarray:
    scale = 255.0 if arr.dtype == np.uint8 else 65535.0
    return arr.astype(np.float32) / np.float32(scale)


def _write_png(path: Path, arr: np.ndarray) -> None:
    bgr = arr[..., ::-1] if arr.ndim == 3 else arr
    if not cv2.imwrite(str(path), bgr):
        raise FormatError(f"failed to write {path}")


def _read_png(path: Path) -> np.ndarray:
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise FormatError(f"missing or unreadable frame file: {path}")
    if arr.ndim == 3:
        arr = arr[..., :3][..., ::-1]
    return arr


def _write_manifest(directory: Path, volume) -> None:
    manifest = {
        "frame_rate": float(volume.frame_rate),
        "width": int(volume.frames.shape[2]),
        "height": int(volume.frames.shape[1]),
        "frames": int(volume.frames.shape[0]),
        "color_space": getattr(volume, "color_space", "sRGB"),
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def _read_manifest(directory: Path) -> dict:
    path = directory / "manifest.json"
    if not path.exists():
        raise FormatError(f"missing manifest.json in {directory}")
    with open(path) as f:
        manifest = json.load(f)
    for key in MANIFEST_KEYS:
        if key not in manifest:
            raise FormatError(f"manifest.json missing required key '{key}' in {directory}")
    return manifest


def save_video(volume: VideoVolume, path, fmt: str | None = None, chroma: str = "420") -> None:
    """Save a video as a png directory or a .y4m file.

    ``fmt`` is inferred from the path when omitted ("y4m" for *.y4m, else
    "png-dir"). ``chroma`` ("420" or "444") applies to y4m only.
    """
    path = Path(path)
    if fmt is None:
        fmt = "y4m" if path.suffix == ".y4m" else "png-dir"
    if fmt == "png-dir":
        path.mkdir(parents=True, exist_ok=True)
        data = _quantize(volume.frames, volume.bit_depth)
        for t in range(data.shape[0]):
            _write_png(path / (FRAME_PATTERN % t), data[t])
        _write_manifest(path, volume)
    elif fmt == "y4m":
        _save_y4m(volume, path, chroma=chroma)
    else:
        raise FormatError(f"unknown video format '{fmt}'")


def load_video(path, frame_rate: float | None = None) -> VideoVolume:
    """Load a video from a png directory or a .y4m file."""
    path = Path(path)
    if path.is_file() and path.suffix == ".y4m":
        return _load_y4m(path)
    if not path.is_dir():
        raise FormatError(f"no such video: {path}")
    manifest = _read_manifest(path)
    count = int(manifest["frames"])
    frames = []
    for t in range(count):
        arr = _read_png(path / (FRAME_PATTERN % t))
        if arr.ndim != 3:
            raise FormatError(f"frame {FRAME_PATTERN % t} in {path} is not RGB")
        if arr.shape[0] != manifest["height"] or arr.shape[1] != manifest["width"]:
            raise FormatError(
                f"frame {t} in {path} is {arr.shape[1]}x{arr.shape[0]}, manifest says "
                f"{manifest['width']}x{manifest['height']}"
            )
        frames.append(_dequantize(arr))
    if not frames:
        raise FormatError(f"video in {path} has no frames")
    bit_depth = 16 if _read_png(path / (FRAME_PATTERN % 0)).dtype == np.uint16 else 8
    return VideoVolume(
        np.stack(frames),
        frame_rate=frame_rate if frame_rate is not None else float(manifest["frame_rate"]),
        color_space=str(manifest["color_space"]),
        bit_depth=bit_depth,
    )


def save_mask(mask: MaskVolume, path, frame_rate: float = 30.0) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = np.where(mask.mask, np.uint8(255), np.uint8(0))
    for t in range(data.shape[0]):
        _write_png(path / (MASK_PATTERN % t), data[t])
    manifest = {
        "frame_rate": float(frame_rate),
        "width": int(mask.mask.shape[2]),
        "height": int(mask.mask.shape[1]),
        "frames": int(mask.mask.shape[0]),
        "color_space": "binary",
    }
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def load_mask(path) -> MaskVolume:
    """Load a mask directory; values > 127 are valid, anything non-binary warns."""
    path = Path(path)
    manifest = _read_manifest(path)
    count = int(manifest["frames"])
    planes = []
    warned = False
    for t in range(count):
        arr = _read_png(path / (MASK_PATTERN % t))
        if arr.ndim == 3:
            arr = arr[..., 0]
        if not warned and np.any((arr != 0) & (arr != 255)):
            log.warning("mask %s has non-binary values; thresholding at 127", path)
            warned = True
        planes.append(arr > 127)
    if not planes:
        raise FormatError(f"mask in {path} has no frames")
    return MaskVolume(np.stack(planes))


def save_canvas_video(canvas: CanvasVideo, directory) -> None:
    """Save a canvas video as video/ and mask/ png directories."""
    directory = Path(directory)
    save_video(
        VideoVolume(canvas.frames, frame_rate=canvas.frame_rate), directory / "video"
    )
    save_mask(MaskVolume(canvas.mask), directory / "mask", frame_rate=canvas.frame_rate)


def load_canvas_video(directory) -> CanvasVideo:
    directory = Path(directory)
    video = load_video(directory / "video")
    mask = load_mask(directory / "mask")
    if mask.mask.shape != video.frames.shape[:3]:
        raise FormatError(
            f"canvas mask {mask.mask.shape} does not match video {video.frames.shape[:3]}"
        )
    return CanvasVideo(video.frames, mask.mask, frame_rate=video.frame_rate)


# ---------------------------------------------------------------------------
# y4m format (full-range BT.601, float conversion, 8-bit planes)


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = (b - y) / 1.772 + 0.5
    cr = (r - y) / 1.402 + 0.5
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + 1.402 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b], axis=-1)


def upsample_chroma_420(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    """Replicate each 4:2:0 chroma sample over its 2x2 pixel block."""
    up = np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)
    return up[:height, :width]


def _save_y4m(volume: VideoVolume, path: Path, chroma: str = "420") -> None:
    t, h, w = volume.frames.shape[:3]
    if chroma not in ("420", "444"):
        raise FormatError(f"y4m chroma must be '420' or '444', got '{chroma}'")
    if chroma == "420" and (h % 2 or w % 2):
        raise FormatError(f"C420 requires even dimensions, got {w}x{h}")
    frac = Fraction(volume.frame_rate).limit_denominator(65535)
    tag = "C420jpeg" if chroma == "420" else "C444"
    header = f"YUV4MPEG2 W{w} H{h} F{frac.numerator}:{frac.denominator} Ip A1:1 {tag}\n"
    ycc = rgb_to_ycbcr(volume.frames.astype(np.float64))
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for i in range(t):
            f.write(b"FRAME\n")
            planes = [ycc[i, :, :, 0]]
            for c in (1, 2):
                plane = ycc[i, :, :, c]
                if chroma == "420":
                    plane = plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
                planes.append(plane)
            for plane in planes:
                f.write(np.round(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes())


def _load_y4m(path: Path) -> VideoVolume:
    with open(path, "rb") as f:
        data = f.read()
    newline = data.find(b"\n")
    if newline < 0 or not data.startswith(b"YUV4MPEG2"):
        raise FormatError(f"{path} is not a YUV4MPEG2 stream")
    params = {}
    for token in data[:newline].decode("ascii", "replace").split()[1:]:
        params[token[0]] = token[1:]
    try:
        w, h = int(params["W"]), int(params["H"])
        num, den = params["F"].split(":")
        frame_rate = int(num) / int(den)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad y4m header in {path}: {exc}") from exc
    colorspace = params.get("C", "420jpeg")
    if colorspace.startswith("420"):
        subsampled = True
        ch, cw = (h + 1) // 2, (w + 1) // 2
    elif colorspace.startswith("444"):
        subsampled = False
        ch, cw = h, w
    else:
        raise FormatError(f"unsupported y4m colorspace 'C{colorspace}' in {path}")

    frame_bytes = h * w + 2 * ch * cw
    pos = newline + 1
    frames = []
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0 or not data[pos:end].startswith(b"FRAME"):
            raise FormatError(f"corrupt y4m frame marker at byte {pos} in {path}")
        pos = end + 1
        if pos + frame_bytes > len(data):
            raise FormatError(f"truncated y4m frame {len(frames)} in {path}")
        raw = np.frombuffer(data, dtype=np.uint8, count=frame_bytes, offset=pos)
        pos += frame_bytes
        yp = raw[: h * w].reshape(h, w).astype(np.float64) / 255.0
        cb = raw[h * w : h * w + ch * cw].reshape(ch, cw).astype(np.float64) / 255.0
        cr = raw[h * w + ch * cw :].reshape(ch, cw).astype(np.float64) / 255.0
        if subsampled:
            cb = upsample_chroma_420(cb, h, w)
            cr = upsample_chroma_420(cr, h, w)
        rgb = ycbcr_to_rgb(np.stack([yp, cb, cr], axis=-1))
        frames.append(np.clip(rgb, 0.0, 1.0).astype(np.float32))
    if not frames:
        raise FormatError(f"y4m stream {path} has no frames")
    return VideoVolume(np.stack(frames), frame_rate=frame_rate)
