"""Temporal pyramid of a canvas video.

Frame counts halve (ceil) per level until a level fits the backend's context
window. Every level is box-filtered directly from level 0: level k uses
windows of width round(N0/Nk) at the same stride, averaging only over valid
pixels. Each level frame keeps the validity mask of its window's center
source frame, and records the window center as a fractional level-0
timestamp (used later for temporal upsampling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .video_io import CanvasVideo


@dataclass
class PyramidLevel:
    video: CanvasVideo
    filter_width: int
    stride: int
    times: np.ndarray  # (Nk,) window centers in level-0 frame units
    center_indices: np.ndarray  # (Nk,) int source frame giving the level mask


@dataclass
class TemporalPyramid:
    levels: list[PyramidLevel]  # levels[0] is native resolution
    context_frames: int

    @property
    def num_levels(self) -> int:
        return len(self.levels)


def level_frame_counts(n0: int, context_frames: int) -> list[int]:
    """[N0, N1, ...] with Nk = ceil(N(k-1)/2), stopping once Nk <= W_ctx."""
    if context_frames < 2:
        raise ConfigError(f"context window must be >= 2 frames, got {context_frames}")
    if n0 < 1:
        raise ConfigError(f"video must have frames, got {n0}")
    counts = [n0]
    while counts[-1] > context_frames:
        counts.append(math.ceil(counts[-1] / 2))
    return counts


def level_windows(n0: int, nk: int):
    """(lo, hi) source-frame windows for a level of nk frames.

    Width and stride are both round(N0/Nk); windows are clamped to the valid
    frame range at the tail when rounding overshoots.
    """
    step = max(1, round(n0 / nk))
    windows = []
    for i in range(nk):
        lo = min(i * step, n0 - 1)
        hi = min(lo + step, n0)
        windows.append((lo, hi))
    return windows


def level_frame_times(n0: int, nk: int) -> np.ndarray:
    """Window-center timestamps (level-0 frame units) for a level."""
    return np.array([(lo + hi - 1) / 2.0 for lo, hi in level_windows(n0, nk)])


def build_pyramid(canvas: CanvasVideo, context_frames: int) -> TemporalPyramid:
    """Build every level from the native canvas video.

    A level pixel's color averages the valid source pixels in its window
    (zero where the whole window is invalid); its mask comes from the
    window's center frame only.
    """
    n0 = canvas.frames.shape[0]
    counts = level_frame_counts(n0, context_frames)
    levels = []
    for nk in counts:
        windows = level_windows(n0, nk)
        times = np.array([(lo + hi - 1) / 2.0 for lo, hi in windows])
        centers = np.array([lo + (hi - lo - 1) // 2 for lo, hi in windows], dtype=np.int64)
        width = max(1, round(n0 / nk))
        if nk == n0:
            video = CanvasVideo(
                canvas.frames.copy(), canvas.mask.copy(), frame_rate=canvas.frame_rate
            )
        else:
            out = np.zeros((nk,) + canvas.frames.shape[1:], dtype=np.float32)
            mask = np.zeros((nk,) + canvas.mask.shape[1:], dtype=bool)
            for i, (lo, hi) in enumerate(windows):
                win_mask = canvas.mask[lo:hi].astype(np.float64)
                counts_px = win_mask.sum(axis=0)
                sums = (canvas.frames[lo:hi].astype(np.float64) * win_mask[..., None]).sum(axis=0)
                avg = sums / np.maximum(counts_px, 1.0)[..., None]
                out[i] = np.where((counts_px > 0)[..., None], avg, 0.0).astype(np.float32)
                mask[i] = canvas.mask[centers[i]]
            video = CanvasVideo(out, mask, frame_rate=canvas.frame_rate * nk / n0)
        levels.append(
            PyramidLevel(
                video=video,
                filter_width=width,
                stride=width,
                times=times,
                center_indices=centers,
            )
        )
    return TemporalPyramid(levels=levels, context_frames=context_frames)
