"""Temporal coarse-to-fine refinement.

Completion starts at the coarsest pyramid level, where the whole clip fits a
single backend context. Each finer level then gets three ingredients:

1. the coarser result upsampled to this level's frame times,
2. a merge with this level's own observed content (observed pixels win),
3. a resynthesis pass whose pinning schedule keeps the merged content and,
   for the frames that coincide with a coarser frame, the whole upsampled
   frame, anchoring global structure while the backend re-adds detail.

The fast-motion schedule releases those full-frame anchors after 1/8 of the
sampling steps so fast-moving content is free to deviate from the blurred
coarse estimate; the standard schedule keeps them to the end. Token-flavor
resynthesis pins only tokens whose pixels are all observed.

Intermediate volumes can be checkpointed under ``level_<k>/{up,merge,out}``
inside the job directory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import temporal_layout
from .backends import TOKEN, MaskSchedule
from .complete import (
    complete_base,
    complete_base_causal,
    complete_base_token,
    complete_base_token_causal,
    multidiffusion_gaussian,
    normalize_height,
    pad_token_multiple,
    restore_height,
    spatial_layout,
)
from .errors import ConfigError
from .pyramid import TemporalPyramid, build_pyramid
from .video_io import CanvasVideo, VideoVolume, save_video

log = logging.getLogger(__name__)

MASK_MODES = ("standard", "fast-motion")
UPSAMPLE_MODES = ("linear", "repeat")
ALIGN_MODES = ("none", "flow", "color", "flow+color")


@dataclass
class RefineSettings:
    """Knobs of the coarse-to-fine loop (defaults match the gaussian flavor)."""

    spatial_stride: int | None = None  # None: backend native width (no overlap)
    weights: str = "tent"
    upsample: str = "linear"
    align: str = "none"
    align_spacing: int = 16
    mask_mode: str = "standard"
    causal: bool | None = None  # None: follow the backend descriptor
    checkpoints: bool = True

    def __post_init__(self):
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.upsample not in UPSAMPLE_MODES:
            raise ConfigError(f"upsample must be one of {UPSAMPLE_MODES}")
        if self.weights not in ("tent", "uniform"):
            raise ConfigError("weights must be 'tent' or 'uniform'")
        if self.align not in ALIGN_MODES:
            raise ConfigError(f"align must be one of {ALIGN_MODES}")


def upsample_temporal(frames: np.ndarray, coarse_times: np.ndarray,
                      fine_times: np.ndarray, mode: str = "linear") -> np.ndarray:
    """Resample a coarse frame sequence at finer timestamps.

    ``linear`` interpolates between the bracketing coarse frames (an exact
    copy where timestamps coincide, clamped beyond the ends); ``repeat``
    takes the nearest coarse frame, lower index on ties.
    """
    coarse_times = np.asarray(coarse_times, dtype=np.float64)
    fine_times = np.asarray(fine_times, dtype=np.float64)
    n = len(coarse_times)
    hi = np.searchsorted(coarse_times, fine_times, side="right")
    lo = np.clip(hi - 1, 0, n - 1)
    hi = np.clip(hi, 0, n - 1)
    if mode == "linear":
        span = coarse_times[hi] - coarse_times[lo]
        alpha = np.where(span > 0, (fine_times - coarse_times[lo]) / np.where(span > 0, span, 1.0), 0.0)
        alpha = alpha.astype(np.float32)[:, None, None, None]
        return frames[lo] + alpha * (frames[hi] - frames[lo])
    if mode == "repeat":
        d_lo = fine_times - coarse_times[lo]
        d_hi = coarse_times[hi] - fine_times
        pick = np.where(d_lo <= d_hi, lo, hi)
        return frames[pick].copy()
    raise ConfigError(f"unknown upsample mode '{mode}'")


def coarse_coincident(fine_times: np.ndarray, coarse_times: np.ndarray) -> np.ndarray:
    """Fine-level frame index nearest each coarse timestamp (ties: lower).

    These frames carry the coarse result's structure and get pinned
    full-frame during resynthesis.
    """
    fine_times = np.asarray(fine_times, dtype=np.float64)
    coarse_times = np.asarray(coarse_times, dtype=np.float64)
    pos = np.searchsorted(fine_times, coarse_times, side="left")
    lo = np.clip(pos - 1, 0, len(fine_times) - 1)
    hi = np.clip(pos, 0, len(fine_times) - 1)
    d_lo = np.abs(coarse_times - fine_times[lo])
    d_hi = np.abs(fine_times[hi] - coarse_times)
    return np.where(d_lo <= d_hi, lo, hi).astype(np.int64)


def merge_input(frames: np.ndarray, mask: np.ndarray, y_up: np.ndarray,
                *, align: str = "none", align_spacing: int = 16):
    """Overlay observed content onto the upsampled coarse result.

    ``align="flow"`` first warps the observed frames toward the coarse
    estimate by a grid flow fitted inside the valid region, absorbing small
    registration drift (the warped mask is re-binarized, so the effective
    mask can differ from the input). ``"color"`` harmonizes the observed
    colors to the estimate's coarse bands instead; ``"flow+color"`` does
    both. Returns (merged, effective_mask).
    """
    if align not in ALIGN_MODES:
        raise ConfigError(f"align must be one of {ALIGN_MODES}")
    mask = np.asarray(mask, dtype=bool)
    if align in ("flow", "flow+color"):
        from .align import align_frame

        warped_frames = np.empty_like(frames)
        eff_mask = np.zeros_like(mask)
        for t in range(frames.shape[0]):
            if not mask[t].any():
                warped_frames[t] = frames[t]
                continue
            warped_frames[t], eff_mask[t] = align_frame(
                frames[t], mask[t], y_up[t], spacing=align_spacing
            )
        frames, mask = warped_frames, eff_mask
    if align in ("color", "flow+color"):
        from .align import color_align

        frames = np.stack(
            [color_align(frames[t], mask[t], y_up[t]) for t in range(frames.shape[0])]
        )
    return np.where(mask[..., None], frames, y_up), mask


def build_mask_schedule(eff_mask: np.ndarray, coincident: np.ndarray, steps: int,
                        mode: str = "standard") -> MaskSchedule:
    """Pinning schedule for a refinement pass.

    Merged observed pixels stay pinned throughout. Frames coincident with a
    coarse frame are pinned full-frame: for every step under ``standard``,
    only for the first steps//8 under ``fast-motion``.
    """
    if mode not in MASK_MODES:
        raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
    full = np.zeros(eff_mask.shape[0], dtype=bool)
    full[np.asarray(coincident, dtype=np.int64)] = True
    until = steps if mode == "standard" else steps // 8
    return MaskSchedule(
        steps=steps, base=np.asarray(eff_mask, dtype=bool),
        full_frames=full, full_frame_until=until,
    )


def resynthesize(merged: np.ndarray, schedule: MaskSchedule, backend, seed: int,
                 *, level: int, level_times: np.ndarray, filter_width: int,
                 settings: RefineSettings, threads: int = 1) -> np.ndarray:
    """One gaussian-flavor refinement pass over a merged level."""
    d = backend.descriptor
    s_layout = spatial_layout(
        merged.shape[2], d.native_width,
        d.native_width if settings.spatial_stride is None else settings.spatial_stride,
        settings.weights,
    )
    t_layout = temporal_layout(merged.shape[0], d.context_frames, settings.weights)
    return multidiffusion_gaussian(
        merged, schedule, backend, s_layout, t_layout, seed,
        level=level, stage="refine", threads=threads,
        level_times=level_times, filter_width=filter_width,
    )


def _checkpoint(job_dir, level: int, name: str, frames: np.ndarray, frame_rate: float):
    if job_dir is None:
        return
    out = Path(job_dir) / f"level_{level}" / name
    save_video(VideoVolume(frames=np.clip(frames, 0.0, 1.0), frame_rate=frame_rate), out)


def run_coarse_to_fine(
    canvas: CanvasVideo,
    backend,
    seed: int,
    settings: RefineSettings | None = None,
    *,
    job_dir=None,
    threads: int = 1,
) -> np.ndarray:
    """Complete a registered canvas video end to end.

    Normalizes to the backend's native height, builds the temporal pyramid,
    completes the coarsest level from scratch (two causal passes when the
    backend is causal), refines level by level, restores the canvas
    resolution, and composites so observed pixels pass through bit-exact.
    """
    settings = settings or RefineSettings()
    d = backend.descriptor
    causal = d.causal if settings.causal is None else settings.causal
    frames0 = np.asarray(canvas.frames, dtype=np.float32)
    mask0 = np.asarray(canvas.mask, dtype=bool)
    work_frames, work_mask = normalize_height(frames0, mask0, d.native_height)
    pyramid = build_pyramid(
        CanvasVideo(frames=work_frames, mask=work_mask, frame_rate=canvas.frame_rate),
        d.context_frames,
    )
    if d.flavor == TOKEN and getattr(backend, "model", None) is None:
        fp, mp, _ = pad_token_multiple(work_frames, work_mask, d.patch_size, d.token_frames)
        backend.prepare(fp, mp, seed)

    top = len(pyramid.levels) - 1
    level = pyramid.levels[top]
    ckpt_dir = job_dir if settings.checkpoints else None
    log.info("base completion at level %d (%d frames)", top, level.video.frames.shape[0])
    common = dict(stride=settings.spatial_stride, weights=settings.weights,
                  level=top, level_times=level.times, filter_width=level.filter_width)
    if d.flavor == TOKEN:
        run_token = complete_base_token_causal if causal else complete_base_token
        y = run_token(
            level.video.frames, level.video.mask, backend, seed,
            stride=settings.spatial_stride, weights=settings.weights, level=top,
        )
    elif causal:
        y = complete_base_causal(level.video.frames, level.video.mask, backend, seed,
                                 threads=threads, **common)
    else:
        y = complete_base(level.video.frames, level.video.mask, backend, seed,
                          threads=threads, **common)
    _checkpoint(ckpt_dir, top, "out", y, level.video.frame_rate)

    for k in range(top - 1, -1, -1):
        coarse = pyramid.levels[k + 1]
        level = pyramid.levels[k]
        log.info("refining level %d (%d frames)", k, level.video.frames.shape[0])
        y_up = upsample_temporal(y, coarse.times, level.times, settings.upsample)
        _checkpoint(ckpt_dir, k, "up", y_up, level.video.frame_rate)
        merged, eff_mask = merge_input(
            level.video.frames, level.video.mask, y_up,
            align=settings.align, align_spacing=settings.align_spacing,
        )
        _checkpoint(ckpt_dir, k, "merge", merged, level.video.frame_rate)
        if d.flavor == TOKEN:
            y = complete_base_token(
                merged, eff_mask, backend, seed,
                stride=settings.spatial_stride, weights=settings.weights,
                level=k, stage="refine",
            )
        else:
            coincident = coarse_coincident(level.times, coarse.times)
            schedule = build_mask_schedule(
                eff_mask, coincident, d.sampling_steps, settings.mask_mode
            )
            y = resynthesize(
                merged, schedule, backend, seed,
                level=k, level_times=level.times, filter_width=level.filter_width,
                settings=settings, threads=threads,
            )
        _checkpoint(ckpt_dir, k, "out", y, level.video.frame_rate)

    y_full = restore_height(y, frames0.shape[1], frames0.shape[2])
    return np.where(mask0[..., None], frames0, y_full)
