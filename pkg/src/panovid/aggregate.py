"""Overlapping-window layouts and per-step aggregation of predictions.

Spatial windows tile the canvas width at a fixed stride, with the final
window right-aligned to the canvas edge. Per-column blending weights are
normalized tents: inside each window the raw weight ramps linearly from 0
across the overlap with each neighbor (flat where there is no neighbor),
then columns are normalized so the weights of covering windows sum to 1.
Two half-overlapping windows therefore blend 0.75/0.25 at a quarter of the
way into the overlap.

Temporal windows follow the same recipe along the frame axis with a stride
of half the context length (ceil for odd lengths, so an 11-frame context
overlaps by 5), final window right-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class WindowLayout:
    """Overlapping 1-D windows over [0, extent) plus blending weights.

    weights[i] is a float32 (extent,) profile, zero outside window i, and
    sum(weights[:, x]) == 1 for every covered position x.
    """

    lefts: np.ndarray  # (n,) int
    window: int
    extent: int
    weights: np.ndarray  # (n, extent) float32

    @property
    def count(self) -> int:
        return len(self.lefts)

    def slices(self):
        return [slice(int(l), int(l) + self.window) for l in self.lefts]

    def weights_for(self, window_slice: slice) -> np.ndarray:
        """The (window,) weight profile of the window at ``window_slice``."""
        idx = int(np.nonzero(self.lefts == window_slice.start)[0][0])
        return self.weights[idx, window_slice]


def window_starts(extent: int, window: int, stride: int) -> np.ndarray:
    """Left edges 0, stride, 2*stride, ...; final window right-aligned."""
    if window > extent:
        raise ConfigError(f"window ({window}) exceeds extent ({extent})")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return np.asarray(starts, dtype=np.int64)


def tent_weights(lefts: np.ndarray, window: int, extent: int,
                 mode: str = "tent") -> np.ndarray:
    """Normalized per-position weights for overlapping windows.

    mode "tent" ramps over neighbor overlaps as described in the module
    docstring; "uniform" gives every covering window equal weight.
    """
    if mode not in ("tent", "uniform"):
        raise ConfigError(f"unknown weight mode '{mode}'")
    lefts = np.asarray(lefts, dtype=np.int64)
    n = len(lefts)
    raw = np.zeros((n, extent), dtype=np.float64)
    for i, left in enumerate(lefts):
        u = np.arange(window, dtype=np.float64)
        profile = np.ones(window)
        if mode == "tent":
            rise = max(0, int(lefts[i - 1]) + window - int(left)) if i > 0 else 0
            fall = max(0, int(left) + window - int(lefts[i + 1])) if i + 1 < n else 0
            if rise > 0:
                profile = np.minimum(profile, u / rise)
            if fall > 0:
                profile = np.minimum(profile, (window - u) / fall)
        raw[i, left : left + window] = profile
    totals = raw.sum(axis=0)
    covered = totals > 0
    out = np.zeros_like(raw)
    out[:, covered] = raw[:, covered] / totals[covered]
    return out.astype(np.float32)


def make_layout(extent: int, window: int, stride: int, mode: str = "tent") -> WindowLayout:
    lefts = window_starts(extent, window, stride)
    return WindowLayout(
        lefts=lefts,
        window=window,
        extent=extent,
        weights=tent_weights(lefts, window, extent, mode=mode),
    )


def temporal_ranges(num_frames: int, context_frames: int):
    """[(lo, hi)) frame ranges of the context length, final right-aligned.

    Starts advance by ceil(context/2) (an 11-frame context overlaps by 5
    frames). A video no longer than the context yields a single range.
    """
    if num_frames <= context_frames:
        return [(0, num_frames)]
    stride = context_frames - context_frames // 2
    starts = [0]
    while starts[-1] + context_frames < num_frames:
        nxt = starts[-1] + stride
        if nxt + context_frames >= num_frames:
            final = num_frames - context_frames
            if final != starts[-1]:
                starts.append(final)
            break
        starts.append(nxt)
    return [(s, s + context_frames) for s in starts]


def temporal_layout(num_frames: int, context_frames: int, mode: str = "tent") -> WindowLayout:
    """Temporal ranges as a WindowLayout with per-frame blending weights."""
    ranges = temporal_ranges(num_frames, context_frames)
    lefts = np.array([lo for lo, _ in ranges], dtype=np.int64)
    window = ranges[0][1] - ranges[0][0]
    return WindowLayout(
        lefts=lefts,
        window=window,
        extent=num_frames,
        weights=tent_weights(lefts, window, num_frames, mode=mode),
    )


def aggregate_gaussian(mus: np.ndarray, variances: np.ndarray, weights: np.ndarray):
    """Blend per-window Gaussians: weighted mean and weighted variance.

    The blended variance is the weighted average of the member variances
    (the mixture's cross term is deliberately omitted). weights must sum
    to 1 along axis 0 and broadcast against the fields.
    """
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum(axis=0)
    if not np.allclose(total, 1.0, atol=1e-5):
        raise ValueError("aggregation weights must sum to 1 per position")
    mu = (weights * np.asarray(mus, dtype=np.float64)).sum(axis=0)
    var = (weights * np.asarray(variances, dtype=np.float64)).sum(axis=0)
    return mu.astype(np.float32), var.astype(np.float32)


def aggregate_categorical(probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean of categorical distributions, renormalized over the
    vocabulary axis (last)."""
    weights = np.asarray(weights, dtype=np.float64)
    mixed = (weights * np.asarray(probs, dtype=np.float64)).sum(axis=0)
    totals = mixed.sum(axis=-1, keepdims=True)
    out = mixed / np.where(totals > 0, totals, 1.0)
    return out.astype(np.float32)


def stitch_temporal_tokens(windows: list[np.ndarray], ranges) -> np.ndarray:
    """Combine per-window token grids; overlaps keep the earlier window.

    ``windows[i]`` has tokens for frames ranges[i] = (lo, hi). Later windows
    are written first so earlier ones overwrite them in overlapped frames.
    """
    num_frames = max(hi for _, hi in ranges)
    first = windows[0]
    out = np.zeros((num_frames,) + first.shape[1:], dtype=first.dtype)
    for grid, (lo, hi) in zip(reversed(windows), reversed(list(ranges))):
        out[lo:hi] = grid
    return out
