"""Whole-canvas completion by windowed generative sampling.

The canvas is wider (and sometimes longer) than a backend's native window,
so every sampling step runs the backend once per (temporal range x spatial
window) and fuses the overlapping predictions before advancing the shared
canvas state:

* gaussian flavor: fuse per-pixel means/variances with normalized tent (or
  uniform) weights, draw one canvas-wide sample, then pin observed pixels at
  the matching noise level. The final step pins bit-exactly.
* token flavor: encode to a token grid, walk temporal windows sequentially
  (overlapping token frames stay pinned to their already-committed values),
  and within each window run confidence-ordered unmasking whose per-round
  distributions are fused across spatial windows.

Window predictions within one step are independent, so they may run on a
thread pool; accumulation order is fixed afterwards, which keeps outputs
byte-identical for any thread count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .aggregate import (
    WindowLayout,
    make_layout,
    temporal_layout,
    tent_weights,
    window_starts,
)
from .backends import DdpmSchedule, MaskSchedule, WindowContext, token_iterative_sample
from .errors import BackendError, ConfigError
from .imageops import resize_bilinear
from .rng import keyed_rng

log = logging.getLogger(__name__)

MASK_SOLID = 0.999  # resampled mask counts as observed only if essentially 1


def normalize_height(frames: np.ndarray, mask: np.ndarray, native_height: int):
    """Resize the canvas so its height matches the backend's native height.

    Width scales by the same factor (rounded). The mask is resampled with
    the same bilinear kernel and re-binarized conservatively: a pixel stays
    observed only where the interpolated coverage is >= 0.999, so partially
    observed borders never count as known content. Returns (frames, mask)
    unchanged (no copy) when the height already matches.
    """
    t_len, h, w = frames.shape[:3]
    if h == native_height:
        return frames, mask
    work_w = max(1, int(round(w * native_height / h)))
    out = np.empty((t_len, native_height, work_w, 3), dtype=np.float32)
    out_m = np.empty((t_len, native_height, work_w), dtype=bool)
    for t in range(t_len):
        out[t] = resize_bilinear(frames[t], native_height, work_w)
        cov = resize_bilinear(mask[t].astype(np.float32), native_height, work_w)
        out_m[t] = cov >= MASK_SOLID
    return out, out_m


def restore_height(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of normalize_height for the finished output."""
    if frames.shape[1:3] == (height, width):
        return frames
    out = np.empty((frames.shape[0], height, width, 3), dtype=np.float32)
    for t in range(frames.shape[0]):
        out[t] = resize_bilinear(frames[t], height, width)
    return out


def spatial_layout(extent: int, window: int, stride: int, mode: str = "tent") -> WindowLayout:
    """Column layout of overlapping backend windows across the canvas."""
    window = min(window, extent)
    return make_layout(extent, window, stride, mode)


def _call_windows(backend, observed, pinned, state, t, contexts, threads):
    """Run backend.predict for every window, optionally on a thread pool.

    ``contexts`` is a list of (t_slice, x_slice, WindowContext). Results come
    back in list order regardless of scheduling.
    """

    def one(entry):
        t_sl, x_sl, ctx = entry
        return backend.predict(
            observed[t_sl, :, x_sl], pinned[t_sl, :, x_sl], state[t_sl, :, x_sl], t, ctx
        )

    if threads > 1 and len(contexts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, contexts))
    return [one(entry) for entry in contexts]


def multidiffusion_gaussian(
    observed: np.ndarray,
    schedule: MaskSchedule,
    backend,
    s_layout: WindowLayout,
    t_layout: WindowLayout,
    seed: int,
    *,
    level: int = 0,
    stage: str = "base",
    threads: int = 1,
    level_times: np.ndarray | None = None,
    filter_width: int = 1,
) -> np.ndarray:
    """Ancestral DDPM sampling of a full canvas with windowed predictions.

    ``observed`` supplies the content pinned by ``schedule`` (already merged
    with coarser output during refinement). All randomness is keyed by
    (seed, level, stage, step), independent of window order and threading.
    """
    t_total, h, w = observed.shape[:3]
    if s_layout.extent != w or t_layout.extent != t_total:
        raise ConfigError(
            f"layout extents ({t_layout.extent}, {s_layout.extent}) do not match "
            f"canvas ({t_total}, {w})"
        )
    if level_times is None:
        level_times = np.arange(t_total, dtype=np.float64)
    ddpm = DdpmSchedule(schedule.steps)
    observed = observed.astype(np.float32, copy=False)

    state = keyed_rng(seed, "init", level, stage).standard_normal(
        observed.shape, dtype=np.float32
    )
    t_slices = list(t_layout.slices())
    x_slices = list(s_layout.slices())
    contexts = []
    for t_sl in t_slices:
        for x_sl in x_slices:
            ctx = WindowContext(
                level=level,
                frames=(t_sl.start, t_sl.stop),
                cols=(x_sl.start, x_sl.stop),
                level_times=level_times,
                filter_width=filter_width,
                work_shape=(h, w),
                ddpm=ddpm,
            )
            contexts.append((t_sl, x_sl, ctx))

    for t in range(schedule.steps - 1, -1, -1):
        s = schedule.steps - 1 - t
        pin = schedule.mask_at(s)
        pinned3 = pin[..., None]
        fields = _call_windows(backend, observed, pin, state, t, contexts, threads)

        mu_acc = np.zeros(observed.shape, dtype=np.float64)
        var_acc = np.zeros(observed.shape, dtype=np.float64)
        for (t_sl, x_sl, _), fld in zip(contexts, fields):
            wt = t_layout.weights_for(t_sl)[:, None, None, None]
            wx = s_layout.weights_for(x_sl)[None, None, :, None]
            weight = (wt * wx).astype(np.float64)
            mu_acc[t_sl, :, x_sl] += weight * fld.mu
            var_acc[t_sl, :, x_sl] += weight * fld.var
        var_acc = np.maximum(var_acc, 0.0)

        if var_acc.any():
            eps = keyed_rng(seed, "step", level, stage, s).standard_normal(
                observed.shape, dtype=np.float32
            )
            state = (mu_acc + np.sqrt(var_acc) * eps).astype(np.float32)
        else:
            state = mu_acc.astype(np.float32)

        alpha = ddpm.pin_alpha(t)
        if alpha >= 1.0:
            state = np.where(pinned3, observed, state)
        else:
            noise = keyed_rng(seed, "pin", level, stage, s).standard_normal(
                observed.shape, dtype=np.float32
            )
            noised = np.float32(np.sqrt(alpha)) * observed + np.float32(
                np.sqrt(1.0 - alpha)
            ) * noise
            state = np.where(pinned3, noised, state)
    return state


def forward_backward_selector(mask: np.ndarray) -> np.ndarray:
    """True where some observation exists at the same or an earlier frame.

    These are exactly the pixels where a causal forward pass has evidence;
    everywhere else the time-reversed pass supplies the value.
    """
    return np.logical_or.accumulate(np.asarray(mask, dtype=bool), axis=0)


def complete_base(
    frames: np.ndarray,
    mask: np.ndarray,
    backend,
    seed: int,
    *,
    stride: int | None = None,
    weights: str = "tent",
    threads: int = 1,
    level: int = 0,
    stage: str = "base",
    level_times: np.ndarray | None = None,
    filter_width: int = 1,
    steps: int | None = None,
) -> np.ndarray:
    """Complete one level from scratch: observed pixels pinned at every step."""
    d = backend.descriptor
    steps = d.sampling_steps if steps is None else steps
    schedule = MaskSchedule.constant(mask, steps)
    s_layout = spatial_layout(
        frames.shape[2], d.native_width, d.native_width if stride is None else stride, weights
    )
    t_layout = temporal_layout(frames.shape[0], d.context_frames, weights)
    return multidiffusion_gaussian(
        frames, schedule, backend, s_layout, t_layout, seed,
        level=level, stage=stage, threads=threads,
        level_times=level_times, filter_width=filter_width,
    )


def complete_base_causal(frames: np.ndarray, mask: np.ndarray, backend, seed: int,
                         **kwargs) -> np.ndarray:
    """Two causal passes (forward, time-reversed) merged by evidence.

    Pixels with an observation at or before t take the forward result; the
    rest take the reversed pass, which has seen the observations that lie in
    their future. Both passes share the seed and differ only by stage key.
    """
    kwargs.pop("stage", None)
    times = kwargs.pop("level_times", None)
    fwd = complete_base(frames, mask, backend, seed, stage="fwd",
                        level_times=times, **kwargs)
    rev_times = None if times is None else np.ascontiguousarray(times[::-1])
    bwd = complete_base(
        np.ascontiguousarray(frames[::-1]),
        np.ascontiguousarray(mask[::-1]),
        backend, seed, stage="bwd", level_times=rev_times, **kwargs,
    )[::-1]
    sel = forward_backward_selector(mask)[..., None]
    return np.where(sel, fwd, bwd)


# ---------------------------------------------------------------------------
# token flavor


def pad_token_multiple(frames: np.ndarray, mask: np.ndarray, patch: int,
                       token_frames: int):
    """Edge-replicate so (T, H, W) tile exactly into token cells.

    Returns (frames, mask, original_shape); cropping back is the caller's
    job after decoding.
    """
    t_len, h, w = frames.shape[:3]
    pad_t = (-t_len) % token_frames
    pad_h = (-h) % patch
    pad_w = (-w) % patch
    if pad_t or pad_h or pad_w:
        frames = np.pad(frames, ((0, pad_t), (0, pad_h), (0, pad_w), (0, 0)), mode="edge")
        mask = np.pad(mask, ((0, pad_t), (0, pad_h), (0, pad_w)), mode="edge")
    return frames, mask, (t_len, h, w)


def derive_token_mask(valid: np.ndarray, patch: int, token_frames: int) -> np.ndarray:
    """Token-grid mask: a token is known iff all pixels under it are observed."""
    t_len, h, w = valid.shape
    if t_len % token_frames or h % patch or w % patch:
        raise ConfigError(
            f"mask {t_len}x{h}x{w} does not tile into {token_frames}-frame "
            f"{patch}x{patch} tokens"
        )
    cells = valid.reshape(
        t_len // token_frames, token_frames, h // patch, patch, w // patch, patch
    )
    return cells.all(axis=(1, 3, 5))


def token_spatial_layout(descriptor, token_extent: int, stride_px: int | None,
                         mode: str = "tent") -> WindowLayout:
    """Spatial window layout in token units derived from pixel geometry."""
    p = descriptor.patch_size
    stride_px = descriptor.native_width if stride_px is None else stride_px
    if descriptor.native_width % p or stride_px % p:
        raise ConfigError(
            f"native width {descriptor.native_width} and stride {stride_px} must be "
            f"multiples of the patch size {p}"
        )
    window = min(descriptor.native_width // p, token_extent)
    stride = max(1, stride_px // p)
    lefts = window_starts(token_extent, window, stride)
    return WindowLayout(
        lefts=lefts, window=window, extent=token_extent,
        weights=tent_weights(lefts, window, token_extent, mode),
    )


def complete_base_token(
    frames: np.ndarray,
    mask: np.ndarray,
    backend,
    seed: int,
    *,
    stride: int | None = None,
    weights: str = "tent",
    level: int = 0,
    stage: str = "base",
    rounds: int | None = None,
    known_tokens: np.ndarray | None = None,
) -> np.ndarray:
    """Token-flavor completion of one level.

    The canvas is encoded once; temporal windows run in order so the token
    frames shared with an earlier window enter the next one already known,
    which is what keeps long sequences coherent. Per round, distributions
    from overlapping spatial windows are weight-fused before sampling.
    ``known_tokens`` overrides the mask-derived grid (refinement passes pin
    fewer tokens than a from-scratch pass).
    """
    d = backend.descriptor
    rounds = d.sampling_rounds if rounds is None else rounds
    frames_p, mask_p, orig = pad_token_multiple(frames, mask, d.patch_size, d.token_frames)
    model = getattr(backend, "model", None)
    if model is None:
        model = backend.prepare(frames_p, mask_p, seed)
    tokens = model.encode(frames_p)
    known = (
        derive_token_mask(mask_p, d.patch_size, d.token_frames)
        if known_tokens is None
        else known_tokens.copy()
    )
    if known.shape != tokens.shape:
        raise BackendError(
            f"known-token grid {known.shape} does not match token grid {tokens.shape}"
        )
    s_layout = token_spatial_layout(d, tokens.shape[2], stride, weights)
    done = known.copy()
    for lo, hi in _token_ranges(tokens.shape[0], d.context_frames):
        tokens[lo:hi] = token_iterative_sample(
            model, tokens[lo:hi], done[lo:hi], seed, rounds,
            layout=s_layout, rng_path=(level, stage, lo),
        )
        done[lo:hi] = True
    decoded = model.decode(tokens)
    t_len, h, w = orig
    return np.ascontiguousarray(decoded[:t_len, :h, :w])


def complete_base_token_causal(frames: np.ndarray, mask: np.ndarray, backend,
                               seed: int, **kwargs) -> np.ndarray:
    """Causal token completion: forward + time-reversed passes, merged by
    evidence exactly like the gaussian variant."""
    kwargs.pop("stage", None)
    fwd = complete_base_token(frames, mask, backend, seed, stage="fwd", **kwargs)
    bwd = complete_base_token(
        np.ascontiguousarray(frames[::-1]),
        np.ascontiguousarray(mask[::-1]),
        backend, seed, stage="bwd", **kwargs,
    )[::-1]
    sel = forward_backward_selector(mask)[..., None]
    return np.where(sel, fwd, bwd)


def _token_ranges(n: int, ctx: int):
    from .aggregate import temporal_ranges

    return temporal_ranges(n, ctx)
