"""Generative backends behind a uniform two-flavor interface.

A backend is either *gaussian* (predicts a per-pixel Gaussian over the next
denoising step; the pipeline runs DDPM ancestral sampling around it) or
*token* (predicts categorical distributions over a codebook; the pipeline
runs confidence-ordered iterative unmasking). Real models live out of
process behind the wire protocol in :mod:`panovid.remote`; the backends here
are closed-form stand-ins that exercise every orchestration path:

* ConstantBackend: fixed (mu, variance) everywhere (sampler statistics).
* OracleBackend: mu = ground truth for the requested window, variance 0.
* InterpolationBackend: mu = per-pixel linear interpolation in time between
  pinned observations, constant variance (default 0).
* DiffusionMockBackend: proper DDPM posterior pulling toward an inpainting
  target built by temporal interpolation.
* TokenMockBackend: k-means patch codebook fitted to the observed pixels of
  the current job plus a neighborhood-histogram token predictor.

The DDPM noise schedule is linear in beta from 1e-4 to 0.02 over the
configured number of steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregate import WindowLayout, aggregate_categorical
from .errors import BackendError, ConfigError
from .imageops import resize_bilinear
from .rng import keyed_rng

log = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
TOKEN = "token"


@dataclass(frozen=True)
class BackendDescriptor:
    """Capabilities and native geometry of a backend."""

    flavor: str  # "gaussian" | "token"
    context_frames: int
    native_height: int
    native_width: int
    causal: bool = False
    sampling_steps: int = 256  # gaussian flavor (DDPM steps)
    sampling_rounds: int = 12  # token flavor (unmasking rounds)
    vocab_size: int = 256
    patch_size: int = 8
    token_frames: int = 1  # frames grouped into one token cell

    def __post_init__(self):
        if self.flavor not in (GAUSSIAN, TOKEN):
            raise ConfigError(f"unknown backend flavor '{self.flavor}'")


@dataclass
class GaussianField:
    """Per-pixel Gaussian prediction: mean and marginal variance, (..., 3)."""

    mu: np.ndarray
    var: np.ndarray


@dataclass
class CategoricalField:
    """Per-token distribution over the codebook, shape (..., V)."""

    probs: np.ndarray


@dataclass
class MaskSchedule:
    """Which pixels are pinned to observed content at each sampling step.

    ``base`` is pinned at every step. Frames flagged in ``full_frames`` are
    additionally pinned full-frame for executed steps s < full_frame_until
    (the step count itself for the standard schedule, so always).
    """

    steps: int
    base: np.ndarray  # (T, H, W) bool
    full_frames: np.ndarray | None = None  # (T,) bool
    full_frame_until: int = 0

    @classmethod
    def constant(cls, mask: np.ndarray, steps: int) -> "MaskSchedule":
        return cls(steps=steps, base=np.asarray(mask, dtype=bool))

    def mask_at(self, step_index: int) -> np.ndarray:
        out = self.base
        if self.full_frames is not None and step_index < self.full_frame_until:
            out = out.copy()
            out[self.full_frames] = True
        return out


@dataclass
class WindowContext:
    """Where a prediction window sits inside the job (for backends that
    need it, like the oracle); plain mocks may ignore it."""

    level: int
    frames: tuple[int, int]  # frame slice [lo, hi) within the level
    cols: tuple[int, int]  # column slice [lo, hi) in working resolution
    level_times: np.ndarray  # all level frame centers, level-0 frame units
    filter_width: int
    work_shape: tuple[int, int]  # (H, W) of the working-resolution canvas
    ddpm: "DdpmSchedule | None" = None


class DdpmSchedule:
    """Linear-beta DDPM arrays and posterior coefficients.

    Step t runs from steps-1 down to 0; producing x at level t-1 (level -1
    is clean data, so pinned pixels come out bit-exact at the end).
    """

    def __init__(self, steps: int):
        if steps < 1:
            raise ConfigError(f"sampling steps must be >= 1, got {steps}")
        self.steps = steps
        self.betas = np.linspace(1e-4, 0.02, steps, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alphas_cumprod = np.cumprod(self.alphas)
        self.alphas_cumprod_prev = np.concatenate([[1.0], self.alphas_cumprod[:-1]])

    def posterior_coefs(self, t: int):
        """(coef_x0, coef_xt, variance) of q(x_{t-1} | x_t, x0)."""
        acp = self.alphas_cumprod[t]
        acp_prev = self.alphas_cumprod_prev[t]
        beta = self.betas[t]
        c0 = np.sqrt(acp_prev) * beta / (1.0 - acp)
        c1 = np.sqrt(self.alphas[t]) * (1.0 - acp_prev) / (1.0 - acp)
        var = beta * (1.0 - acp_prev) / (1.0 - acp)
        return float(c0), float(c1), float(var)

    def pin_alpha(self, t: int) -> float:
        """Cumulative alpha of the sample produced at transition t (exactly
        1 at t=0, i.e. the final output pins clean observed content)."""
        return float(self.alphas_cumprod_prev[t])


def temporal_fill(frames: np.ndarray, valid: np.ndarray, causal: bool = False) -> np.ndarray:
    """Per-pixel linear interpolation in time between valid observations.

    For each pixel, values between the nearest valid frames before/after are
    linearly interpolated; one-sided gaps take the nearest valid frame.
    Pixels with no valid observation at any time fall back to the per-frame
    mean of that frame's valid pixels (mid-gray when a frame has none).
    ``causal`` ignores future frames entirely: values carry forward from the
    most recent observation, and pixels not yet observed use the fallback.
    """
    t_total = frames.shape[0]
    valid = np.asarray(valid, dtype=bool)
    tidx = np.arange(t_total, dtype=np.int64).reshape((t_total,) + (1,) * (valid.ndim - 1))
    prev = np.maximum.accumulate(np.where(valid, tidx, -1), axis=0)
    if causal:
        nxt = np.broadcast_to(np.int64(t_total), prev.shape)
    else:
        nxt = np.flip(
            np.minimum.accumulate(np.flip(np.where(valid, tidx, t_total), axis=0), axis=0),
            axis=0,
        )
    has_prev = prev >= 0
    has_next = nxt < t_total
    anchor_lo = np.where(has_prev, prev, nxt)
    anchor_hi = np.where(has_next, nxt, prev)
    missing = ~(has_prev | has_next)
    lo = np.clip(anchor_lo, 0, t_total - 1)
    hi = np.clip(anchor_hi, 0, t_total - 1)
    v_lo = np.take_along_axis(frames, lo[..., None], axis=0)
    v_hi = np.take_along_axis(frames, hi[..., None], axis=0)
    span = (hi - lo).astype(np.float32)
    alpha = np.where(span > 0, (tidx - lo) / np.where(span > 0, span, 1.0), 0.0)
    alpha = np.clip(alpha, 0.0, 1.0).astype(np.float32)[..., None]
    out = v_lo + alpha * (v_hi - v_lo)
    if missing.any():
        fallback = np.empty((t_total, 1, 1, frames.shape[-1]), dtype=np.float32)
        for t in range(t_total):
            sel = valid[t]
            fallback[t, 0, 0] = frames[t][sel].mean(axis=0) if sel.any() else 0.5
        fill = np.broadcast_to(fallback, out.shape)
        out = np.where(missing[..., None], fill, out)
    return out.astype(np.float32)


class ConstantBackend:
    """Gaussian backend that always predicts the same (mu, variance)."""

    def __init__(self, mu, var, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self.mu = np.float32(mu)
        self.var = np.float32(var)

    def predict(self, observed, pinned, state, t, ctx=None) -> GaussianField:
        return GaussianField(
            mu=np.full_like(state, self.mu), var=np.full_like(state, self.var)
        )


class OracleBackend:
    """Predicts the ground truth for every requested window, variance 0.

    The ground-truth canvas video is box-filtered to each pyramid level on
    demand (same window widths as the job's pyramid, reconstructed from the
    window-center timestamps) and resized to the job's working resolution.
    """

    def __init__(self, gt_frames: np.ndarray, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self.gt = np.asarray(gt_frames, dtype=np.float32)
        self._levels: dict[tuple, np.ndarray] = {}

    def _level_frames(self, ctx: WindowContext) -> np.ndarray:
        key = (ctx.level, ctx.work_shape, ctx.level_times.tobytes())
        cached = self._levels.get(key)
        if cached is not None:
            return cached
        n_gt = self.gt.shape[0]
        width = ctx.filter_width
        work_h, work_w = ctx.work_shape
        frames = np.empty((len(ctx.level_times), work_h, work_w, 3), dtype=np.float32)
        for i, center in enumerate(ctx.level_times):
            lo = int(round(center - (width - 1) / 2.0))
            lo = max(0, min(lo, n_gt - 1))
            hi = max(lo + 1, min(lo + width, n_gt))
            mean = self.gt[lo:hi].astype(np.float64).mean(axis=0).astype(np.float32)
            if mean.shape[:2] != (work_h, work_w):
                mean = resize_bilinear(mean, work_h, work_w)
            frames[i] = mean
        self._levels[key] = frames
        return frames

    def predict(self, observed, pinned, state, t, ctx: WindowContext) -> GaussianField:
        if ctx is None:
            raise BackendError("OracleBackend needs a window context")
        level = self._level_frames(ctx)
        f_lo, f_hi = ctx.frames
        c_lo, c_hi = ctx.cols
        mu = level[f_lo:f_hi, :, c_lo:c_hi]
        if mu.shape != state.shape:
            raise BackendError(
                f"oracle window {mu.shape} does not match state {state.shape}"
            )
        return GaussianField(mu=mu.copy(), var=np.zeros_like(mu))


class InterpolationBackend:
    """Per-pixel linear interpolation of pinned observations over time.

    With the default var0 = 0 the prediction is a point mass, which makes
    the surrounding sampler deterministic. Also serves as the reference
    linear-interpolation baseline when driven through the pipeline.
    """

    def __init__(self, descriptor: BackendDescriptor, var0: float = 0.0):
        self.descriptor = descriptor
        self.var0 = float(var0)

    def predict(self, observed, pinned, state, t, ctx=None) -> GaussianField:
        mu = temporal_fill(observed, pinned, causal=self.descriptor.causal)
        return GaussianField(mu=mu, var=np.full_like(mu, np.float32(self.var0)))


class DiffusionMockBackend:
    """Closed-form denoiser: the DDPM posterior toward an inpainting target.

    The target is the temporal interpolation of pinned content, so sampling
    behaves like a real (if boring) diffusion model: state-dependent means,
    proper posterior variance, convergence onto the target.
    """

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor

    def predict(self, observed, pinned, state, t, ctx: WindowContext) -> GaussianField:
        if ctx is None or ctx.ddpm is None:
            raise BackendError("DiffusionMockBackend needs ctx.ddpm")
        target = temporal_fill(observed, pinned, causal=self.descriptor.causal)
        c0, c1, var = ctx.ddpm.posterior_coefs(t)
        mu = np.float32(c0) * target + np.float32(c1) * state
        return GaussianField(mu=mu.astype(np.float32), var=np.full_like(mu, np.float32(var)))


def ddpm_sample(backend, observed: np.ndarray, schedule: MaskSchedule, seed: int,
                ctx: WindowContext | None = None, threads: int = 1) -> np.ndarray:
    """DDPM ancestral sampling of a single window (degenerate layout).

    Equivalent to the windowed MultiDiffusion loop with one spatial window
    and one temporal range; see :mod:`panovid.complete` for the general
    version this delegates to.
    """
    from .complete import multidiffusion_gaussian

    t_len, h, w = observed.shape[:3]
    layout = WindowLayout(
        lefts=np.array([0]), window=w, extent=w,
        weights=np.ones((1, w), dtype=np.float32),
    )
    t_layout = WindowLayout(
        lefts=np.array([0]), window=t_len, extent=t_len,
        weights=np.ones((1, t_len), dtype=np.float32),
    )
    return multidiffusion_gaussian(
        observed, schedule, backend, layout, t_layout, seed,
        level=0 if ctx is None else ctx.level, threads=threads,
        level_times=None if ctx is None else ctx.level_times,
        filter_width=1 if ctx is None else ctx.filter_width,
    )


# ---------------------------------------------------------------------------
# token flavor


def kmeans_codebook(samples: np.ndarray, k: int, seed: int, iters: int = 50):
    """Plain Lloyd k-means with k-means++ seeding; deterministic given seed.

    Returns the (k', d) codebook with k' <= k: duplicate samples collapse,
    and a vocabulary larger than the number of distinct samples shrinks with
    a warning.
    """
    samples = np.asarray(samples, dtype=np.float64)
    distinct = np.unique(samples, axis=0)
    if len(distinct) <= k:
        if len(distinct) < k:
            log.warning(
                "codebook shrunk to %d entries (%d requested): content has "
                "too few distinct patches", len(distinct), k,
            )
        return distinct.astype(np.float32)
    rng = keyed_rng(seed, "kmeans")
    centers = [samples[rng.integers(len(samples))]]
    d2 = ((samples - centers[0]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(len(samples), 1.0 / len(samples))
        centers.append(samples[rng.choice(len(samples), p=probs)])
        d2 = np.minimum(d2, ((samples - centers[-1]) ** 2).sum(axis=1))
    centers = np.stack(centers)
    for _ in range(iters):
        dist = ((samples**2).sum(1)[:, None] + (centers**2).sum(1)[None, :]
                - 2.0 * samples @ centers.T)
        assign = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = samples[assign == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers, atol=1e-12):
            centers = new_centers
            break
        centers = new_centers
    return centers.astype(np.float32)


class TokenMockModel:
    """Patch tokenizer + neighborhood-histogram predictor.

    Tokens are nearest-codebook assignments of p x p x (grouped frames)
    patches. The predictor returns, per position, the frequency histogram of
    known tokens within a Chebyshev neighborhood, smoothed toward uniform by
    ``epsilon``; an empty neighborhood gives the uniform distribution. The
    causal variant only counts neighbors at the same or earlier token frames.
    """

    def __init__(self, codebook: np.ndarray, patch_size: int, token_frames: int = 1,
                 epsilon: float = 0.05, radius: int = 2, causal: bool = False):
        self.codebook = np.asarray(codebook, dtype=np.float32)
        self.patch_size = int(patch_size)
        self.token_frames = int(token_frames)
        self.epsilon = float(epsilon)
        self.radius = int(radius)
        self.causal = bool(causal)

    @property
    def vocab_size(self) -> int:
        return len(self.codebook)

    def _check_dims(self, frames: np.ndarray):
        t, h, w = frames.shape[:3]
        p, g = self.patch_size, self.token_frames
        if t % g or h % p or w % p:
            raise ConfigError(
                f"volume {t}x{h}x{w} does not tile into {g}-frame {p}x{p} tokens"
            )

    def patches(self, frames: np.ndarray) -> np.ndarray:
        """(T, H, W, 3) -> (T', H', W', g*p*p*3) patch vectors."""
        self._check_dims(frames)
        t, h, w, c = frames.shape
        p, g = self.patch_size, self.token_frames
        x = frames.reshape(t // g, g, h // p, p, w // p, p, c)
        x = x.transpose(0, 2, 4, 1, 3, 5, 6)
        return x.reshape(t // g, h // p, w // p, g * p * p * c)

    def encode(self, frames: np.ndarray) -> np.ndarray:
        vec = self.patches(frames).astype(np.float64)
        flat = vec.reshape(-1, vec.shape[-1])
        cb = self.codebook.astype(np.float64)
        dist = ((flat**2).sum(1)[:, None] + (cb**2).sum(1)[None, :] - 2.0 * flat @ cb.T)
        return np.argmin(dist, axis=1).astype(np.int32).reshape(vec.shape[:3])

    def decode(self, tokens: np.ndarray) -> np.ndarray:
        tg, hg, wg = tokens.shape
        p, g = self.patch_size, self.token_frames
        vec = self.codebook[tokens.reshape(-1)].reshape(tg, hg, wg, g, p, p, 3)
        vec = vec.transpose(0, 3, 1, 4, 2, 5, 6)
        return np.ascontiguousarray(vec.reshape(tg * g, hg * p, wg * p, 3))

    def predict_probs(self, tokens: np.ndarray, known: np.ndarray) -> np.ndarray:
        """(T', H', W') tokens + known mask -> (T', H', W', V) distributions."""
        tg, hg, wg = tokens.shape
        v = self.vocab_size
        counts = np.zeros((tg, hg, wg, v), dtype=np.float64)
        r = self.radius
        onehot = np.eye(v, dtype=np.float64)
        for dt in range(-r, r + 1):
            if self.causal and dt < 0:
                continue  # dst at t only hears src at t - dt, so dt < 0 is the future
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    src_t = slice(max(0, -dt), tg - max(0, dt))
                    dst_t = slice(max(0, dt), tg - max(0, -dt))
                    src_y = slice(max(0, -dy), hg - max(0, dy))
                    dst_y = slice(max(0, dy), hg - max(0, -dy))
                    src_x = slice(max(0, -dx), wg - max(0, dx))
                    dst_x = slice(max(0, dx), wg - max(0, -dx))
                    contrib = onehot[tokens[src_t, src_y, src_x]]
                    contrib = contrib * known[src_t, src_y, src_x, None]
                    counts[dst_t, dst_y, dst_x] += contrib
        totals = counts.sum(axis=-1, keepdims=True)
        uniform = 1.0 / v
        empirical = counts / np.where(totals > 0, totals, 1.0)
        probs = (1.0 - self.epsilon) * empirical + self.epsilon * uniform
        probs = np.where(totals > 0, probs, uniform)
        return probs.astype(np.float32)


class TokenMockBackend:
    """Token-flavor backend: per-job k-means codebook over observed patches."""

    def __init__(self, descriptor: BackendDescriptor, epsilon: float = 0.05,
                 radius: int = 2):
        self.descriptor = descriptor
        self.epsilon = epsilon
        self.radius = radius
        self.model: TokenMockModel | None = None

    def prepare(self, frames: np.ndarray, valid: np.ndarray, seed: int) -> TokenMockModel:
        """Fit the codebook to the observed pixels of this job."""
        d = self.descriptor
        probe = TokenMockModel(
            np.zeros((1, d.token_frames * d.patch_size**2 * 3), dtype=np.float32),
            d.patch_size, d.token_frames, self.epsilon, self.radius, d.causal,
        )
        vectors = probe.patches(frames)
        fully_valid = probe.patches(
            np.repeat(valid[..., None].astype(np.float32), 3, axis=-1)
        ).min(axis=-1) >= 1.0
        observed = vectors[fully_valid]
        if len(observed) == 0:
            raise BackendError("no fully observed patches to fit the token codebook")
        codebook = kmeans_codebook(observed, d.vocab_size, seed)
        self.model = TokenMockModel(
            codebook, d.patch_size, d.token_frames, self.epsilon, self.radius, d.causal
        )
        return self.model

    def require_model(self) -> TokenMockModel:
        if self.model is None:
            raise BackendError("token backend used before prepare() fitted the codebook")
        return self.model


def token_encode(backend: TokenMockBackend, frames: np.ndarray) -> np.ndarray:
    return backend.require_model().encode(frames)


def token_decode(backend: TokenMockBackend, tokens: np.ndarray) -> np.ndarray:
    return backend.require_model().decode(tokens)


def token_predict(backend: TokenMockBackend, tokens: np.ndarray,
                  known: np.ndarray) -> CategoricalField:
    return CategoricalField(probs=backend.require_model().predict_probs(tokens, known))


def token_iterative_sample(model: TokenMockModel, tokens: np.ndarray, known: np.ndarray,
                           seed: int, rounds: int,
                           layout: WindowLayout | None = None,
                           rng_path: tuple = ()) -> np.ndarray:
    """Confidence-ordered iterative unmasking with a cosine schedule.

    Each round re-predicts the still-masked positions (aggregating across
    the spatial windows of ``layout`` over token columns when given), samples
    candidate tokens, and commits the most confident ones so the number of
    masked positions follows floor(M0 * cos(pi/2 * (i+1)/rounds)). Already
    known tokens are never resampled. Deterministic given the seed.
    """
    tokens = tokens.copy()
    known = known.copy()
    m0 = int((~known).sum())
    if m0 == 0:
        return tokens
    v = model.vocab_size
    for i in range(rounds):
        if layout is None:
            probs = model.predict_probs(tokens, known)
        else:
            acc = np.zeros(tokens.shape + (v,), dtype=np.float64)
            for w_idx, sl in enumerate(layout.slices()):
                p = model.predict_probs(tokens[:, :, sl], known[:, :, sl])
                acc[:, :, sl] += layout.weights[w_idx, sl][None, None, :, None] * p
            totals = acc.sum(axis=-1, keepdims=True)
            probs = (acc / np.where(totals > 0, totals, 1.0)).astype(np.float32)
        masked = ~known
        flat_idx = np.nonzero(masked.reshape(-1))[0]
        if len(flat_idx) == 0:
            break
        pflat = probs.reshape(-1, v)[flat_idx].astype(np.float64)
        pflat /= pflat.sum(axis=1, keepdims=True)
        rng = keyed_rng(seed, "token-round", *rng_path, i)
        draws = rng.random((len(flat_idx), 1))
        sampled = (pflat.cumsum(axis=1) < draws).sum(axis=1).clip(0, v - 1)
        conf = pflat[np.arange(len(flat_idx)), sampled]
        target_masked = int(math.floor(m0 * math.cos(math.pi / 2.0 * (i + 1) / rounds)))
        commit = len(flat_idx) - target_masked
        if commit <= 0:
            continue
        order = np.argsort(-conf, kind="stable")[:commit]
        chosen = flat_idx[order]
        tokens.reshape(-1)[chosen] = sampled[order].astype(tokens.dtype)
        known.reshape(-1)[chosen] = True
    return tokens
