"""Shared low-level image operations.

All interpolation here uses the ``a + t * (b - a)`` form so that sampling a
region of constant value returns that value bit-exact in float32. Several
pipeline guarantees (input fidelity, static-scene closure) rely on this.
"""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def lerp(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    return a + t * (b - a)


def to_gray(img: np.ndarray) -> np.ndarray:
    """(..., 3) RGB -> (...) luma, float32."""
    return (img @ LUMA_WEIGHTS).astype(np.float32)


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample ``img`` at array coordinates (xs, ys).

    Coordinates are in array index space: (0, 0) is the center of the
    top-left pixel. Returns (values, support) where support is True only
    where the sample has full bilinear support (all four neighbors exist),
    i.e. 0 <= x <= W-1 and 0 <= y <= H-1. Out-of-support values are computed
    with clamped indices and should be ignored.

    img: (H, W) or (H, W, C); xs/ys: arrays of any matching shape.
    """
    h, w = img.shape[:2]
    xs = np.asarray(xs, dtype=np.float32)
    ys = np.asarray(ys, dtype=np.float32)
    support = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)

    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)
    fy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    top = lerp(img[y0, x0], img[y0, x1], fx)
    bot = lerp(img[y1, x0], img[y1, x1], fx)
    return lerp(top, bot, fy), support


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (H, W[, C]) to (out_h, out_w[, C]) with pixel-center alignment."""
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    ys = (np.arange(out_h, dtype=np.float32) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float32) + 0.5) * (w / out_w) - 0.5
    xg, yg = np.meshgrid(xs, ys)
    out, _ = bilinear_sample(img, xg, yg)
    return out.astype(img.dtype, copy=False)
