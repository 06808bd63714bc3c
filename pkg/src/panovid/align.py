"""Geometric and color alignment between observed and synthesized content.

Registration drift and exposure differences make the observed frames
disagree slightly with the upsampled coarse estimate they are merged onto.
Two correctors live here:

* a coarse grid flow (one displacement per grid node, bilinearly densified)
  fitted by Lucas-Kanade on the luma channel, used to warp the observed
  frame onto the estimate's geometry;
* a Laplacian-pyramid color transfer that keeps the observed frame's two
  finest detail bands but takes all coarser bands from the estimate, which
  removes global color and exposure mismatch without touching texture.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError
from .imageops import bilinear_sample, resize_bilinear, to_gray

log = logging.getLogger(__name__)

MASK_SOLID = 0.999
MIN_NODE_SUPPORT = 0.25  # fraction of patch pixels needed to trust a node
BLUR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float32) / 16.0


@dataclass
class GridFlowField:
    """Per-node displacements (dx, dy) on a regular grid over an image.

    Node (i, j) sits at pixel (j * spacing, i * spacing); the last row and
    column of nodes land on or past the final pixels, so densification only
    interpolates, never extrapolates beyond one spacing.
    """

    flow: np.ndarray  # (gh, gw, 2) float32, (dx, dy) in pixels
    spacing: int
    shape: tuple[int, int]  # (H, W) of the image it applies to

    def dense(self) -> np.ndarray:
        """Bilinearly interpolated per-pixel flow, (H, W, 2) float32."""
        h, w = self.shape
        gh, gw = self.flow.shape[:2]
        ys = np.clip(np.arange(h, dtype=np.float32) / self.spacing, 0, gh - 1)
        xs = np.clip(np.arange(w, dtype=np.float32) / self.spacing, 0, gw - 1)
        xg, yg = np.meshgrid(xs, ys)
        out = np.empty((h, w, 2), dtype=np.float32)
        for c in range(2):
            out[..., c], _ = bilinear_sample(self.flow[..., c], xg, yg)
        return out


def _grid_nodes(shape: tuple[int, int], spacing: int):
    h, w = shape
    gh = (h - 1) // spacing + 1
    gw = (w - 1) // spacing + 1
    node_y = np.arange(gh, dtype=np.float32) * spacing
    node_x = np.arange(gw, dtype=np.float32) * spacing
    return node_y, node_x


def _fill_unsupported(flow: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Replace untrusted nodes by the average of trusted neighbors, spreading
    outward; all-bad grids collapse to zero flow."""
    if good.all():
        return flow
    if not good.any():
        return np.zeros_like(flow)
    flow = flow.copy()
    known = good.copy()
    while not known.all():
        acc = np.zeros_like(flow)
        cnt = np.zeros(flow.shape[:2], dtype=np.int32)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            src_y = slice(max(0, -dy), flow.shape[0] - max(0, dy))
            dst_y = slice(max(0, dy), flow.shape[0] - max(0, -dy))
            src_x = slice(max(0, -dx), flow.shape[1] - max(0, dx))
            dst_x = slice(max(0, dx), flow.shape[1] - max(0, -dx))
            kn = known[src_y, src_x]
            acc[dst_y, dst_x] += np.where(kn[..., None], flow[src_y, src_x], 0.0)
            cnt[dst_y, dst_x] += kn
        newly = (~known) & (cnt > 0)
        if not newly.any():
            break
        flow[newly] = acc[newly] / cnt[newly, None]
        known |= newly
    return flow


def estimate_grid_flow(
    src: np.ndarray,
    dst: np.ndarray,
    valid: np.ndarray | None = None,
    *,
    spacing: int = 16,
    octaves: int = 3,
    iters: int = 10,
    max_disp: float = 8.0,
) -> GridFlowField:
    """Fit per-node displacements so that src(p + d) matches dst(p).

    Runs Lucas-Kanade independently per node (all nodes vectorized
    together) over a coarse-to-fine image pyramid. Residuals only count
    where the displaced sample stays inside the image and, when ``valid``
    is given, inside src's observed region; nodes whose support drops below
    25% of the patch are filled from their neighbors instead. Identical
    inputs give exactly zero flow.
    """
    src = np.asarray(src)
    dst = np.asarray(dst)
    src_g = to_gray(src) if src.ndim == 3 else src.astype(np.float32)
    dst_g = to_gray(dst) if dst.ndim == 3 else dst.astype(np.float32)
    if src_g.shape != dst_g.shape:
        raise ConfigError(f"shape mismatch {src_g.shape} vs {dst_g.shape}")
    h, w = src_g.shape
    valid_f = (
        np.ones((h, w), dtype=np.float32)
        if valid is None
        else np.asarray(valid, dtype=np.float32)
    )
    node_y, node_x = _grid_nodes((h, w), spacing)
    gh, gw = len(node_y), len(node_x)
    flow = np.zeros((gh, gw, 2), dtype=np.float32)
    good = np.ones((gh, gw), dtype=bool)

    pyr = [(src_g, dst_g, valid_f)]
    for _ in range(octaves - 1):
        s, d, v = pyr[-1]
        if min(s.shape) < 8:
            break
        pyr.append(
            (
                resize_bilinear(s, s.shape[0] // 2, s.shape[1] // 2),
                resize_bilinear(d, d.shape[0] // 2, d.shape[1] // 2),
                resize_bilinear(v, v.shape[0] // 2, v.shape[1] // 2),
            )
        )

    for s_img, d_img, v_img in reversed(pyr):
        scale = h / s_img.shape[0]
        half = max(2, int(round(spacing / scale)))
        offs = np.arange(-half, half + 1, dtype=np.float32)
        ox, oy = np.meshgrid(offs, offs)
        nx = (np.broadcast_to(node_x[None, :], (gh, gw)) / scale).reshape(-1, 1, 1)
        ny = (np.broadcast_to(node_y[:, None], (gh, gw)) / scale).reshape(-1, 1, 1)
        base_x = (nx + ox[None]).astype(np.float32)
        base_y = (ny + oy[None]).astype(np.float32)
        tgt, tgt_sup = bilinear_sample(d_img, base_x, base_y)
        gx = convolve1d(s_img, np.array([0.5, 0.0, -0.5], np.float32), axis=1, mode="nearest")
        gy = convolve1d(s_img, np.array([0.5, 0.0, -0.5], np.float32), axis=0, mode="nearest")

        d_local = flow.reshape(gh * gw, 2) / scale
        support = np.ones(gh * gw, dtype=np.float32)
        for _ in range(iters):
            px = base_x + d_local[:, 0, None, None]
            py = base_y + d_local[:, 1, None, None]
            warped, sup = bilinear_sample(s_img, px, py)
            v_src, _ = bilinear_sample(v_img, px, py)
            wgt = sup.astype(np.float32) * tgt_sup.astype(np.float32) * v_src
            support = wgt.mean(axis=(1, 2))
            jx, _ = bilinear_sample(gx, px, py)
            jy, _ = bilinear_sample(gy, px, py)
            err = (tgt - warped) * wgt
            a11 = (jx * jx * wgt).sum(axis=(1, 2))
            a12 = (jx * jy * wgt).sum(axis=(1, 2))
            a22 = (jy * jy * wgt).sum(axis=(1, 2))
            b1 = (jx * err).sum(axis=(1, 2))
            b2 = (jy * err).sum(axis=(1, 2))
            det = a11 * a22 - a12 * a12
            ok = det > 1e-9
            inv_det = np.where(ok, det, 1.0)
            step_x = np.where(ok, (a22 * b1 - a12 * b2) / inv_det, 0.0)
            step_y = np.where(ok, (a11 * b2 - a12 * b1) / inv_det, 0.0)
            d_local[:, 0] += step_x
            d_local[:, 1] += step_y
            lim = max_disp / scale
            np.clip(d_local, -lim, lim, out=d_local)
        flow = (d_local * scale).reshape(gh, gw, 2).astype(np.float32)
        good = (support >= MIN_NODE_SUPPORT).reshape(gh, gw)
        flow = _fill_unsupported(flow, good)
    return GridFlowField(flow=flow, spacing=spacing, shape=(h, w))


def warp_backward(frame: np.ndarray, flow: GridFlowField,
                  valid: np.ndarray | None = None):
    """Resample so out(p) = frame(p + d(p)); optionally warp a mask along.

    The warped mask counts a pixel as observed only when the sampled
    coverage is >= 0.999 and the source position stays in bounds.
    """
    h, w = flow.shape
    dense = flow.dense()
    xg, yg = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    px = xg + dense[..., 0]
    py = yg + dense[..., 1]
    out, sup = bilinear_sample(frame, px, py)
    if valid is None:
        return out, sup
    cov, _ = bilinear_sample(np.asarray(valid, dtype=np.float32), px, py)
    return out, sup & (cov >= MASK_SOLID)


def align_frame(src: np.ndarray, src_valid: np.ndarray, dst: np.ndarray,
                *, spacing: int = 16, octaves: int = 3, iters: int = 10,
                max_disp: float = 8.0):
    """Warp an observed frame (and its mask) onto the estimate's geometry."""
    field = estimate_grid_flow(
        src, dst, src_valid, spacing=spacing, octaves=octaves, iters=iters,
        max_disp=max_disp,
    )
    return warp_backward(src, field, src_valid)


# ---------------------------------------------------------------------------
# color harmonization


def _blur(img: np.ndarray) -> np.ndarray:
    out = convolve1d(img, BLUR_KERNEL, axis=0, mode="nearest")
    return convolve1d(out, BLUR_KERNEL, axis=1, mode="nearest")


def _down(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def _up(img: np.ndarray, height: int, width: int) -> np.ndarray:
    return resize_bilinear(img, height, width)


def laplacian_pyramid(img: np.ndarray, bands: int):
    """``bands`` detail levels plus the residual base, finest first.

    Reconstruction (base, then + up(band) telescoping) is exact by
    construction for any band count.
    """
    img = np.asarray(img, dtype=np.float32)
    levels = []
    cur = img
    for _ in range(bands):
        if min(cur.shape[:2]) < 2:
            raise ConfigError(
                f"image {img.shape[:2]} too small for {bands} pyramid bands"
            )
        nxt = _down(cur)
        levels.append(cur - _up(nxt, cur.shape[0], cur.shape[1]))
        cur = nxt
    return levels, cur


def reconstruct_laplacian(bands, base: np.ndarray) -> np.ndarray:
    cur = base
    for band in reversed(bands):
        cur = _up(cur, band.shape[0], band.shape[1]) + band
    return cur


def default_band_count(shape: tuple[int, int]) -> int:
    return int(math.floor(math.log2(min(shape[:2])))) - 1


def color_align(src: np.ndarray, src_valid: np.ndarray, ref: np.ndarray,
                bands: int | None = None) -> np.ndarray:
    """Transfer the reference's color onto the source's fine detail.

    Builds Laplacian pyramids of both images (source pixels outside the
    valid region are prefilled from the reference so its statistics do not
    bleed), keeps the source's two finest bands, and takes every coarser
    band plus the base from the reference. Needs at least 3 bands.
    """
    n = default_band_count(src.shape) if bands is None else int(bands)
    if n < 3:
        raise ConfigError(f"color alignment needs >= 3 bands, got {n}")
    src = np.asarray(src, dtype=np.float32)
    ref = np.asarray(ref, dtype=np.float32)
    filled = np.where(np.asarray(src_valid, dtype=bool)[..., None], src, ref)
    bx, _ = laplacian_pyramid(filled, n)
    by, base_y = laplacian_pyramid(ref, n)
    mixed = [bx[0], bx[1]] + by[2:]
    return reconstruct_laplacian(mixed, base_y)
