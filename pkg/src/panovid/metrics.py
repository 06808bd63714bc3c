"""Completion quality metrics: PSNR and flow endpoint error, split by motion.

Pixels are partitioned into static and dynamic by thresholding the
magnitude of the ground-truth optical flow at 0.2 px per frame, then PSNR
and flow endpoint error are reported per region. All comparisons run only
where the input mask was empty (the synthesized area): observed pixels pass
through the pipeline bit-exact and would only dilute the numbers.

Flow comes from the grid-based Lucas-Kanade estimator in
:mod:`panovid.align`, densified to per-pixel vectors. SSIM is included as
an auxiliary number (it is informative but no acceptance threshold uses it).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .align import estimate_grid_flow
from .errors import FormatError
from .imageops import to_gray
from .video_io import _quantize, _write_png

log = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1
FLOW_THRESHOLD = 0.2  # px/frame separating static from dynamic

DEFAULT_FLOW_PARAMS = {
    "spacing": 8,
    "octaves": 2,
    "iters": 10,
    "max_disp": 8.0,
}


def dense_flow(prev: np.ndarray, nxt: np.ndarray, **flow_params) -> np.ndarray:
    """Per-pixel forward flow (dx, dy) from prev to nxt, (H, W, 2) float32.

    Fitting d so that nxt(p + d) matches prev(p) makes d(p) the position
    change of the content sitting at p in the earlier frame.
    """
    params = {**DEFAULT_FLOW_PARAMS, **flow_params}
    field = estimate_grid_flow(nxt, prev, None, **params)
    return field.dense()


def _pair_flows(frames: np.ndarray, flow_params: dict) -> np.ndarray:
    flows = np.empty(frames.shape[:3] + (2,), dtype=np.float32)
    for t in range(frames.shape[0] - 1):
        flows[t] = dense_flow(frames[t], frames[t + 1], **flow_params)
    if frames.shape[0] > 1:
        flows[-1] = flows[-2]
    else:
        flows[-1] = 0.0
    return flows


def split_static_dynamic(frames: np.ndarray, threshold: float = FLOW_THRESHOLD,
                         **flow_params):
    """(static, dynamic) boolean masks, (T, H, W), from per-frame flow.

    A pixel is dynamic at frame t when its flow to frame t+1 exceeds the
    threshold; the last frame inherits the penultimate split.
    """
    flows = _pair_flows(np.asarray(frames, dtype=np.float32), flow_params)
    mag = np.linalg.norm(flows, axis=-1)
    dynamic = mag > threshold
    return ~dynamic, dynamic


def psnr_region(output: np.ndarray, reference: np.ndarray,
                region: np.ndarray | None = None, cap: float = 99.0) -> float | None:
    """PSNR (dB, peak 1.0) over the region; None if the region is empty."""
    if output.shape != reference.shape:
        raise FormatError(f"shape mismatch {output.shape} vs {reference.shape}")
    diff = (output.astype(np.float64) - reference.astype(np.float64)) ** 2
    if region is not None:
        region = np.asarray(region, dtype=bool)
        if not region.any():
            return None
        diff = diff[region]
    mse = float(diff.mean())
    if mse <= 0.0:
        return cap
    return float(min(cap, 10.0 * np.log10(1.0 / mse)))


def flow_epe(output: np.ndarray, reference: np.ndarray,
             region: np.ndarray | None = None, **flow_params) -> float | None:
    """Mean endpoint error between output and reference flow fields.

    Flow is measured between consecutive frames, so only frames 0..T-2
    contribute; the region mask (T, H, W) is truncated accordingly.
    """
    t_total = output.shape[0]
    if t_total < 2:
        return None
    fo = _pair_flows(np.asarray(output, dtype=np.float32), flow_params)[: t_total - 1]
    fr = _pair_flows(np.asarray(reference, dtype=np.float32), flow_params)[: t_total - 1]
    epe = np.linalg.norm(fo - fr, axis=-1)
    if region is not None:
        region = np.asarray(region, dtype=bool)[: t_total - 1]
        if not region.any():
            return None
        epe = epe[region]
    return float(epe.mean())


def ssim(a: np.ndarray, b: np.ndarray, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM on luma with an 11x11 gaussian window (auxiliary metric)."""
    ga = to_gray(a).astype(np.float64) if a.ndim == 3 else a.astype(np.float64)
    gb = to_gray(b).astype(np.float64) if b.ndim == 3 else b.astype(np.float64)
    c1, c2 = k1**2, k2**2
    trunc = 5.0 / sigma  # 11-tap window
    blur = lambda x: gaussian_filter(x, sigma, truncate=trunc, mode="nearest")
    mu_a, mu_b = blur(ga), blur(gb)
    var_a = blur(ga * ga) - mu_a * mu_a
    var_b = blur(gb * gb) - mu_b * mu_b
    cov = blur(ga * gb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def evaluate_completion(output: np.ndarray, gt: np.ndarray, mask: np.ndarray,
                        *, threshold: float = FLOW_THRESHOLD,
                        **flow_params) -> dict:
    """Full metric set for one completed canvas video.

    ``mask`` is the observation mask; metrics cover its complement. The
    static/dynamic split always comes from the ground truth.
    """
    output = np.asarray(output, dtype=np.float32)
    gt = np.asarray(gt, dtype=np.float32)
    mask = np.asarray(mask, dtype=bool)
    if output.shape != gt.shape or mask.shape != output.shape[:3]:
        raise FormatError(
            f"output {output.shape}, ground truth {gt.shape} and mask "
            f"{mask.shape} do not agree"
        )
    hole = ~mask
    static, dynamic = split_static_dynamic(gt, threshold, **flow_params)
    per_frame = [
        psnr_region(output[t], gt[t], hole[t]) for t in range(output.shape[0])
    ]
    metrics = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "psnr": {
            "overall": psnr_region(output, gt, hole),
            "static": psnr_region(output, gt, static & hole),
            "dynamic": psnr_region(output, gt, dynamic & hole),
        },
        "epe": {
            "static": flow_epe(output, gt, static & hole, **flow_params),
            "dynamic": flow_epe(output, gt, dynamic & hole, **flow_params),
        },
        "ssim": float(
            np.mean([ssim(output[t], gt[t]) for t in range(output.shape[0])])
        ),
        "per_frame": {"psnr": per_frame},
        "flow_params": {**DEFAULT_FLOW_PARAMS, **flow_params, "threshold": threshold},
    }
    return metrics


def write_report(report_dir, metrics: dict, output: np.ndarray,
                 mask: np.ndarray, strips: int = 3) -> None:
    """metrics.json plus a few composite strips (input region darkened)."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    t_total = output.shape[0]
    picks = sorted({0, t_total // 2, t_total - 1}) if t_total else []
    for t in picks[: max(0, strips)]:
        viz = np.clip(output[t], 0.0, 1.0).copy()
        viz[mask[t]] *= 0.45
        _write_png(report_dir / f"strip_{t:06d}.png", _quantize(viz, 8))
    log.info("wrote report to %s", report_dir)
