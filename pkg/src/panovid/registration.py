"""Rotational registration of a panning video onto an equirectangular canvas.

Geometry conventions:

* Image coordinates are continuous with the origin at the top-left corner;
  pixel (row i, col j) has its center at (x, y) = (j + 0.5, i + 0.5). The
  principal point defaults to the image center (W/2, H/2).
* World coordinates equal frame-0 camera coordinates: +x right, +y down,
  +z forward (the optical axis). ``rotations[t]`` maps frame-t camera rays
  into world rays.
* Canvas angles: azimuth phi = atan2(x, z) (positive right), elevation
  theta = atan2(-y, hypot(x, z)) (positive up). (0, 0) is frame 0's optical
  axis. Canvas columns sweep phi left to right, rows sweep theta top (max)
  to bottom.

The pairwise homography chain is: detect Harris corners, match by normalized
patch correlation with parabolic sub-pixel refinement, fit with 4-point
RANSAC + normalized DLT on the inliers, then refine by minimizing symmetric
transfer error. Homographies are chained to frame 0 and factored into pure
rotations about the camera center.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage, optimize

from .errors import DegeneracyError, FormatError, RegistrationError
from .imageops import bilinear_sample, to_gray
from .video_io import CanvasVideo, VideoVolume

log = logging.getLogger(__name__)

CAMERA_SCHEMA_VERSION = 1


@dataclass
class CameraModel:
    """Per-frame orientation of a rotating pinhole camera.

    ``mode`` "canvas-crop" describes synthetic benchmarks where frames are
    axis-aligned crops of a flat canvas; ``offsets`` then holds the per-frame
    top-left corner of each crop and ``canvas_size`` the (width, height) of
    the canvas, while all rotations are identity.
    """

    focal_px: float
    principal: tuple[float, float]
    rotations: np.ndarray  # (T, 3, 3)
    mode: str = "rotation"
    offsets: np.ndarray | None = None  # (T, 2) int, canvas-crop mode
    canvas_size: tuple[int, int] | None = None  # (width, height)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[1:] != (3, 3):
            raise FormatError(f"rotations must be (T, 3, 3), got {self.rotations.shape}")
        if self.mode not in ("rotation", "canvas-crop"):
            raise FormatError(f"unknown camera mode '{self.mode}'")
        if self.mode == "canvas-crop":
            if self.offsets is None or self.canvas_size is None:
                raise FormatError("canvas-crop camera needs offsets and canvas_size")
            self.offsets = np.asarray(self.offsets, dtype=np.int64)

    @property
    def num_frames(self) -> int:
        return self.rotations.shape[0]

    def intrinsics(self) -> np.ndarray:
        cx, cy = self.principal
        return np.array(
            [[self.focal_px, 0.0, cx], [0.0, self.focal_px, cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CanvasGeometry:
    """Angular extent and resolution of an equirectangular canvas."""

    phi_min: float
    phi_max: float
    theta_min: float
    theta_max: float
    pixels_per_radian: float

    @property
    def width(self) -> int:
        return max(1, int(round((self.phi_max - self.phi_min) * self.pixels_per_radian)))

    @property
    def height(self) -> int:
        return max(1, int(round((self.theta_max - self.theta_min) * self.pixels_per_radian)))

    def angles_to_canvas(self, phi, theta):
        """Angles -> continuous canvas (x, y), origin at top-left corner."""
        x = (np.asarray(phi) - self.phi_min) * self.pixels_per_radian
        y = (self.theta_max - np.asarray(theta)) * self.pixels_per_radian
        return x, y

    def canvas_to_angles(self, x, y):
        phi = self.phi_min + np.asarray(x) / self.pixels_per_radian
        theta = self.theta_max - np.asarray(y) / self.pixels_per_radian
        return phi, theta


def ray_to_angles(rays: np.ndarray):
    """(..., 3) rays -> (phi, theta)."""
    x, y, z = rays[..., 0], rays[..., 1], rays[..., 2]
    phi = np.arctan2(x, z)
    theta = np.arctan2(-y, np.hypot(x, z))
    return phi, theta


def angles_to_ray(phi, theta) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack(
        [np.cos(theta) * np.sin(phi), -np.sin(theta), np.cos(theta) * np.cos(phi)], axis=-1
    )


# ---------------------------------------------------------------------------
# corner detection and matching


def detect_corners(gray: np.ndarray, max_corners: int = 400, min_distance: int = 8,
                   quality: float = 0.01) -> np.ndarray:
    """Harris corners as (N, 2) float (x, y) pixel centers, strongest first.

    Accepts grayscale or RGB input. Operates on image gradients, so the
    detector is invariant to global brightness offsets.
    """
    gray = np.asarray(gray)
    if gray.ndim == 3:
        gray = to_gray(gray)
    g = gray.astype(np.float64)
    ix = ndimage.sobel(g, axis=1, mode="reflect")
    iy = ndimage.sobel(g, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, 1.5, mode="reflect")
    syy = ndimage.gaussian_filter(iy * iy, 1.5, mode="reflect")
    sxy = ndimage.gaussian_filter(ix * iy, 1.5, mode="reflect")
    response = sxx * syy - sxy * sxy - 0.04 * (sxx + syy) ** 2
    footprint = 2 * min_distance + 1
    local_max = response == ndimage.maximum_filter(response, size=footprint, mode="reflect")
    strong = response > quality * response.max()
    border = min_distance
    keep = np.zeros_like(local_max)
    keep[border:-border, border:-border] = True
    ys, xs = np.nonzero(local_max & strong & keep)
    if len(xs) == 0:
        return np.zeros((0, 2))
    order = np.argsort(response[ys, xs])[::-1][:max_corners]
    # centers of the detected pixels in continuous coordinates
    return np.stack([xs[order] + 0.5, ys[order] + 0.5], axis=1).astype(np.float64)


def _patches(gray: np.ndarray, pts: np.ndarray, half: int) -> np.ndarray:
    """Extract zero-mean, unit-norm patches around integer point locations."""
    h, w = gray.shape
    size = 2 * half + 1
    out = np.zeros((len(pts), size * size))
    offs = np.arange(-half, half + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    for k, (x, y) in enumerate(pts):
        cx = int(np.clip(round(x - 0.5), half, w - 1 - half))
        cy = int(np.clip(round(y - 0.5), half, h - 1 - half))
        patch = gray[cy + oy, cx + ox].astype(np.float64).ravel()
        patch -= patch.mean()
        norm = np.linalg.norm(patch)
        out[k] = patch / norm if norm > 1e-12 else patch
    return out


def _zncc_at(gray_a, gray_b, pa, pb, half):
    """ZNCC between the patch at pa in a and the patch at pb in b (bilinear)."""
    offs = np.arange(-half, half + 1, dtype=np.float64)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    wa, _ = bilinear_sample(gray_a, pa[0] - 0.5 + ox, pa[1] - 0.5 + oy)
    wb, _ = bilinear_sample(gray_b, pb[0] - 0.5 + ox, pb[1] - 0.5 + oy)
    wa = wa - wa.mean()
    wb = wb - wb.mean()
    denom = np.linalg.norm(wa) * np.linalg.norm(wb)
    return float((wa * wb).sum() / denom) if denom > 1e-12 else -1.0


def match_corners(gray_a: np.ndarray, gray_b: np.ndarray, pts_a: np.ndarray,
                  pts_b: np.ndarray, half: int = 5, min_score: float = 0.65):
    """Match corners by normalized patch correlation with cross-check.

    Returns (matched_a, matched_b), both (M, 2), with sub-pixel refinement of
    the matched location in b by parabolic interpolation of the correlation
    surface over +-1 px shifts.
    """
    if len(pts_a) == 0 or len(pts_b) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    da = _patches(gray_a, pts_a, half)
    db = _patches(gray_b, pts_b, half)
    scores = da @ db.T
    best_ab = np.argmax(scores, axis=1)
    best_ba = np.argmax(scores, axis=0)
    out_a, out_b = [], []
    for i, j in enumerate(best_ab):
        if best_ba[j] != i or scores[i, j] < min_score:
            continue
        pb = _refine_match(gray_a, gray_b, pts_a[i], pts_b[j], half)
        out_a.append(pts_a[i])
        out_b.append(pb)
    if not out_a:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return np.array(out_a), np.array(out_b)


def _refine_match(gray_a, gray_b, pa, pb, half):
    """Parabolic sub-pixel refinement of pb on the 3x3 ZNCC surface."""
    s = np.array(
        [[_zncc_at(gray_a, gray_b, pa, pb + (dx, dy), half) for dx in (-1, 0, 1)]
         for dy in (-1, 0, 1)]
    )
    def _peak(sm, s0, sp):
        denom = sm - 2.0 * s0 + sp
        if abs(denom) < 1e-12:
            return 0.0
        return float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))
    dx = _peak(s[1, 0], s[1, 1], s[1, 2])
    dy = _peak(s[0, 1], s[1, 1], s[2, 1])
    return pb + np.array([dx, dy])


# ---------------------------------------------------------------------------
# homography fitting


def _normalize_points(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if dist < 1e-12:
        raise DegeneracyError("all points coincide")
    s = np.sqrt(2.0) / dist
    t = np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1]])
    hom = np.column_stack([pts, np.ones(len(pts))])
    return (hom @ t.T)[:, :2], t


def dlt_homography(pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Normalized DLT estimate of H with pts_b ~ H @ pts_a (H[2,2] = 1)."""
    if len(pts_a) < 4:
        raise DegeneracyError(f"need >= 4 correspondences, got {len(pts_a)}")
    na, ta = _normalize_points(pts_a)
    nb, tb = _normalize_points(pts_b)
    rows = []
    for (x, y), (u, v) in zip(na, nb):
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
    _, s, vt = np.linalg.svd(np.asarray(rows))
    if s[-2] < 1e-10 * s[0]:
        raise DegeneracyError("correspondences are degenerate (rank-deficient system)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tb) @ hn @ ta
    if abs(h[2, 2]) < 1e-12:
        raise DegeneracyError("homography is singular at the origin")
    return h / h[2, 2]


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    hom = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return hom[:, :2] / hom[:, 2:3]


def symmetric_transfer_error(h: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    fwd = apply_homography(h, pts_a) - pts_b
    bwd = apply_homography(np.linalg.inv(h), pts_b) - pts_a
    return np.sqrt((fwd**2).sum(axis=1) + (bwd**2).sum(axis=1))


def refine_homography(h: np.ndarray, pts_a: np.ndarray, pts_b: np.ndarray) -> np.ndarray:
    """Nonlinear refinement of H minimizing symmetric transfer error."""
    hinit = h / h[2, 2]

    def residuals(p):
        hh = np.append(p, 1.0).reshape(3, 3)
        fwd = apply_homography(hh, pts_a) - pts_b
        bwd = apply_homography(np.linalg.inv(hh), pts_b) - pts_a
        return np.concatenate([fwd.ravel(), bwd.ravel()])

    result = optimize.least_squares(residuals, hinit.ravel()[:8], method="lm", max_nfev=200)
    out = np.append(result.x, 1.0).reshape(3, 3)
    return out


def _sample_is_degenerate(pts: np.ndarray) -> bool:
    """True if any 3 of the 4 points are (nearly) collinear."""
    for skip in range(4):
        tri = np.delete(pts, skip, axis=0)
        u, v = tri[1] - tri[0], tri[2] - tri[0]
        if abs(u[0] * v[1] - u[1] * v[0]) < 1e-6:
            return True
    return False


def ransac_homography(pts_a: np.ndarray, pts_b: np.ndarray, threshold: float = 2.0,
                      max_iters: int = 2000, confidence: float = 0.999, seed: int = 0):
    """4-point RANSAC, then normalized DLT + nonlinear refinement on inliers.

    Returns (H, inlier_mask). Raises RegistrationError with too few matches
    and DegeneracyError when no non-degenerate model explains the data.
    """
    n = len(pts_a)
    if n < 8:
        raise RegistrationError(f"only {n} correspondences, need at least 8")
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_count = 0
    iters = max_iters
    i = 0
    while i < iters:
        i += 1
        sample = rng.choice(n, size=4, replace=False)
        if _sample_is_degenerate(pts_a[sample]) or _sample_is_degenerate(pts_b[sample]):
            continue
        try:
            h = dlt_homography(pts_a[sample], pts_b[sample])
        except DegeneracyError:
            continue
        err = symmetric_transfer_error(h, pts_a, pts_b)
        inliers = err < threshold * np.sqrt(2.0)
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            ratio = max(count / n, 1e-9)
            needed = np.log(1.0 - confidence) / np.log(1.0 - ratio**4 + 1e-12)
            iters = min(max_iters, int(np.ceil(needed)) + 1)
    if best_inliers is None or best_count < 8:
        raise DegeneracyError(
            f"RANSAC found no homography supported by >= 8 of {n} matches"
        )
    h = dlt_homography(pts_a[best_inliers], pts_b[best_inliers])
    h = refine_homography(h, pts_a[best_inliers], pts_b[best_inliers])
    err = symmetric_transfer_error(h, pts_a, pts_b)
    inliers = err < threshold * np.sqrt(2.0)
    return h / h[2, 2], inliers


def estimate_homographies(video: VideoVolume, max_corners: int = 400,
                          threshold: float = 2.0, seed: int = 0) -> np.ndarray:
    """Chained homographies H[t] mapping frame-t pixels to frame-0 pixels."""
    frames = video.frames
    t_total = frames.shape[0]
    grays = [to_gray(frames[t]) for t in range(t_total)]
    hs = [np.eye(3)]
    for t in range(t_total - 1):
        ca = detect_corners(grays[t], max_corners=max_corners)
        cb = detect_corners(grays[t + 1], max_corners=max_corners)
        pa, pb = match_corners(grays[t], grays[t + 1], ca, cb)
        if len(pa) < 8:
            raise RegistrationError(
                f"frame pair ({t}, {t + 1}): only {len(pa)} matches, need at least 8"
            )
        try:
            # pairwise maps frame t+1 points into frame t
            h_pair, _ = ransac_homography(pb, pa, threshold=threshold, seed=seed + t)
        except DegeneracyError as exc:
            raise DegeneracyError(f"frame pair ({t}, {t + 1}): {exc}") from exc
        chained = hs[-1] @ h_pair
        hs.append(chained / chained[2, 2])
    return np.stack(hs)


# ---------------------------------------------------------------------------
# rotation decomposition and self-calibration


def decompose_rotation(h: np.ndarray, k: np.ndarray, warn_residual: float = 0.1):
    """Factor H ~ K R K^-1 into the nearest rotation via polar decomposition.

    Returns (R, residual) where residual = ||M/s - R||_F for the
    det-normalized M = K^-1 H K. A residual above ``warn_residual`` logs a
    warning (the homography is not rotation-consistent) but still returns the
    best-fit rotation.
    """
    m = np.linalg.inv(k) @ h @ k
    det = np.linalg.det(m)
    if det <= 0:
        m = -m
        det = -det
    m = m / det ** (1.0 / 3.0)
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    residual = float(np.linalg.norm(m - r))
    if residual > warn_residual:
        log.warning("homography deviates from a pure rotation (residual %.3f)", residual)
    return r, residual


def focal_from_homography(h: np.ndarray, principal: tuple[float, float]):
    """Closed-form focal estimates from one inter-frame rotation homography.

    Standard two-equation self-calibration: with H ~ K R K^-1 and square
    pixels, the first two rows/columns of the principal-point-centered H give
    two independent quadratics in f. Returns the geometric mean of the valid
    estimates, or None when both are ill-conditioned.
    """
    t = np.array([[1, 0, principal[0]], [0, 1, principal[1]], [0, 0, 1.0]])
    m = np.linalg.inv(t) @ h @ t
    m = m / np.cbrt(abs(np.linalg.det(m)))
    h0, h1, h2 = m[0], m[1], m[2]
    est = []
    d1 = h2[0] * h2[1]
    d2 = (h2[1] - h2[0]) * (h2[1] + h2[0])
    v1 = -(h0[0] * h0[1] + h1[0] * h1[1]) / d1 if abs(d1) > 1e-12 else -1.0
    v2 = (h0[0] ** 2 + h1[0] ** 2 - h0[1] ** 2 - h1[1] ** 2) / d2 if abs(d2) > 1e-12 else -1.0
    for v, d in ((v1, d1), (v2, d2)):
        if v > 0 and abs(d) > 1e-12:
            est.append(np.sqrt(v))
    d1 = h0[0] * h1[0] + h0[1] * h1[1]
    d2 = h0[0] ** 2 + h0[1] ** 2 - h1[0] ** 2 - h1[1] ** 2
    v1 = -h0[2] * h1[2] / d1 if abs(d1) > 1e-12 else -1.0
    v2 = (h1[2] ** 2 - h0[2] ** 2) / d2 if abs(d2) > 1e-12 else -1.0
    for v, d in ((v1, d1), (v2, d2)):
        if v > 0 and abs(d) > 1e-12:
            est.append(np.sqrt(v))
    if not est:
        return None
    return float(np.exp(np.mean(np.log(est))))


def estimate_camera(video: VideoVolume, focal_px: float | None = None,
                    max_corners: int = 400, seed: int = 0) -> CameraModel:
    """Full registration: homography chain -> focal -> per-frame rotations."""
    hs = estimate_homographies(video, max_corners=max_corners, seed=seed)
    h_img, w_img = video.frames.shape[1:3]
    principal = (w_img / 2.0, h_img / 2.0)
    if focal_px is None:
        pairwise = [np.linalg.inv(hs[t]) @ hs[t + 1] for t in range(len(hs) - 1)]
        estimates = [focal_from_homography(hp, principal) for hp in pairwise]
        estimates = [f for f in estimates if f is not None and 0.2 * w_img < f < 20 * w_img]
        if estimates:
            focal_px = float(np.median(estimates))
        else:
            log.warning(
                "focal self-calibration is ill-conditioned, falling back to image width"
            )
            focal_px = float(w_img)
    k = np.array([[focal_px, 0, principal[0]], [0, focal_px, principal[1]], [0, 0, 1.0]])
    rotations = []
    for t, h in enumerate(hs):
        r, residual = decompose_rotation(h, k)
        if residual > 0.5:
            log.warning("frame %d: rotation residual %.3f, registration may drift", t, residual)
        rotations.append(r)
    return CameraModel(focal_px=focal_px, principal=principal, rotations=np.stack(rotations))


# ---------------------------------------------------------------------------
# canvas fitting and projection


def _border_points(width: int, height: int, samples_per_edge: int = 16) -> np.ndarray:
    """Continuous points along the image border, corners included."""
    xs = np.linspace(0.0, width, samples_per_edge + 1)
    ys = np.linspace(0.0, height, samples_per_edge + 1)
    top = np.stack([xs, np.zeros_like(xs)], axis=1)
    bottom = np.stack([xs, np.full_like(xs, float(height))], axis=1)
    left = np.stack([np.zeros_like(ys), ys], axis=1)
    right = np.stack([np.full_like(ys, float(width)), ys], axis=1)
    return np.concatenate([top, bottom, left, right])


def auto_fit_canvas(camera: CameraModel, frame_size: tuple[int, int],
                    margin_px: float = 1.0) -> CanvasGeometry:
    """Tight angular bounding box of every frame's footprint, 1 px margin.

    ``frame_size`` is (width, height). The canvas resolution is
    pixels_per_radian = focal_px, which preserves the pixel scale of frame 0
    at the canvas center. Frame borders are sampled (corners plus edge
    samples) so the box covers the full footprint of each frame.
    """
    w_img, h_img = frame_size
    cx, cy = camera.principal
    f = camera.focal_px
    pts = _border_points(w_img, h_img)
    rays = np.stack([(pts[:, 0] - cx) / f, (pts[:, 1] - cy) / f, np.ones(len(pts))], axis=1)
    phis, thetas = [], []
    for rot in camera.rotations:
        world = rays @ rot.T
        phi, theta = ray_to_angles(world)
        phis.append(phi)
        thetas.append(theta)
    phis = np.concatenate(phis)
    thetas = np.concatenate(thetas)
    margin = margin_px / f
    return CanvasGeometry(
        phi_min=float(phis.min() - margin),
        phi_max=float(phis.max() + margin),
        theta_min=float(thetas.min() - margin),
        theta_max=float(thetas.max() + margin),
        pixels_per_radian=float(f),
    )


def project_to_canvas(video: VideoVolume, camera: CameraModel,
                      geom: CanvasGeometry | None = None) -> CanvasVideo:
    """Inverse-warp every frame onto the canvas -> (x^0, m^0).

    Canvas pixels whose ray leaves a frame's field of view (or lacks full
    bilinear support inside the frame, a half-pixel erosion) are masked
    invalid for that frame.
    """
    if camera.num_frames != video.num_frames:
        raise FormatError(
            f"camera has {camera.num_frames} frames, video has {video.num_frames}"
        )
    if camera.mode == "canvas-crop":
        return _paste_crops(video, camera)
    if geom is None:
        geom = auto_fit_canvas(camera, (video.width, video.height))
    hc, wc = geom.height, geom.width
    xg, yg = np.meshgrid(np.arange(wc) + 0.5, np.arange(hc) + 0.5)
    phi, theta = geom.canvas_to_angles(xg, yg)
    rays = angles_to_ray(phi, theta).reshape(-1, 3)
    f = camera.focal_px
    cx, cy = camera.principal
    h_img, w_img = video.height, video.width
    frames_out = np.zeros((video.num_frames, hc, wc, 3), dtype=np.float32)
    mask_out = np.zeros((video.num_frames, hc, wc), dtype=bool)
    for t in range(video.num_frames):
        cam_rays = rays @ camera.rotations[t]  # R^T applied to world rays
        z = cam_rays[:, 2]
        in_front = z > 1e-9
        zs = np.where(in_front, z, 1.0)
        px = f * cam_rays[:, 0] / zs + cx
        py = f * cam_rays[:, 1] / zs + cy
        values, support = bilinear_sample(
            video.frames[t], (px - 0.5).reshape(hc, wc), (py - 0.5).reshape(hc, wc)
        )
        valid = support & in_front.reshape(hc, wc)
        frames_out[t] = np.where(valid[..., None], values, 0.0)
        mask_out[t] = valid
    return CanvasVideo(frames_out, mask_out, frame_rate=video.frame_rate)


def _paste_crops(video: VideoVolume, camera: CameraModel) -> CanvasVideo:
    wc, hc = camera.canvas_size
    t_total, h_img, w_img = video.num_frames, video.height, video.width
    frames_out = np.zeros((t_total, hc, wc, 3), dtype=np.float32)
    mask_out = np.zeros((t_total, hc, wc), dtype=bool)
    for t in range(t_total):
        x0, y0 = int(camera.offsets[t, 0]), int(camera.offsets[t, 1])
        if x0 < 0 or y0 < 0 or x0 + w_img > wc or y0 + h_img > hc:
            raise FormatError(f"frame {t} crop at ({x0}, {y0}) escapes the canvas")
        frames_out[t, y0 : y0 + h_img, x0 : x0 + w_img] = video.frames[t]
        mask_out[t, y0 : y0 + h_img, x0 : x0 + w_img] = True
    return CanvasVideo(frames_out, mask_out, frame_rate=video.frame_rate)


def render_frame(canvas_frame: np.ndarray, camera: CameraModel, geom: CanvasGeometry,
                 t: int, frame_size: tuple[int, int]) -> np.ndarray:
    """Forward-render frame t by sampling the canvas along its pixel rays."""
    w_img, h_img = frame_size
    f = camera.focal_px
    cx, cy = camera.principal
    xg, yg = np.meshgrid(np.arange(w_img) + 0.5, np.arange(h_img) + 0.5)
    rays = np.stack([(xg - cx) / f, (yg - cy) / f, np.ones_like(xg)], axis=-1)
    world = rays.reshape(-1, 3) @ camera.rotations[t].T
    phi, theta = ray_to_angles(world)
    x, y = geom.angles_to_canvas(phi, theta)
    values, _ = bilinear_sample(
        canvas_frame, (x - 0.5).reshape(h_img, w_img), (y - 0.5).reshape(h_img, w_img)
    )
    return values.astype(np.float32)


# ---------------------------------------------------------------------------
# camera path files


def save_camera_path(camera: CameraModel, path) -> None:
    doc = {
        "schema_version": CAMERA_SCHEMA_VERSION,
        "mode": camera.mode,
        "focal_px": float(camera.focal_px),
        "principal": [float(camera.principal[0]), float(camera.principal[1])],
        "frames": [],
    }
    if camera.mode == "canvas-crop":
        doc["canvas"] = {"width": int(camera.canvas_size[0]), "height": int(camera.canvas_size[1])}
    for t in range(camera.num_frames):
        entry = {
            "index": t,
            "rotation_rowmajor_9": [float(v) for v in camera.rotations[t].ravel()],
        }
        if camera.mode == "canvas-crop":
            entry["offset"] = [int(camera.offsets[t, 0]), int(camera.offsets[t, 1])]
        doc["frames"].append(entry)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_camera_path(path) -> CameraModel:
    """Parse a camera path file.

    Rotations that are slightly non-orthonormal (deviation < 0.01) are
    re-orthonormalized with a warning; larger deviations are an error.
    """
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    if "focal_px" not in doc:
        raise FormatError(f"camera path {path} is missing required field 'focal_px'")
    if "frames" not in doc or not doc["frames"]:
        raise FormatError(f"camera path {path} has no frames")
    mode = doc.get("mode", "rotation")
    entries = sorted(doc["frames"], key=lambda e: e["index"])
    rotations = []
    offsets = []
    for entry in entries:
        r = np.asarray(entry["rotation_rowmajor_9"], dtype=np.float64)
        if r.shape != (9,):
            raise FormatError(f"frame {entry.get('index')} rotation must have 9 entries")
        r = r.reshape(3, 3)
        deviation = np.linalg.norm(r @ r.T - np.eye(3))
        if deviation > 1e-6:
            if deviation > 0.01:
                raise FormatError(
                    f"frame {entry['index']} rotation is not orthonormal "
                    f"(deviation {deviation:.2g})"
                )
            log.warning(
                "frame %d rotation re-orthonormalized (deviation %.2g)",
                entry["index"], deviation,
            )
            u, _, vt = np.linalg.svd(r)
            r = u @ vt
        rotations.append(r)
        if mode == "canvas-crop":
            offsets.append(entry.get("offset", [0, 0]))
    principal = tuple(doc.get("principal", [0.0, 0.0]))
    kwargs = {}
    if mode == "canvas-crop":
        canvas = doc.get("canvas")
        if canvas is None:
            raise FormatError(f"canvas-crop camera path {path} is missing 'canvas'")
        kwargs = {
            "offsets": np.asarray(offsets, dtype=np.int64),
            "canvas_size": (int(canvas["width"]), int(canvas["height"])),
        }
    return CameraModel(
        focal_px=float(doc["focal_px"]),
        principal=(float(principal[0]), float(principal[1])),
        rotations=np.stack(rotations),
        mode=mode,
        **kwargs,
    )
