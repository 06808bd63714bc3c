"""Grid flow estimation, backward warping, and Laplacian color transfer."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from panovid.align import (
    GridFlowField,
    _fill_unsupported,
    align_frame,
    color_align,
    default_band_count,
    estimate_grid_flow,
    laplacian_pyramid,
    reconstruct_laplacian,
    warp_backward,
)
from panovid.errors import ConfigError


def _smooth_texture(height: int, width: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.random((height, width)).astype(np.float32), 2.0)
    img -= img.min()
    img /= img.max()
    return img.astype(np.float32)


def _constant_field(shape, dx, dy, spacing=4) -> GridFlowField:
    gh = (shape[0] - 1) // spacing + 1
    gw = (shape[1] - 1) // spacing + 1
    flow = np.zeros((gh, gw, 2), dtype=np.float32)
    flow[..., 0] = dx
    flow[..., 1] = dy
    return GridFlowField(flow=flow, spacing=spacing, shape=shape)


# -- grid flow estimation ----------------------------------------------------


def test_grid_flow_recovers_constant_shift():
    big = _smooth_texture(83, 114, seed=1)
    src = big[:80, :112]
    dst = big[3:83, 2:114]  # dst(y, x) = src(y + 3, x + 2)
    field = estimate_grid_flow(src, dst, spacing=16)
    assert np.abs(field.flow[..., 0] - 2.0).max() < 0.1
    assert np.abs(field.flow[..., 1] - 3.0).max() < 0.1


def test_grid_flow_identical_inputs_give_exact_zero():
    img = _smooth_texture(48, 64, seed=2)
    field = estimate_grid_flow(img, img)
    assert np.array_equal(field.flow, np.zeros_like(field.flow))


def test_grid_flow_survives_a_hole_in_the_valid_mask():
    big = _smooth_texture(83, 114, seed=3)
    src = big[:80, :112]
    dst = big[3:83, 2:114]
    valid = np.ones((80, 112), dtype=bool)
    valid[24:56, 40:80] = False
    field = estimate_grid_flow(src, dst, valid, spacing=16)
    assert np.abs(field.flow[..., 0] - 2.0).max() < 0.1
    assert np.abs(field.flow[..., 1] - 3.0).max() < 0.1


def test_grid_flow_respects_max_disp():
    big = _smooth_texture(70, 102, seed=4)
    src = big[:64, :96]
    dst = big[6:70, 6:102]
    field = estimate_grid_flow(src, dst, max_disp=2.0)
    assert np.abs(field.flow).max() <= 2.0 + 1e-6


def test_grid_flow_shape_mismatch():
    with pytest.raises(ConfigError):
        estimate_grid_flow(np.zeros((8, 8), np.float32), np.zeros((8, 9), np.float32))


# -- dense interpolation -------------------------------------------------------


def test_dense_interpolates_between_nodes():
    flow = np.zeros((2, 3, 2), dtype=np.float32)
    flow[0, 0] = (1.0, -2.0)
    flow[1, 1] = (3.0, 5.0)
    field = GridFlowField(flow=flow, spacing=4, shape=(5, 9))
    dense = field.dense()
    assert dense.shape == (5, 9, 2)
    assert np.array_equal(dense[0, 0], flow[0, 0])
    assert np.array_equal(dense[4, 4], flow[1, 1])
    assert np.allclose(dense[2, 0], (flow[0, 0] + flow[1, 0]) / 2)
    assert np.allclose(dense[0, 2], (flow[0, 0] + flow[0, 1]) / 2)


def test_dense_clamps_past_the_last_node():
    flow = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
    field = GridFlowField(flow=flow, spacing=4, shape=(6, 10))
    dense = field.dense()
    # pixels beyond the last node row/column take the edge node's value
    assert np.array_equal(dense[5], dense[4])
    assert np.array_equal(dense[:, 9], dense[:, 8])


# -- backward warping ----------------------------------------------------------


def test_warp_backward_samples_at_displaced_positions():
    rng = np.random.default_rng(5)
    frame = rng.random((8, 12, 3)).astype(np.float32)
    field = _constant_field((8, 12), dx=1.0, dy=0.0)
    out, sup = warp_backward(frame, field)
    assert np.allclose(out[:, :-1], frame[:, 1:], atol=1e-6)
    assert sup[:, :-1].all()
    assert not sup[:, -1].any()


def test_warp_backward_mask_is_conservative():
    frame = np.ones((8, 12), dtype=np.float32)
    valid = np.ones((8, 12), dtype=bool)
    valid[:, 6] = False
    field = _constant_field((8, 12), dx=2.0, dy=0.0)
    out, mask = warp_backward(frame, field, valid)
    # x samples x + 2: only x = 4 hits the unobserved column, x >= 10 leaves
    expected = np.ones(12, dtype=bool)
    expected[4] = False
    expected[10:] = False
    assert np.array_equal(mask, np.broadcast_to(expected, (8, 12)))


def test_warp_backward_mask_drops_partial_coverage():
    frame = np.ones((8, 12), dtype=np.float32)
    valid = np.ones((8, 12), dtype=bool)
    valid[:, 6] = False
    field = _constant_field((8, 12), dx=1.5, dy=0.0)
    _, mask = warp_backward(frame, field, valid)
    # x = 4 and 5 sample half a pixel into the unobserved column
    assert mask[:, 3].all()
    assert not mask[:, 4].any()
    assert not mask[:, 5].any()
    assert mask[:, 6].all()


def test_align_frame_identity_is_exact():
    gray = _smooth_texture(48, 64, seed=6)
    img = np.stack([gray, gray * 0.5, 1.0 - gray], axis=-1).astype(np.float32)
    valid = np.ones((48, 64), dtype=bool)
    out, mask = align_frame(img, valid, img)
    assert np.array_equal(out, img)
    assert mask.all()


def test_align_frame_recovers_a_shifted_frame():
    big = _smooth_texture(68, 100, seed=7)
    src = big[:64, :96]
    dst = big[1:65, 3:99]  # dst(y, x) = src(y + 1, x + 3)
    valid = np.ones((64, 96), dtype=bool)
    out, mask = align_frame(src, valid, dst)
    assert mask[4:-4, 4:-8].all()
    assert np.abs(out[mask] - dst[mask]).max() < 0.02


# -- unsupported-node fill -----------------------------------------------------


def test_fill_unsupported_is_identity_when_all_good():
    rng = np.random.default_rng(8)
    flow = rng.normal(size=(3, 4, 2)).astype(np.float32)
    assert _fill_unsupported(flow, np.ones((3, 4), dtype=bool)) is flow


def test_fill_unsupported_all_bad_collapses_to_zero():
    rng = np.random.default_rng(9)
    flow = rng.normal(size=(3, 4, 2)).astype(np.float32)
    out = _fill_unsupported(flow, np.zeros((3, 4), dtype=bool))
    assert np.array_equal(out, np.zeros_like(flow))


def test_fill_unsupported_averages_trusted_neighbors():
    flow = np.zeros((1, 3, 2), dtype=np.float32)
    flow[0, 0] = (2.0, 4.0)
    flow[0, 1] = (99.0, 99.0)  # untrusted junk, must be replaced
    flow[0, 2] = (4.0, 8.0)
    good = np.array([[True, False, True]])
    out = _fill_unsupported(flow, good)
    assert np.array_equal(out[0, 0], flow[0, 0])
    assert np.array_equal(out[0, 2], flow[0, 2])
    assert np.allclose(out[0, 1], (3.0, 6.0))


def test_fill_unsupported_spreads_outward():
    flow = np.zeros((3, 3, 2), dtype=np.float32)
    flow[0, 0] = (5.0, -1.0)
    good = np.zeros((3, 3), dtype=bool)
    good[0, 0] = True
    out = _fill_unsupported(flow, good)
    assert np.allclose(out, np.broadcast_to(np.array([5.0, -1.0], np.float32), (3, 3, 2)))


# -- Laplacian pyramid ---------------------------------------------------------


def test_laplacian_roundtrip_is_exact():
    rng = np.random.default_rng(10)
    img = rng.random((40, 56, 3)).astype(np.float32)
    bands, base = laplacian_pyramid(img, 3)
    assert [b.shape[:2] for b in bands] == [(40, 56), (20, 28), (10, 14)]
    assert base.shape[:2] == (5, 7)
    rec = reconstruct_laplacian(bands, base)
    assert np.allclose(rec, img, atol=1e-5)


def test_laplacian_constant_image_has_empty_bands():
    img = np.full((32, 32), 0.4, dtype=np.float32)
    bands, base = laplacian_pyramid(img, 3)
    for band in bands:
        assert np.abs(band).max() < 1e-6
    assert np.allclose(base, 0.4, atol=1e-6)


def test_laplacian_rejects_too_many_bands():
    img = np.zeros((8, 8), dtype=np.float32)
    laplacian_pyramid(img, 3)
    with pytest.raises(ConfigError):
        laplacian_pyramid(img, 4)


def test_default_band_count():
    assert default_band_count((64, 128)) == 5
    assert default_band_count((128, 64)) == 5
    assert default_band_count((96, 96)) == 5
    assert default_band_count((33, 100)) == 4


# -- color alignment -----------------------------------------------------------


def test_color_align_matches_band_recomposition():
    rng = np.random.default_rng(11)
    src = rng.random((64, 64, 3)).astype(np.float32)
    ref = rng.random((64, 64, 3)).astype(np.float32)
    valid = np.ones((64, 64), dtype=bool)
    n = default_band_count(src.shape)
    bx, _ = laplacian_pyramid(src, n)
    by, base_y = laplacian_pyramid(ref, n)
    expected = reconstruct_laplacian([bx[0], bx[1]] + by[2:], base_y)
    assert np.array_equal(color_align(src, valid, ref), expected)


def test_color_align_removes_a_constant_offset():
    gray = _smooth_texture(64, 64, seed=12) * 0.6 + 0.1
    ref = np.stack([gray, gray, gray], axis=-1).astype(np.float32)
    src = ref + 0.2
    valid = np.ones((64, 64), dtype=bool)
    out = color_align(src, valid, ref)
    assert np.allclose(out, ref, atol=1e-4)


def test_color_align_prefills_invalid_pixels_from_the_reference():
    rng = np.random.default_rng(13)
    ref = np.stack([_smooth_texture(64, 96, seed=s) for s in (14, 15, 16)], axis=-1)
    src = rng.random((64, 96, 3)).astype(np.float32)
    valid = np.zeros((64, 96), dtype=bool)
    valid[:, :48] = True
    out = color_align(src, valid, ref)
    # deep inside the unobserved half only reference content survives
    assert np.allclose(out[:, 72:], ref[:, 72:], atol=1e-3)


def test_color_align_needs_three_bands():
    small = np.zeros((8, 8, 3), dtype=np.float32)
    valid = np.ones((8, 8), dtype=bool)
    with pytest.raises(ConfigError):
        color_align(small, valid, small)  # default band count is 2 here
    big = np.zeros((64, 64, 3), dtype=np.float32)
    with pytest.raises(ConfigError):
        color_align(big, np.ones((64, 64), dtype=bool), big, bands=2)
