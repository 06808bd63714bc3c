"""Window layouts and prediction blending."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panovid.aggregate import (
    aggregate_categorical,
    aggregate_gaussian,
    make_layout,
    stitch_temporal_tokens,
    temporal_layout,
    temporal_ranges,
    tent_weights,
    window_starts,
)
from panovid.errors import ConfigError


def test_window_starts_basic():
    np.testing.assert_array_equal(window_starts(512, 128, 32), np.arange(0, 385, 32))


def test_window_starts_final_right_aligned():
    starts = window_starts(100, 40, 32)
    assert starts[-1] == 60
    np.testing.assert_array_equal(starts, [0, 32, 60])


def test_window_starts_single_window():
    np.testing.assert_array_equal(window_starts(40, 40, 32), [0])


def test_window_starts_validation():
    with pytest.raises(ConfigError):
        window_starts(10, 20, 4)
    with pytest.raises(ConfigError):
        window_starts(20, 10, 0)


def test_tent_weights_quarter_overlap_point():
    # two windows of 8 overlapping by 4: a quarter of the way into the
    # overlap the earlier window still carries 3/4 of the weight
    lefts = np.array([0, 4])
    w = tent_weights(lefts, 8, 12)
    assert w[0, 5] == pytest.approx(0.75, abs=1e-6)
    assert w[1, 5] == pytest.approx(0.25, abs=1e-6)
    assert w[0, 6] == pytest.approx(0.5, abs=1e-6)


def test_tent_weights_flat_outside_overlap():
    lefts = np.array([0, 4])
    w = tent_weights(lefts, 8, 12)
    np.testing.assert_allclose(w[0, :4], 1.0)
    np.testing.assert_allclose(w[1, 8:], 1.0)


def test_uniform_weights_split_evenly():
    lefts = np.array([0, 4])
    w = tent_weights(lefts, 8, 12, mode="uniform")
    np.testing.assert_allclose(w[:, 4:8], 0.5)


@settings(max_examples=60, deadline=None)
@given(
    extent=st.integers(8, 200),
    window=st.integers(2, 64),
    stride=st.integers(1, 64),
    mode=st.sampled_from(["tent", "uniform"]),
)
def test_weights_partition_of_unity(extent, window, stride, mode):
    window = min(window, extent)
    layout = make_layout(extent, window, stride, mode=mode)
    covered = np.zeros(extent, dtype=bool)
    for sl in layout.slices():
        covered[sl] = True
    totals = layout.weights.sum(axis=0)
    np.testing.assert_allclose(totals[covered], 1.0, atol=1e-5)
    np.testing.assert_array_equal(totals[~covered], 0.0)
    if stride <= window:
        assert covered.all()
    for i, sl in enumerate(layout.slices()):
        outside = np.ones(extent, dtype=bool)
        outside[sl] = False
        assert not layout.weights[i, outside].any()


def test_weights_for_matches_profile():
    layout = make_layout(12, 8, 4)
    sl = layout.slices()[1]
    np.testing.assert_array_equal(layout.weights_for(sl), layout.weights[1, sl])


def test_temporal_ranges_eleven_frame_context():
    # an 11-frame context advances by 6, overlapping 5 frames
    ranges = temporal_ranges(22, 11)
    assert ranges == [(0, 11), (6, 17), (11, 22)]


def test_temporal_ranges_short_video():
    assert temporal_ranges(8, 11) == [(0, 8)]
    assert temporal_ranges(11, 11) == [(0, 11)]


def test_temporal_ranges_final_right_aligned():
    ranges = temporal_ranges(25, 11)
    assert ranges[-1] == (14, 25)
    for (lo_a, hi_a), (lo_b, hi_b) in zip(ranges, ranges[1:]):
        assert lo_b < hi_a  # consecutive ranges overlap


def test_temporal_layout_even_context():
    layout = temporal_layout(16, 8)
    np.testing.assert_array_equal(layout.lefts, [0, 4, 8])
    np.testing.assert_allclose(layout.weights.sum(axis=0), 1.0, atol=1e-6)


def test_aggregate_gaussian_blends():
    mus = np.array([[1.0, 1.0], [3.0, 3.0]])
    variances = np.array([[0.5, 0.5], [1.5, 1.5]])
    weights = np.array([[0.75, 0.25], [0.25, 0.75]])
    mu, var = aggregate_gaussian(mus, variances, weights)
    np.testing.assert_allclose(mu, [1.5, 2.5])
    np.testing.assert_allclose(var, [0.75, 1.25])


def test_aggregate_gaussian_identical_members_exact():
    value = np.float32(0.123456)
    mus = np.full((3, 5), value, dtype=np.float32)
    variances = np.zeros((3, 5), dtype=np.float32)
    weights = np.full((3, 5), 1.0 / 3.0, dtype=np.float64)
    weights /= weights.sum(axis=0)
    mu, var = aggregate_gaussian(mus, variances, weights)
    np.testing.assert_array_equal(mu, value)
    np.testing.assert_array_equal(var, 0.0)


def test_aggregate_gaussian_rejects_bad_weights():
    with pytest.raises(ValueError):
        aggregate_gaussian(np.ones((2, 3)), np.ones((2, 3)), np.full((2, 3), 0.3))


def test_aggregate_categorical_renormalizes():
    probs = np.array([[[0.8, 0.2]], [[0.2, 0.8]]])
    weights = np.array([[[0.5]], [[0.5]]])
    out = aggregate_categorical(probs, weights)
    np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-6)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


def test_stitch_temporal_tokens_prefers_earlier_window():
    ranges = [(0, 4), (2, 6)]
    first = np.full((4, 2), 1, dtype=np.int32)
    second = np.full((4, 2), 2, dtype=np.int32)
    out = stitch_temporal_tokens([first, second], ranges)
    np.testing.assert_array_equal(out[:4], 1)
    np.testing.assert_array_equal(out[4:], 2)
