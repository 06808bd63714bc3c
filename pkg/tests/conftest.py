"""Shared fixtures and small builders used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from panovid.backends import BackendDescriptor
from panovid.video_io import CanvasVideo


def small_descriptor(flavor: str = "gaussian", **overrides) -> BackendDescriptor:
    """A descriptor shrunk to toy sizes so tests stay fast."""
    base = dict(
        flavor=flavor,
        context_frames=6,
        native_height=16,
        native_width=16,
        sampling_steps=8,
        sampling_rounds=4,
        vocab_size=16,
        patch_size=4,
        token_frames=1,
    )
    base.update(overrides)
    return BackendDescriptor(**base)


def make_canvas(num_frames: int = 12, height: int = 16, width: int = 32,
                hole: slice = slice(20, 28), seed: int = 0) -> CanvasVideo:
    """Canvas with smooth random frames and a vertical unobserved band."""
    rng = np.random.default_rng(seed)
    frames = rng.random((num_frames, height, width, 3)).astype(np.float32)
    mask = np.ones((num_frames, height, width), dtype=bool)
    mask[:, :, hole] = False
    frames[~mask] = 0.0
    return CanvasVideo(frames=frames, mask=mask, frame_rate=15.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
