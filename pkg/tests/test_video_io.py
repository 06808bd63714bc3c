"""On-disk video formats: png directories and y4m streams.

The y4m tests check the writer against a scalar reference implementation of
the BT.601 conversion and 4:2:0 block averaging, written out longhand here so
the two implementations share no code.
"""

import json

import numpy as np
import pytest

from panovid.errors import FormatError
from panovid.video_io import (
    CanvasVideo,
    MaskVolume,
    VideoVolume,
    load_canvas_video,
    load_mask,
    load_video,
    rgb_to_ycbcr,
    save_canvas_video,
    save_mask,
    save_video,
    upsample_chroma_420,
    ycbcr_to_rgb,
)


def _grid_video(num_frames=3, height=4, width=6, bit_depth=8, seed=0):
    """Random frames already on the quantization grid, so io is lossless."""
    rng = np.random.default_rng(seed)
    scale = 255.0 if bit_depth == 8 else 65535.0
    raw = rng.integers(0, int(scale) + 1, size=(num_frames, height, width, 3))
    return VideoVolume(
        (raw / scale).astype(np.float32), frame_rate=15.0, bit_depth=bit_depth
    )


# -- reference y4m writer ----------------------------------------------------


def _reference_y4m_bytes(volume, chroma):
    """Scalar re-derivation of the y4m byte stream."""
    t_total, h, w = volume.frames.shape[:3]
    from fractions import Fraction

    frac = Fraction(volume.frame_rate).limit_denominator(65535)
    tag = "C420jpeg" if chroma == "420" else "C444"
    out = bytearray(
        f"YUV4MPEG2 W{w} H{h} F{frac.numerator}:{frac.denominator} Ip A1:1 {tag}\n".encode()
    )
    for t in range(t_total):
        out += b"FRAME\n"
        ycc = np.empty((h, w, 3))
        for i in range(h):
            for j in range(w):
                r, g, b = (float(c) for c in volume.frames[t, i, j])
                y = 0.299 * r + 0.587 * g + 0.114 * b
                ycc[i, j] = (y, (b - y) / 1.772 + 0.5, (r - y) / 1.402 + 0.5)
        planes = [ycc[:, :, 0]]
        for c in (1, 2):
            plane = ycc[:, :, c]
            if chroma == "420":
                sub = np.empty((h // 2, w // 2))
                for i in range(h // 2):
                    for j in range(w // 2):
                        block = plane[2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                        sub[i, j] = (
                            block[0, 0] + block[0, 1] + block[1, 0] + block[1, 1]
                        ) / 4.0
                plane = sub
            planes.append(plane)
        for plane in planes:
            for v in plane.ravel():
                out.append(int(np.round(min(max(v, 0.0), 1.0) * 255.0)))
    return bytes(out)


# -- png directory -----------------------------------------------------------


def test_png_roundtrip_8bit(tmp_path):
    video = _grid_video(bit_depth=8)
    save_video(video, tmp_path / "v")
    back = load_video(tmp_path / "v")
    np.testing.assert_array_equal(back.frames, video.frames)
    assert back.frame_rate == 15.0
    assert back.bit_depth == 8


def test_png_roundtrip_16bit(tmp_path):
    video = _grid_video(bit_depth=16)
    save_video(video, tmp_path / "v")
    back = load_video(tmp_path / "v")
    np.testing.assert_array_equal(back.frames, video.frames)
    assert back.bit_depth == 16


def test_png_quantizes_off_grid_values(tmp_path):
    frames = np.full((1, 2, 2, 3), 0.5, dtype=np.float32)  # 127.5 rounds to 128
    save_video(VideoVolume(frames), tmp_path / "v")
    back = load_video(tmp_path / "v")
    np.testing.assert_allclose(back.frames, 128.0 / 255.0, atol=1e-7)


def test_load_missing_manifest(tmp_path):
    (tmp_path / "v").mkdir()
    with pytest.raises(FormatError, match="manifest"):
        load_video(tmp_path / "v")


def test_load_manifest_missing_key(tmp_path):
    video = _grid_video()
    save_video(video, tmp_path / "v")
    manifest = json.loads((tmp_path / "v" / "manifest.json").read_text())
    del manifest["frames"]
    (tmp_path / "v" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FormatError, match="frames"):
        load_video(tmp_path / "v")


def test_load_missing_frame_file(tmp_path):
    video = _grid_video()
    save_video(video, tmp_path / "v")
    (tmp_path / "v" / "frame_000001.png").unlink()
    with pytest.raises(FormatError, match="frame"):
        load_video(tmp_path / "v")


def test_load_frame_size_mismatch(tmp_path):
    video = _grid_video()
    save_video(video, tmp_path / "v")
    manifest = json.loads((tmp_path / "v" / "manifest.json").read_text())
    manifest["width"] = 99
    (tmp_path / "v" / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FormatError, match="manifest says"):
        load_video(tmp_path / "v")


def test_frame_rate_override(tmp_path):
    save_video(_grid_video(), tmp_path / "v")
    assert load_video(tmp_path / "v", frame_rate=24.0).frame_rate == 24.0


# -- masks and canvas bundles ------------------------------------------------


def test_mask_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    mask = MaskVolume(rng.random((4, 6, 8)) > 0.5)
    save_mask(mask, tmp_path / "m")
    back = load_mask(tmp_path / "m")
    np.testing.assert_array_equal(back.mask, mask.mask)


def test_mask_nonbinary_warns(tmp_path, caplog):
    mask = MaskVolume(np.ones((1, 2, 2), dtype=bool))
    save_mask(mask, tmp_path / "m")
    import cv2

    arr = np.full((2, 2), 130, dtype=np.uint8)
    cv2.imwrite(str(tmp_path / "m" / "mask_000000.png"), arr)
    with caplog.at_level("WARNING"):
        back = load_mask(tmp_path / "m")
    assert back.mask.all()
    assert any("non-binary" in r.message for r in caplog.records)


def test_canvas_roundtrip(tmp_path):
    video = _grid_video(num_frames=2)
    mask = np.zeros((2, 4, 6), dtype=bool)
    mask[:, :, :3] = True
    canvas = CanvasVideo(video.frames, mask, frame_rate=15.0)
    save_canvas_video(canvas, tmp_path / "c")
    back = load_canvas_video(tmp_path / "c")
    np.testing.assert_array_equal(back.frames, canvas.frames)
    np.testing.assert_array_equal(back.mask, canvas.mask)


def test_canvas_shape_mismatch_rejected():
    with pytest.raises(FormatError, match="mask shape"):
        CanvasVideo(np.zeros((2, 4, 4, 3), np.float32), np.zeros((2, 4, 5), bool))


# -- y4m ---------------------------------------------------------------------


def test_y4m_writer_matches_reference_420(tmp_path):
    video = _grid_video(num_frames=2, height=4, width=6)
    save_video(video, tmp_path / "v.y4m", chroma="420")
    assert (tmp_path / "v.y4m").read_bytes() == _reference_y4m_bytes(video, "420")


def test_y4m_writer_matches_reference_444(tmp_path):
    video = _grid_video(num_frames=2, height=3, width=5)
    save_video(video, tmp_path / "v.y4m", chroma="444")
    assert (tmp_path / "v.y4m").read_bytes() == _reference_y4m_bytes(video, "444")


def test_y4m_write_load_write_is_stable(tmp_path):
    # after one trip through the YCbCr grid the stream is a fixed point
    video = _grid_video(num_frames=2, height=4, width=4, seed=5)
    save_video(video, tmp_path / "a.y4m", chroma="444")
    once = load_video(tmp_path / "a.y4m")
    save_video(once, tmp_path / "b.y4m", chroma="444")
    twice = load_video(tmp_path / "b.y4m")
    np.testing.assert_array_equal(once.frames, twice.frames)


def test_y4m_roundtrip_is_close(tmp_path):
    video = _grid_video(num_frames=2, height=4, width=4, seed=5)
    save_video(video, tmp_path / "v.y4m", chroma="444")
    back = load_video(tmp_path / "v.y4m")
    assert back.frame_rate == pytest.approx(15.0)
    np.testing.assert_allclose(back.frames, video.frames, atol=2.0 / 255.0)


def test_y4m_odd_size_rejected_for_420(tmp_path):
    video = _grid_video(height=3, width=4)
    with pytest.raises(FormatError, match="even"):
        save_video(video, tmp_path / "v.y4m", chroma="420")


def test_y4m_truncated_stream(tmp_path):
    video = _grid_video(num_frames=2, height=4, width=4)
    save_video(video, tmp_path / "v.y4m")
    data = (tmp_path / "v.y4m").read_bytes()
    (tmp_path / "t.y4m").write_bytes(data[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_video(tmp_path / "t.y4m")


def test_y4m_bad_magic(tmp_path):
    (tmp_path / "x.y4m").write_bytes(b"NOTAY4M stream\n")
    with pytest.raises(FormatError, match="YUV4MPEG2"):
        load_video(tmp_path / "x.y4m")


def test_ycbcr_roundtrip_identity():
    rng = np.random.default_rng(2)
    rgb = rng.random((5, 5, 3))
    np.testing.assert_allclose(ycbcr_to_rgb(rgb_to_ycbcr(rgb)), rgb, atol=1e-12)


def test_chroma_upsample_replicates_blocks():
    plane = np.array([[1.0, 2.0], [3.0, 4.0]])
    up = upsample_chroma_420(plane, 4, 4)
    np.testing.assert_array_equal(up[:2, :2], 1.0)
    np.testing.assert_array_equal(up[2:, 2:], 4.0)
    np.testing.assert_array_equal(up[:2, 2:], 2.0)


def test_chroma_upsample_odd_target():
    plane = np.array([[1.0, 2.0], [3.0, 4.0]])
    up = upsample_chroma_420(plane, 3, 3)
    assert up.shape == (3, 3)
    assert up[2, 2] == 4.0


def test_video_volume_validation():
    with pytest.raises(FormatError):
        VideoVolume(np.zeros((2, 4, 4), np.float32))
    with pytest.raises(FormatError):
        VideoVolume(np.zeros((2, 4, 4, 3), np.float32), bit_depth=12)
