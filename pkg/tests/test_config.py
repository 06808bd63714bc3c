"""Config schema, defaults, and the backend factory."""

import json

import numpy as np
import pytest

from panovid.backends import (
    ConstantBackend,
    DiffusionMockBackend,
    InterpolationBackend,
    OracleBackend,
    TokenMockBackend,
)
from panovid.config import (
    backend_flavor,
    load_config,
    make_backend,
    make_settings,
    resolve_config,
    validate_config,
    write_resolved,
)
from panovid.errors import ConfigError


def _doc(**overrides):
    doc = {
        "input": {"canvas": {"video": "in/video", "mask": "in/mask"}},
        "backend": {"kind": "constant"},
        "output": {"dir": "out"},
    }
    doc.update(overrides)
    return doc


# -- validation -----------------------------------------------------------------


def test_minimal_config_validates():
    validate_config(_doc())


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        validate_config(_doc(extra={"x": 1}))
    with pytest.raises(ConfigError):
        validate_config(_doc(pipeline={"warp_mode": "fast"}))


def test_required_sections():
    doc = _doc()
    del doc["input"]
    with pytest.raises(ConfigError):
        validate_config(doc)
    with pytest.raises(ConfigError):
        validate_config({"input": _doc()["input"], "backend": {"kind": "constant"}})


def test_input_is_exactly_one_source():
    doc = _doc()
    doc["input"]["raw"] = {"video": "in/shots"}
    with pytest.raises(ConfigError):
        validate_config(doc)
    with pytest.raises(ConfigError):
        validate_config(_doc(input={}))
    validate_config(_doc(input={"raw": {"video": "in/shots"}}))


def test_enum_and_range_checks():
    with pytest.raises(ConfigError):
        validate_config(_doc(backend={"kind": "psychic"}))
    with pytest.raises(ConfigError):
        validate_config(_doc(pipeline={"mask_mode": "slow"}))
    with pytest.raises(ConfigError):
        validate_config(_doc(seed=-1))
    with pytest.raises(ConfigError):
        validate_config(_doc(backend={"kind": "remote", "port": 70000}))
    with pytest.raises(ConfigError):
        validate_config(_doc(pipeline={"context_frames": 1}))


def test_validation_error_names_the_path():
    with pytest.raises(ConfigError, match="pipeline/mask_mode"):
        validate_config(_doc(pipeline={"mask_mode": "slow"}))


# -- resolution -----------------------------------------------------------------


def test_gaussian_defaults():
    resolved = resolve_config(_doc())
    p = resolved["pipeline"]
    assert p["context_frames"] == 80
    assert (p["native_height"], p["native_width"]) == (128, 128)
    assert p["spatial_stride"] == 32
    assert p["sampling_steps"] == 256
    assert p["mask_mode"] == "standard"
    assert resolved["derived"] == {
        "flavor": "gaussian", "temporal_stride": 40, "temporal_overlap": 40,
    }
    assert resolved["output"]["format"] == "png"


def test_token_defaults():
    resolved = resolve_config(_doc(backend={"kind": "token-mock"}))
    p = resolved["pipeline"]
    assert p["context_frames"] == 11
    assert (p["native_height"], p["native_width"]) == (96, 160)
    assert p["spatial_stride"] == 80
    assert resolved["derived"] == {
        "flavor": "token", "temporal_stride": 6, "temporal_overlap": 5,
    }


def test_pipeline_overrides_beat_defaults():
    resolved = resolve_config(_doc(pipeline={"context_frames": 12, "causal": True}))
    assert resolved["pipeline"]["context_frames"] == 12
    assert resolved["derived"] == {
        "flavor": "gaussian", "temporal_stride": 6, "temporal_overlap": 6,
    }


def test_run_overrides():
    resolved = resolve_config(_doc(seed=7), samples=3, threads=4, output_dir="/tmp/x")
    assert resolved["run"] == {"seed": 7, "samples": 3, "threads": 4}
    assert resolved["output"]["dir"] == "/tmp/x"
    resolved = resolve_config(_doc(seed=7), seed=11)
    assert resolved["run"]["seed"] == 11


def test_oracle_needs_ground_truth():
    with pytest.raises(ConfigError, match="ground_truth"):
        resolve_config(_doc(backend={"kind": "oracle"}))
    resolve_config(_doc(backend={"kind": "oracle"},
                        ground_truth={"video": "gt/video"}))


def test_remote_needs_a_transport():
    with pytest.raises(ConfigError, match="transport"):
        resolve_config(_doc(backend={"kind": "remote"}))
    with pytest.raises(ConfigError, match="host and port"):
        resolve_config(_doc(backend={"kind": "remote", "transport": "tcp"}))
    with pytest.raises(ConfigError, match="command"):
        resolve_config(_doc(backend={"kind": "remote", "transport": "stdio"}))
    resolve_config(_doc(backend={
        "kind": "remote", "transport": "tcp", "host": "127.0.0.1", "port": 9000,
    }))
    resolve_config(_doc(backend={
        "kind": "remote", "transport": "stdio", "command": ["server"],
    }))


def test_backend_flavor():
    assert backend_flavor({"kind": "constant"}) == "gaussian"
    assert backend_flavor({"kind": "token-mock"}) == "token"
    assert backend_flavor({"kind": "remote"}) == "gaussian"
    assert backend_flavor({"kind": "remote", "flavor": "token"}) == "token"


# -- files ----------------------------------------------------------------------


def test_load_config(tmp_path):
    path = tmp_path / "job.json"
    path.write_text(json.dumps(_doc()))
    assert load_config(path) == _doc()
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_write_resolved_roundtrip(tmp_path):
    resolved = resolve_config(_doc())
    write_resolved(resolved, tmp_path / "job")
    loaded = json.loads((tmp_path / "job" / "resolved_config.json").read_text())
    assert loaded == resolved


# -- factories ------------------------------------------------------------------


def test_make_backend_kinds():
    resolved = resolve_config(_doc(backend={"kind": "constant", "mu": 0.25, "var": 0.1}))
    backend = make_backend(resolved)
    assert isinstance(backend, ConstantBackend)
    assert backend.mu == pytest.approx(0.25)
    assert backend.descriptor.context_frames == 80

    resolved = resolve_config(_doc(backend={"kind": "interpolation"}))
    assert isinstance(make_backend(resolved), InterpolationBackend)

    resolved = resolve_config(_doc(backend={"kind": "diffusion-mock"}))
    assert isinstance(make_backend(resolved), DiffusionMockBackend)

    resolved = resolve_config(_doc(backend={"kind": "token-mock", "epsilon": 0.5,
                                            "radius": 1}))
    backend = make_backend(resolved)
    assert isinstance(backend, TokenMockBackend)
    assert backend.epsilon == pytest.approx(0.5)
    assert backend.descriptor.flavor == "token"


def test_make_backend_oracle_needs_frames():
    resolved = resolve_config(_doc(backend={"kind": "oracle"},
                                   ground_truth={"video": "gt/video"}))
    with pytest.raises(ConfigError):
        make_backend(resolved)
    gt = np.zeros((4, 8, 8, 3), dtype=np.float32)
    backend = make_backend(resolved, gt_frames=gt)
    assert isinstance(backend, OracleBackend)


def test_make_settings_causal_semantics():
    resolved = resolve_config(_doc())
    settings = make_settings(resolved)
    assert settings.causal is None  # defer to the backend
    assert settings.weights == "tent"
    assert settings.spatial_stride == 32

    resolved = resolve_config(_doc(pipeline={"causal": True, "align": "flow+color"}))
    settings = make_settings(resolved)
    assert settings.causal is True
    assert settings.align == "flow+color"
