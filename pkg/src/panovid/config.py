"""Job configuration: schema validation, flavor defaults, backend factory.

A completion job is described by one JSON document. Validation is strict
(unknown keys are errors, so typos fail fast), and every run writes back a
``resolved_config.json`` capturing the defaults and derived values that
actually applied, plus the seed/samples/threads it ran with.

Pipeline defaults depend on the backend flavor:

============== ========== =======
key            gaussian   token
============== ========== =======
context_frames 80         11
native_height  128        96
native_width   128        160
spatial_stride 32         80
============== ========== =======

The temporal stride is always ``context_frames - context_frames // 2``
(windows overlap by half, rounded down), giving overlaps of 40 and 5 frames
respectively; both derived values land in the resolved config.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import jsonschema

from .backends import (
    BackendDescriptor,
    ConstantBackend,
    DiffusionMockBackend,
    InterpolationBackend,
    OracleBackend,
    TokenMockBackend,
)
from .c2f import ALIGN_MODES, MASK_MODES, UPSAMPLE_MODES, RefineSettings
from .errors import ConfigError

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1

BACKEND_KINDS = (
    "constant", "oracle", "interpolation", "diffusion-mock", "token-mock", "remote"
)

FLAVOR_DEFAULTS = {
    "gaussian": {
        "context_frames": 80,
        "native_height": 128,
        "native_width": 128,
        "spatial_stride": 32,
    },
    "token": {
        "context_frames": 11,
        "native_height": 96,
        "native_width": 160,
        "spatial_stride": 80,
    },
}

COMMON_DEFAULTS = {
    "sampling_steps": 256,
    "sampling_rounds": 12,
    "vocab_size": 256,
    "patch_size": 8,
    "token_frames": 1,
    "mask_mode": "standard",
    "weights": "tent",
    "upsample": "linear",
    "align": "none",
    "causal": False,
    "checkpoints": True,
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["input", "backend", "output"],
    "properties": {
        "input": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "canvas": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["video", "mask"],
                    "properties": {
                        "video": {"type": "string"},
                        "mask": {"type": "string"},
                    },
                },
                "raw": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["video"],
                    "properties": {
                        "video": {"type": "string"},
                        "camera": {"type": "string"},
                    },
                },
            },
        },
        "ground_truth": {
            "type": "object",
            "additionalProperties": False,
            "required": ["video"],
            "properties": {"video": {"type": "string"}},
        },
        "backend": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(BACKEND_KINDS)},
                "flavor": {"enum": ["gaussian", "token"]},
                "mu": {"type": "number"},
                "var": {"type": "number", "minimum": 0},
                "var0": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
                "radius": {"type": "integer", "minimum": 1},
                "transport": {"enum": ["tcp", "stdio"]},
                "host": {"type": "string"},
                "port": {"type": "integer", "minimum": 1, "maximum": 65535},
                "command": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "context_frames": {"type": "integer", "minimum": 2},
                "native_height": {"type": "integer", "minimum": 1},
                "native_width": {"type": "integer", "minimum": 1},
                "spatial_stride": {"type": "integer", "minimum": 1},
                "sampling_steps": {"type": "integer", "minimum": 1},
                "sampling_rounds": {"type": "integer", "minimum": 1},
                "vocab_size": {"type": "integer", "minimum": 2},
                "patch_size": {"type": "integer", "minimum": 1},
                "token_frames": {"type": "integer", "minimum": 1},
                "mask_mode": {"enum": list(MASK_MODES)},
                "weights": {"enum": ["tent", "uniform"]},
                "upsample": {"enum": list(UPSAMPLE_MODES)},
                "align": {"enum": list(ALIGN_MODES)},
                "causal": {"type": "boolean"},
                "checkpoints": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dir"],
            "properties": {
                "dir": {"type": "string"},
                "format": {"enum": ["png", "y4m"]},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}")
    return doc


def validate_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}")


def backend_flavor(backend_cfg: dict) -> str:
    kind = backend_cfg["kind"]
    if kind == "token-mock":
        return "token"
    if kind == "remote":
        return backend_cfg.get("flavor", "gaussian")
    return "gaussian"


def resolve_config(doc: dict, *, seed: int | None = None, samples: int = 1,
                   threads: int = 1, output_dir: str | None = None) -> dict:
    """Validate and fill in defaults; returns the resolved document.

    CLI overrides (seed, samples, threads, output dir) are folded in here so
    the resolved config is a complete record of the run.
    """
    validate_config(doc)
    flavor = backend_flavor(doc["backend"])
    pipeline = {**FLAVOR_DEFAULTS[flavor], **COMMON_DEFAULTS, **doc.get("pipeline", {})}
    ctx = pipeline["context_frames"]
    stride_t = ctx - ctx // 2
    resolved = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "input": doc["input"],
        "backend": dict(doc["backend"]),
        "pipeline": pipeline,
        "output": {"format": "png", **doc["output"]},
        "run": {
            "seed": int(doc.get("seed", 0) if seed is None else seed),
            "samples": int(samples),
            "threads": int(threads),
        },
        "derived": {
            "flavor": flavor,
            "temporal_stride": stride_t,
            "temporal_overlap": ctx - stride_t,
        },
    }
    if "ground_truth" in doc:
        resolved["ground_truth"] = doc["ground_truth"]
    if output_dir is not None:
        resolved["output"]["dir"] = str(output_dir)
    if doc["backend"]["kind"] == "oracle" and "ground_truth" not in doc:
        raise ConfigError("oracle backend needs a ground_truth video")
    if doc["backend"]["kind"] == "remote":
        transport = doc["backend"].get("transport")
        if transport == "tcp" and not {"host", "port"} <= doc["backend"].keys():
            raise ConfigError("remote tcp backend needs host and port")
        if transport == "stdio" and "command" not in doc["backend"]:
            raise ConfigError("remote stdio backend needs a command")
        if transport is None:
            raise ConfigError("remote backend needs a transport (tcp or stdio)")
    return resolved


def write_resolved(resolved: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2)
        fh.write("\n")


def make_descriptor(resolved: dict) -> BackendDescriptor:
    p = resolved["pipeline"]
    return BackendDescriptor(
        flavor=resolved["derived"]["flavor"],
        context_frames=p["context_frames"],
        native_height=p["native_height"],
        native_width=p["native_width"],
        causal=p["causal"],
        sampling_steps=p["sampling_steps"],
        sampling_rounds=p["sampling_rounds"],
        vocab_size=p["vocab_size"],
        patch_size=p["patch_size"],
        token_frames=p["token_frames"],
    )


def make_backend(resolved: dict, gt_frames=None):
    """Instantiate the configured backend (fresh, no per-job state)."""
    cfg = resolved["backend"]
    kind = cfg["kind"]
    desc = make_descriptor(resolved)
    if kind == "constant":
        return ConstantBackend(cfg.get("mu", 0.5), cfg.get("var", 0.0), desc)
    if kind == "oracle":
        if gt_frames is None:
            raise ConfigError("oracle backend needs ground-truth frames")
        return OracleBackend(gt_frames, desc)
    if kind == "interpolation":
        return InterpolationBackend(desc, var0=cfg.get("var0", 0.0))
    if kind == "diffusion-mock":
        return DiffusionMockBackend(desc)
    if kind == "token-mock":
        return TokenMockBackend(
            desc, epsilon=cfg.get("epsilon", 0.05), radius=cfg.get("radius", 2)
        )
    if kind == "remote":
        from .remote import connect_stdio, connect_tcp

        if cfg["transport"] == "tcp":
            backend = connect_tcp(cfg["host"], cfg["port"])
        else:
            backend = connect_stdio(cfg["command"])
        if backend.descriptor.flavor != resolved["derived"]["flavor"]:
            raise ConfigError(
                f"remote backend is {backend.descriptor.flavor}-flavor but the "
                f"config says {resolved['derived']['flavor']}"
            )
        return backend
    raise ConfigError(f"unknown backend kind '{kind}'")


def make_settings(resolved: dict) -> RefineSettings:
    p = resolved["pipeline"]
    return RefineSettings(
        spatial_stride=p["spatial_stride"],
        weights=p["weights"],
        upsample=p["upsample"],
        align=p["align"],
        mask_mode=p["mask_mode"],
        # config can force causal passes on; a causal backend stays causal
        causal=True if p["causal"] else None,
        checkpoints=p["checkpoints"],
    )
