"""Panoramic completion of panning videos.

Register a panning clip onto an equirectangular canvas, then synthesize the
unobserved canvas regions with a generative backend, refined coarse-to-fine
in time so arbitrarily long clips stay coherent.
"""

from .backends import (
    BackendDescriptor,
    ConstantBackend,
    DdpmSchedule,
    DiffusionMockBackend,
    GaussianField,
    InterpolationBackend,
    MaskSchedule,
    OracleBackend,
    TokenMockBackend,
    WindowContext,
    ddpm_sample,
    temporal_fill,
    token_iterative_sample,
)
from .bench import make_synthetic
from .c2f import RefineSettings, run_coarse_to_fine
from .complete import (
    complete_base,
    complete_base_causal,
    complete_base_token,
    multidiffusion_gaussian,
)
from .errors import (
    BackendError,
    ConfigError,
    DegeneracyError,
    FormatError,
    PanovidError,
    RegistrationError,
)
from .metrics import evaluate_completion, flow_epe, psnr_region, split_static_dynamic
from .pyramid import TemporalPyramid, build_pyramid
from .registration import (
    CameraModel,
    CanvasGeometry,
    estimate_camera,
    estimate_homographies,
    project_to_canvas,
)
from .video_io import CanvasVideo, MaskVolume, VideoVolume, load_video, save_video

__version__ = "0.1.0"

__all__ = [
    "BackendDescriptor",
    "BackendError",
    "CameraModel",
    "CanvasGeometry",
    "CanvasVideo",
    "ConfigError",
    "ConstantBackend",
    "DdpmSchedule",
    "DegeneracyError",
    "DiffusionMockBackend",
    "FormatError",
    "GaussianField",
    "InterpolationBackend",
    "MaskSchedule",
    "MaskVolume",
    "OracleBackend",
    "PanovidError",
    "RefineSettings",
    "RegistrationError",
    "TemporalPyramid",
    "TokenMockBackend",
    "VideoVolume",
    "WindowContext",
    "build_pyramid",
    "complete_base",
    "complete_base_causal",
    "complete_base_token",
    "ddpm_sample",
    "estimate_camera",
    "estimate_homographies",
    "evaluate_completion",
    "flow_epe",
    "load_video",
    "make_synthetic",
    "multidiffusion_gaussian",
    "project_to_canvas",
    "psnr_region",
    "run_coarse_to_fine",
    "save_video",
    "split_static_dynamic",
    "temporal_fill",
    "token_iterative_sample",
    "__version__",
]
