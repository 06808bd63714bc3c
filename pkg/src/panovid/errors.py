"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: config/format problems exit 2,
registration failures exit 3, backend failures exit 4.
"""


class PanovidError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class ConfigError(PanovidError):
    """Invalid job configuration (unknown keys, bad values, wrong schema)."""

    exit_code = 2


class FormatError(PanovidError):
    """Malformed or inconsistent on-disk data (videos, masks, camera paths)."""

    exit_code = 2


class RegistrationError(PanovidError):
    """Homography/camera estimation failed for a frame pair."""

    exit_code = 3


class DegeneracyError(RegistrationError):
    """Match configuration too degenerate to fit a homography."""


class BackendError(PanovidError):
    """A generative backend misbehaved (protocol, handshake, timeout)."""

    exit_code = 4
