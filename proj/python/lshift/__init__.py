"""Python access to the lshift C++ core."""

from ._lshift import (
    ConfigError,
    ShapeError,
    captions,
    centroid_probe,
    cli,
    render,
    schedule,
    shift_partition,
    temporal_shift,
    tokenize,
    unet_parameter_count,
)

__all__ = [
    "ConfigError",
    "ShapeError",
    "captions",
    "centroid_probe",
    "cli",
    "render",
    "schedule",
    "shift_partition",
    "temporal_shift",
    "tokenize",
    "unet_parameter_count",
]
