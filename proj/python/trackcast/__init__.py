"""Streaming joint multi-object tracking and trajectory forecasting.

Thin wrapper around the C++ core. The heavy lifting (scene synthesis,
training, streaming inference, evaluation) happens in `trackcast._core`;
this package re-exports it with a stable surface.
"""

from trackcast._core import (  # noqa: F401
    ConfigError,
    DataError,
    NumericError,
    __version__,
    evaluate,
    generate_scenes,
    read_scene,
    sinkhorn,
    track,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "__version__",
    "evaluate",
    "generate_scenes",
    "read_scene",
    "sinkhorn",
    "track",
    "train",
]
