"""Layer-wise relevance propagation, channel relevance graphs and k-path
analysis for convolutional networks."""

from ._core import (
    ConfigError,
    LoaderError,
    LrpError,
    Model,
    load_image,
    load_weights,
    mse,
    save_weights,
    smape,
)

__all__ = [
    "ConfigError",
    "LoaderError",
    "LrpError",
    "Model",
    "load_image",
    "load_weights",
    "mse",
    "save_weights",
    "smape",
]
