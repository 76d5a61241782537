"""Python bindings for the splatfield library."""

from ._core import (
    Bundle,
    Camera,
    Error,
    FormatError,
    IoError,
    NumericError,
    SceneDims,
    ValidationError,
    __version__,
    account_counts,
    adjusted_rand_index,
    combine,
    contrastive,
    gate,
    gate_loss,
    load_cameras,
    prune,
    psnr,
    query,
    render,
    seg_metrics,
    ssim,
    synth,
    version_banner,
)

__all__ = [
    "Bundle",
    "Camera",
    "Error",
    "FormatError",
    "IoError",
    "NumericError",
    "SceneDims",
    "ValidationError",
    "__version__",
    "account_counts",
    "adjusted_rand_index",
    "combine",
    "contrastive",
    "gate",
    "gate_loss",
    "load_cameras",
    "prune",
    "psnr",
    "query",
    "render",
    "seg_metrics",
    "ssim",
    "synth",
    "version_banner",
]
