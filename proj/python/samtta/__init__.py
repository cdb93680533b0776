"""Test-time adaptation engine for a miniature promptable segmenter."""

from ._core import (
    DomainError,
    Error,
    FormatError,
    Sbct,
    ShapeError,
    __version__,
    adapt,
    bezier,
    dice,
    generate,
    hd95,
    pearson_r,
    pretrain,
    pretrain_keys,
    read_metrics,
    run_cli,
)

__all__ = [
    "DomainError",
    "Error",
    "FormatError",
    "Sbct",
    "ShapeError",
    "__version__",
    "adapt",
    "bezier",
    "dice",
    "generate",
    "hd95",
    "pearson_r",
    "pretrain",
    "pretrain_keys",
    "read_metrics",
    "run_cli",
]
