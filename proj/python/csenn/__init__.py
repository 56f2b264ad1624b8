"""Python bindings for the csenn C++ core.

torch is imported first so its shared libraries are loaded before the
extension module resolves them.
"""

import torch  # noqa: F401

from ._core import (
    ConfigError,
    DegenerateColumnError,
    SchemaError,
    ShapeError,
    bt_loss,
    concept_correlation,
    cross_correlation,
    discriminator_loss,
    f1_scores,
    format_metric,
    generate,
    mask_image,
    reference_report_csv,
    run_cli,
    scl_loss,
)

__all__ = [
    "ConfigError",
    "DegenerateColumnError",
    "SchemaError",
    "ShapeError",
    "bt_loss",
    "concept_correlation",
    "cross_correlation",
    "discriminator_loss",
    "f1_scores",
    "format_metric",
    "generate",
    "mask_image",
    "reference_report_csv",
    "run_cli",
    "scl_loss",
]
