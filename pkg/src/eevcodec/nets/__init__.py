"""Learnable sub-networks, weight storage and complexity accounting."""

from .autoencoder import CodecArch, CodecResult, HyperPrior, HyperpriorAutoencoder, mv_codec, residual_codec
from .complexity import REFERENCE_ROWS, ComplexityReport, UnknownLayerKind, count_complexity
from .refine import RAB, ILRNet, MCNet, RefineArch, RefineNet, ilr_filter, mcp_refine
from .weights import (
    MissingWeightError,
    ShapeMismatchError,
    WeightError,
    WeightStore,
    load_weights,
    save_weights,
)

__all__ = [
    "CodecArch", "CodecResult", "HyperPrior", "HyperpriorAutoencoder", "mv_codec", "residual_codec",
    "REFERENCE_ROWS", "ComplexityReport", "UnknownLayerKind", "count_complexity",
    "RAB", "ILRNet", "MCNet", "RefineArch", "RefineNet", "ilr_filter", "mcp_refine",
    "MissingWeightError", "ShapeMismatchError", "WeightError", "WeightStore", "load_weights", "save_weights",
]
