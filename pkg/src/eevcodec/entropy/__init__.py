"""Quantization, learned priors, range coding and the bitstream container."""

from .container import (
    BadMagicError,
    Bitstream,
    ContainerError,
    CrcError,
    FrameChunk,
    LengthError,
    Payload,
    StreamHeader,
    read_container,
    write_container,
)
from .models import (
    CdfError,
    CdfTable,
    FactorizedPrior,
    GaussianModel,
    LogisticModel,
    UniformModel,
    build_cdf,
    estimate_bits,
    gaussian_likelihood,
    pmf_to_cdf,
    rate_bits,
)
from .quantize import quantize, round_half_away
from .rangecoder import RangeCoderError, SymbolOutOfRange, TruncatedStream, range_decode, range_encode

__all__ = [
    "BadMagicError", "Bitstream", "CdfError", "CdfTable", "ContainerError", "CrcError",
    "FactorizedPrior", "FrameChunk", "GaussianModel", "LengthError", "LogisticModel", "Payload",
    "RangeCoderError", "StreamHeader", "SymbolOutOfRange", "TruncatedStream", "UniformModel",
    "build_cdf", "estimate_bits", "gaussian_likelihood", "pmf_to_cdf", "quantize", "range_decode",
    "range_encode", "rate_bits", "read_container", "round_half_away", "write_container",
]
