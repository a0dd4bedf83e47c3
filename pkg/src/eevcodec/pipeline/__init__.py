"""Model configuration, frame/sequence coding loops, intra backends and toy training."""

from .codec import (
    GRID,
    TOOL_CALLS,
    CodecModel,
    DecodedPictureBuffer,
    DPBError,
    FrameStats,
    RDPoint,
    VersionMismatchError,
    decode_frame_p,
    decode_video,
    encode_frame_p,
    encode_video,
    intra_indices,
    model_for_stream,
    rd_loss,
    stream_overhead_bits,
)
from .config import (
    ARCH_IDS,
    C2F_VERSIONS,
    METRICS,
    MSSSIM_LAMBDAS,
    PSNR_LAMBDAS,
    TOOL_MATRIX,
    TOOLS,
    VERSIONS,
    ArchConfig,
    ModelConfig,
    normalize_version,
    version_from_id,
)
from .intra import ExternalIntra, IntraBackendError, VerbatimIntra, backend_for_id, from_rgb8, to_rgb8
from .train import TrainResult, train_toy, training_loss, translating_clip

__all__ = [
    "ARCH_IDS", "C2F_VERSIONS", "GRID", "METRICS", "MSSSIM_LAMBDAS", "PSNR_LAMBDAS", "TOOLS", "TOOL_CALLS",
    "TOOL_MATRIX", "VERSIONS", "ArchConfig", "CodecModel", "DPBError", "DecodedPictureBuffer",
    "ExternalIntra", "FrameStats", "IntraBackendError", "ModelConfig", "RDPoint", "TrainResult",
    "VerbatimIntra", "VersionMismatchError", "backend_for_id", "decode_frame_p", "decode_video",
    "encode_frame_p", "encode_video", "from_rgb8", "intra_indices", "model_for_stream",
    "normalize_version", "rd_loss", "stream_overhead_bits", "to_rgb8", "train_toy", "training_loss",
    "translating_clip", "version_from_id",
]
