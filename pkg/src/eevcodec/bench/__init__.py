"""Video I/O, quality metrics, BD-rate, reports, reference tables and the benchmark runner."""

from .bdrate import BDRateError, RDCurve, bd_rate, bd_rate_both, curves_from_rows
from .fixtures import FixtureError, ReferenceTables, reference_fixtures
from .metrics import ms_ssim, ms_ssim_scales, psnr_rgb
from .report import (
    BDReport,
    ReportError,
    aggregate_report,
    emit_report,
    parse_curves_csv,
    parse_report_csv,
    report_schema,
)
from .runner import ManifestError, SequenceEntry, load_manifest, run_bench, worker_count
from .video_io import VideoClip, VideoFormatError, crop_geometry, load_video, write_image_sequence, write_raw_rgb24

__all__ = [
    "BDRateError", "RDCurve", "bd_rate", "bd_rate_both", "curves_from_rows",
    "FixtureError", "ReferenceTables", "reference_fixtures",
    "ms_ssim", "ms_ssim_scales", "psnr_rgb",
    "BDReport", "ReportError", "aggregate_report", "emit_report", "parse_curves_csv", "parse_report_csv",
    "report_schema",
    "ManifestError", "SequenceEntry", "load_manifest", "run_bench", "worker_count",
    "VideoClip", "VideoFormatError", "crop_geometry", "load_video", "write_image_sequence", "write_raw_rgb24",
]
