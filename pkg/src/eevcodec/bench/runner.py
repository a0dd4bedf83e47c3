"""Benchmark runner: encode manifest sequences across models and lambdas.

Independent (sequence, model, lambda) jobs run on a bounded process pool;
``EEV_THREADS`` caps its size. Results are written as R-D points, curves
(CSV, JSON, SVG) and, where a sequence lists an anchor curve, BD-rate
reports per model.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bdrate import BDRateError, RDCurve, bd_rate
from .report import aggregate_report, emit_report, parse_curves_csv
from .video_io import load_video

log = logging.getLogger(__name__)

THREADS_ENV = "EEV_THREADS"
POINT_COLUMNS = ("codec", "sequence", "lambda", "bpp", "quality", "psnr", "msssim", "frames", "seconds")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceEntry:
    name: str
    path: str
    format: str
    width: Optional[int] = None
    height: Optional[int] = None
    frames: Optional[int] = None
    class_label: str = ""
    anchor: Optional[str] = None        # CSV of the anchor codec's R-D curve


@dataclass(frozen=True)
class BenchJob:
    sequence: SequenceEntry
    version: str
    lam: int
    metric: str
    arch: str
    weights: Optional[str]
    intra_period: int
    seed: int = 0


def load_manifest(path) -> list:
    """Sequences from a TOML or JSON manifest with a ``sequences`` list."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8")) if path.suffix.lower() == ".toml" else json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    items = data.get("sequences") if isinstance(data, dict) else None
    if not isinstance(items, list) or not items:
        raise ManifestError(f"{path}: expected a non-empty 'sequences' list")
    out = []
    for i, item in enumerate(items):
        missing = [k for k in ("name", "path", "format") if k not in item]
        if missing:
            raise ManifestError(f"{path}: sequence {i} lacks {', '.join(missing)}")
        seq_path = Path(item["path"])
        if not seq_path.is_absolute():
            seq_path = path.parent / seq_path
        anchor = item.get("anchor")
        if anchor and not Path(anchor).is_absolute():
            anchor = str(path.parent / anchor)
        out.append(SequenceEntry(item["name"], str(seq_path), item["format"], item.get("width"),
                                 item.get("height"), item.get("frames"),
                                 str(item.get("class", item.get("class_label", ""))), anchor))
    return out


def worker_count(jobs: int, threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"worker count must be positive, got {threads}")
    return max(1, min(jobs, threads))


def weights_path(weights_dir, version: str, metric: str, lam: int) -> Optional[Path]:
    """``<dir>/<version>_<metric>_<lambda>.eevw`` if it exists."""
    if weights_dir is None:
        return None
    p = Path(weights_dir) / f"{version}_{metric}_{lam}.eevw"
    return p if p.exists() else None


def run_job(job: BenchJob) -> dict:
    from ..nets.weights import WeightStore
    from ..pipeline.codec import CodecModel, encode_video
    from ..pipeline.config import ArchConfig, ModelConfig

    seq = job.sequence
    clip = load_video(seq.path, seq.format, seq.width, seq.height, seq.frames, seq.name, seq.class_label)
    arch = ArchConfig.small() if job.arch == "small" else ArchConfig.full()
    cfg = ModelConfig(version=job.version, lam=job.lam, metric=job.metric, arch=arch,
                      gop_size=job.intra_period, intra_period=job.intra_period)
    model = CodecModel(cfg, seed=job.seed)
    if job.weights:
        WeightStore.from_bytes(Path(job.weights).read_bytes()).load_into(model)
    else:
        log.warning("no weights for %s %s lambda %d; using seeded initialization",
                    job.version, job.metric, job.lam)
    start = time.perf_counter()
    _, stats, point = encode_video(clip.planar(), model)
    psnrs = [s.psnr for s in stats]
    scores = [s.msssim for s in stats]
    return {"codec": job.version, "sequence": seq.name, "lambda": job.lam, "bpp": point.bpp,
            "quality": point.quality, "psnr": sum(psnrs) / len(psnrs),
            "msssim": None if None in scores else sum(scores) / len(scores),
            "frames": len(stats), "seconds": time.perf_counter() - start}


def _write(path: Path, data: bytes) -> Path:
    path.write_bytes(data)
    return path


def run_bench(entries: Sequence[SequenceEntry], versions: Sequence[str], lambdas: Sequence[int],
              report_dir, metric: str = "psnr", arch: str = "full", weights_dir=None,
              intra_period: int = 16, threads: Optional[int] = None) -> dict:
    """Run every job, write reports into ``report_dir`` and return {"points", "curves", "reports"}."""
    out_dir = Path(report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for seq in entries:
        for v in versions:
            for lam in lambdas:
                w = weights_path(weights_dir, v, metric, lam)
                jobs.append(BenchJob(seq, v, int(lam), metric, arch, str(w) if w else None, intra_period))
    workers = worker_count(len(jobs), threads)
    log.info("running %d jobs on %d workers", len(jobs), workers)
    if workers == 1:
        points = [run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run_job, jobs))
    lines = [",".join(POINT_COLUMNS)]
    for p in points:
        lines.append(",".join("" if p[k] is None else repr(p[k]) if isinstance(p[k], float) else str(p[k])
                              for k in POINT_COLUMNS))
    _write(out_dir / "rd_points.csv", ("\n".join(lines) + "\n").encode("utf-8"))

    curves = {}
    for p in points:
        curves.setdefault((p["codec"], p["sequence"]), []).append((p["bpp"], p["quality"]))
    curve_objs = []
    for (codec, seq), pts in curves.items():
        try:
            curve_objs.append(RDCurve(pts, codec, seq))
        except BDRateError as exc:
            log.warning("no R-D curve for %s %s: %s", codec, seq, exc)
    usable = {(c.codec, c.sequence) for c in curve_objs}
    for fmt in ("csv", "json", "svg"):
        _write(out_dir / f"curves.{fmt}", emit_report(curve_objs, fmt))

    reports = {}
    for v in versions:
        per_seq, classes = {}, {}
        for seq in entries:
            if not seq.anchor:
                continue
            anchors = [c for c in parse_curves_csv(Path(seq.anchor).read_bytes()) if c.sequence == seq.name]
            if not anchors:
                log.warning("anchor file %s has no curve for %s", seq.anchor, seq.name)
                continue
            if (v, seq.name) not in usable:
                continue
            try:
                per_seq[seq.name] = bd_rate(anchors[0], RDCurve(curves[(v, seq.name)], v, seq.name))
            except BDRateError as exc:
                log.warning("BD-rate for %s %s skipped: %s", v, seq.name, exc)
                continue
            classes[seq.name] = seq.class_label or "-"
        if per_seq:
            rep = aggregate_report(per_seq, classes, metric=metric, label=f"{v} vs anchor")
            reports[v] = rep
            for fmt in ("csv", "json", "svg"):
                _write(out_dir / f"bdrate_{v}.{fmt}", emit_report(rep, fmt))
    (out_dir / "jobs.json").write_text(json.dumps([asdict(j) for j in jobs], indent=2) + "\n")
    return {"points": points, "curves": curve_objs, "reports": reports}
