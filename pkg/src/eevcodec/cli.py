"""``eev`` command-line interface."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("eevcodec")


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _versions(text: str) -> list:
    from .pipeline.config import normalize_version

    try:
        return [normalize_version(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _version(text: str) -> str:
    return _versions(text)[0]


def _arch(name: str):
    from .pipeline.config import ArchConfig

    return ArchConfig.small() if name == "small" else ArchConfig.full()


def _intra_backend(args):
    from .pipeline.intra import ExternalIntra, VerbatimIntra

    enc = getattr(args, "intra_cmd", None)
    dec = getattr(args, "intra_decode_cmd", None)
    if enc or dec:
        return ExternalIntra(enc or "", dec)
    return VerbatimIntra()


def _load_weights(model, path) -> None:
    from .nets.weights import WeightStore

    if path:
        WeightStore.from_bytes(Path(path).read_bytes()).load_into(model)
    else:
        log.warning("no --weights given; using seeded initialization")


def _clip_from_args(args):
    from .bench.video_io import load_video

    return load_video(args.input, args.format, args.width, args.height, args.frames)


# -- commands

def cmd_encode(args) -> int:
    from .pipeline.codec import CodecModel, encode_video
    from .pipeline.config import ModelConfig

    clip = _clip_from_args(args)
    cfg = ModelConfig(version=args.model, lam=args.lam, metric=args.metric, gop_size=args.gop,
                      intra_period=args.intra_period, arch=_arch(args.arch))
    model = CodecModel(cfg, seed=args.seed)
    _load_weights(model, args.weights)
    data, stats, point = encode_video(clip.planar(), model, intra_backend=_intra_backend(args))
    Path(args.output).write_bytes(data)
    print(f"{len(stats)} frames {clip.width}x{clip.height} -> {len(data)} bytes, "
          f"{point.bpp:.4f} bpp, mean {point.metric} {point.quality:.4f}")
    return 0


def cmd_decode(args) -> int:
    from .bench.video_io import write_image_sequence, write_raw_rgb24
    from .pipeline.codec import decode_video, model_for_stream

    data = Path(args.input).read_bytes()
    weights = Path(args.weights).read_bytes() if args.weights else None
    if weights is None:
        log.warning("no --weights given; using seeded initialization")
    model = model_for_stream(data, weights, seed=args.seed)
    frames = decode_video(data, model, intra_backend=_intra_backend(args) if args.intra_decode_cmd else None,
                          start=args.start)
    out = Path(args.output)
    if out.suffix.lower() in (".rgb", ".raw"):
        write_raw_rgb24(frames, out)
    else:
        write_image_sequence(frames, out)
    print(f"decoded {len(frames)} frames to {out}")
    return 0


def cmd_bench(args) -> int:
    from .bench.runner import load_manifest, run_bench

    entries = load_manifest(args.manifest)
    result = run_bench(entries, args.models, args.lambdas, args.report, metric=args.metric, arch=args.arch,
                       weights_dir=args.weights_dir, intra_period=args.intra_period, threads=args.threads)
    print(f"{len(result['points'])} R-D points written to {args.report}")
    for version, rep in result["reports"].items():
        print(f"{version}: overall BD-rate {rep.overall:.2f}%")
    return 0


def cmd_bdrate(args) -> int:
    from .bench.bdrate import bd_rate, bd_rate_both
    from .bench.report import aggregate_report, emit_report, parse_curves_csv

    anchors = {c.sequence: c for c in parse_curves_csv(Path(args.anchor).read_bytes())}
    tests = {c.sequence: c for c in parse_curves_csv(Path(args.test).read_bytes())}
    common = sorted(set(anchors) & set(tests))
    if not common:
        print("error: anchor and test share no sequences", file=sys.stderr)
        return 2
    per_seq, notes = {}, []
    for name in common:
        if args.method == "pchip":
            per_seq[name] = bd_rate(anchors[name], tests[name], "pchip")
            continue
        res = bd_rate_both(anchors[name], tests[name])
        per_seq[name] = res["cubic"]
        if "pchip" in res:
            notes.append(f"{name}: PCHIP gives {res['pchip']:.2f}%")
    rep = aggregate_report(per_seq, {n: "-" for n in per_seq}, metric=args.metric)
    sys.stdout.write(emit_report(rep, args.format).decode("utf-8"))
    if args.format == "csv":
        print(f"# overall {rep.overall:.4f}")
    for note in notes:
        print(f"# {note}")
    return 0


def cmd_complexity(args) -> int:
    from .nets.complexity import count_complexity
    from .pipeline.codec import CodecModel
    from .pipeline.config import ModelConfig

    model = CodecModel(ModelConfig(version=args.model, arch=_arch(args.arch)))
    rep = count_complexity(model, args.height, args.width)
    print(rep.format(f"{args.model} ({args.arch})"))
    return 0


def cmd_train_toy(args) -> int:
    from .nets.weights import save_weights
    from .pipeline.config import ModelConfig
    from .pipeline.train import train_toy, translating_clip

    if args.input == "synthetic":
        frames = translating_clip(args.frames or 5, args.width or 64)
    else:
        frames = _clip_from_args(args).planar()
    cfg = ModelConfig(version=args.model, lam=args.lam, arch=_arch(args.arch))
    res = train_toy(frames, cfg, args.steps, args.lr, seed=args.seed)
    for i, v in enumerate(res.losses):
        if i % max(1, args.steps // 10) == 0 or i == len(res.losses) - 1:
            print(f"step {i:5d} loss {v:.6g}")
    print(f"final/initial = {res.final_loss / res.initial_loss:.4f}")
    if args.output:
        Path(args.output).write_bytes(save_weights(res.model))
        print(f"weights written to {args.output}")
    return 0


def cmd_fixtures(args) -> int:
    import csv

    from .bench.fixtures import reference_fixtures

    tables = reference_fixtures()
    t = tables.table(args.table)
    if args.format == "json":
        print(json.dumps(t, indent=2))
    elif args.format == "text":
        sys.stdout.write(tables.format(args.table))
    elif t["kind"] == "complexity":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("model", "macs_per_pixel_m", "params_m", "weight_bits"))
        for name, row in t["rows"].items():
            w.writerow((name, row["macs_per_pixel_m"], row["params_m"], row["weight_bits"]))
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(("class", "sequence") + tables.codecs)
        for s in t["sequences"]:
            w.writerow((s["class"], s["name"]) + tuple(s["bd"]))
    return 0


# -- parser

def _add_video_args(p, required: bool = True) -> None:
    p.add_argument("--input", required=required, help="video file, image directory or glob")
    p.add_argument("--format", default="raw-rgb24", help="raw-rgb24, yuv420 or image-sequence")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--frames", type=int, help="number of frames to read (default: all)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eev", description="Learned video codec toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a video into a bitstream")
    _add_video_args(p)
    p.add_argument("--model", type=_version, default="EEV-0.4")
    p.add_argument("--lambda", dest="lam", type=int, default=2048)
    p.add_argument("--metric", choices=("psnr", "msssim"), default="psnr")
    p.add_argument("--weights")
    p.add_argument("--gop", type=int, default=16)
    p.add_argument("--intra-period", type=int, default=16)
    p.add_argument("--output", required=True)
    p.add_argument("--arch", choices=("full", "small"), default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intra-cmd", help="external intra encoder template ({input.png} {output.bin} {recon.png})")
    p.add_argument("--intra-decode-cmd", help="external intra decoder template ({input.bin} {recon.png})")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream")
    p.add_argument("--input", required=True)
    p.add_argument("--weights")
    p.add_argument("--output", required=True, help="*.rgb / *.raw file or a PNG directory")
    p.add_argument("--start", type=int, default=0, help="first frame (must be intra)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intra-decode-cmd")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench", help="encode manifest sequences over models and lambdas")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", type=_versions, default=_versions("0.1,0.2,0.3,0.4"))
    p.add_argument("--lambdas", type=_int_list, default=[2048, 1024, 512, 256])
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--metric", choices=("psnr", "msssim"), default="psnr")
    p.add_argument("--arch", choices=("full", "small"), default="full")
    p.add_argument("--weights-dir", help="directory of <version>_<metric>_<lambda>.eevw files")
    p.add_argument("--intra-period", type=int, default=16)
    p.add_argument("--threads", type=int, help="worker cap (default: EEV_THREADS or CPU count)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bdrate", help="BD-rate between two R-D curve CSV files")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=("cubic", "pchip"), default="cubic")
    p.add_argument("--metric", default="")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("complexity", help="parameter and MAC counts of a model")
    p.add_argument("--model", type=_version, required=True)
    p.add_argument("--width", type=int, default=1920)
    p.add_argument("--height", type=int, default=1024)
    p.add_argument("--arch", choices=("full", "small"), default="full")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("train-toy", help="short end-to-end training run")
    _add_video_args(p, required=False)
    p.set_defaults(input="synthetic")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--model", type=_version, default="EEV-0.3")
    p.add_argument("--lambda", dest="lam", type=int, default=2048)
    p.add_argument("--arch", choices=("full", "small"), default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="write trained weights here")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("fixtures", help="print reference BD-rate and complexity tables")
    p.add_argument("--table", required=True, help="II, III, IV, V, VII (BD-rate) or VI / VIII (complexity)")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
