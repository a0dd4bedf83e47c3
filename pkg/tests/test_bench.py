"""Video I/O, metrics, BD-rate, reports, reference tables and the bench runner."""

import csv
import io
import json
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image
from pytorch_msssim import ms_ssim as torch_ms_ssim
from scipy.ndimage import gaussian_filter

from eevcodec.bench import (
    BDRateError,
    ManifestError,
    RDCurve,
    ReportError,
    VideoFormatError,
    aggregate_report,
    bd_rate,
    bd_rate_both,
    crop_geometry,
    emit_report,
    load_manifest,
    load_video,
    ms_ssim,
    ms_ssim_scales,
    parse_curves_csv,
    parse_report_csv,
    psnr_rgb,
    reference_fixtures,
    report_schema,
    run_bench,
    worker_count,
    write_image_sequence,
    write_raw_rgb24,
)
from eevcodec.bench.fixtures import FixtureError
from eevcodec.nets.weights import save_weights
from eevcodec.pipeline import ArchConfig, CodecModel, ModelConfig


def _natural(seed, h=64, w=64):
    """Smoothed multi-scale noise, 8-bit valued."""
    rng = np.random.default_rng(seed)
    img = np.zeros((h, w, 3))
    for sigma, amp in ((8, 1.0), (3, 0.5), (1, 0.25)):
        img += amp * gaussian_filter(rng.normal(size=(h, w, 3)), (sigma, sigma, 0))
    img = (img - img.min()) / (img.max() - img.min())
    return np.round(img * 255).astype(np.uint8)


# -- video I/O

def test_raw_rgb24_round_trip(tmp_path):
    frames = [_natural(i) for i in range(3)]
    write_raw_rgb24(frames, tmp_path / "a.rgb")
    clip = load_video(tmp_path / "a.rgb", "raw-rgb24", 64, 64)
    assert len(clip) == 3 and (clip.width, clip.height) == (64, 64)
    for a, b in zip(frames, clip.frames):
        assert np.array_equal(a, b)
    assert clip.planar().shape == (3, 3, 64, 64)
    assert len(load_video(tmp_path / "a.rgb", "rgb24", 64, 64, count=2)) == 2


def _yuv_oracle(y, u, v):
    """Invert the forward full-range BT.601 matrix pixel by pixel."""
    fwd = np.array([[0.299, 0.587, 0.114],
                    [-0.299 / 1.772, -0.587 / 1.772, 0.886 / 1.772],
                    [0.701 / 1.402, -0.587 / 1.402, -0.114 / 1.402]])
    inv = np.linalg.inv(fwd)
    h, w = y.shape
    out = np.zeros((h, w, 3), np.uint8)
    for i in range(h):
        for j in range(w):
            ycc = np.array([y[i, j], u[i // 2, j // 2] - 128.0, v[i // 2, j // 2] - 128.0])
            out[i, j] = np.clip(np.round(inv @ ycc), 0, 255)
    return out


def test_yuv420_matches_independent_conversion(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    u = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    v = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    (tmp_path / "a.yuv").write_bytes(y.tobytes() + u.tobytes() + v.tobytes())
    clip = load_video(tmp_path / "a.yuv", "yuv420-8bit", 64, 64, 1)
    diff = np.abs(clip.frames[0].astype(int) - _yuv_oracle(y, u, v).astype(int))
    assert diff.max() <= 1 and np.mean(diff == 0) > 0.99


def test_yuv420_grey_maps_to_grey(tmp_path):
    data = bytes([77]) * 64 * 64 + bytes([128]) * 32 * 32 * 2
    (tmp_path / "g.yuv").write_bytes(data)
    clip = load_video(tmp_path / "g.yuv", "yuv420", 64, 64)
    assert np.all(clip.frames[0] == 77)


def test_image_sequence_dir_and_glob(tmp_path):
    frames = [_natural(i, 64, 128) for i in range(2)]
    write_image_sequence(frames, tmp_path / "seq")
    Image.fromarray(frames[0]).save(tmp_path / "seq" / "zz_other.bmp")
    clip = load_video(tmp_path / "seq" / "frame_*.png", "image-sequence")
    assert (clip.width, clip.height) == (128, 64)
    assert all(np.array_equal(a, b) for a, b in zip(frames, clip.frames))
    assert len(load_video(tmp_path / "seq", "image-sequence")) == 3
    with pytest.raises(VideoFormatError, match="expected 5 images"):
        load_video(tmp_path / "seq", "image-sequence", count=5)


def test_center_crop_100x70(tmp_path):
    assert crop_geometry(100, 70) == (64, 64, 18, 3)
    frame = np.arange(70 * 100 * 3, dtype=np.uint32).reshape(70, 100, 3).astype(np.uint8)
    write_raw_rgb24([frame], tmp_path / "c.rgb")
    clip = load_video(tmp_path / "c.rgb", "raw-rgb24", 100, 70, 1)
    assert np.array_equal(clip.frames[0], frame[3:67, 18:82])


def test_large_aligned_frame_is_not_cropped():
    assert crop_geometry(2688, 1472) == (2688, 1472, 0, 0)


@given(st.integers(64, 4000), st.integers(64, 4000))
def test_crop_invariants(w, h):
    nw, nh, ox, oy = crop_geometry(w, h)
    assert nw % 64 == 0 and nh % 64 == 0 and nw * nh <= w * h
    assert 0 <= ox < 64 and 0 <= oy < 64 and ox + nw <= w and oy + nh <= h


def test_load_errors(tmp_path):
    write_raw_rgb24([_natural(0)] * 2, tmp_path / "t.rgb")
    with pytest.raises(VideoFormatError, match=r"expected 36864 bytes, found 24576"):
        load_video(tmp_path / "t.rgb", "raw-rgb24", 64, 64, 3)
    with pytest.raises(VideoFormatError, match="at least 64x64"):
        load_video(tmp_path / "t.rgb", "raw-rgb24", 32, 96)
    with pytest.raises(VideoFormatError, match="unknown video format"):
        load_video(tmp_path / "t.rgb", "mp4", 64, 64)
    with pytest.raises(VideoFormatError, match="width and height"):
        load_video(tmp_path / "t.rgb", "raw-rgb24")
    with pytest.raises(VideoFormatError, match="even"):
        load_video(tmp_path / "t.rgb", "yuv420", 65, 64)


# -- metrics

def test_psnr_closed_forms():
    a = np.full((8, 8, 3), 100, np.uint8)
    assert psnr_rgb(a, a) == 100.0
    assert psnr_rgb(a, a + 16) == pytest.approx(10 * np.log10(65025 / 256), abs=1e-9)
    assert psnr_rgb(a, a + 16) == pytest.approx(24.048, abs=5e-4)
    assert psnr_rgb(np.zeros_like(a), np.full_like(a, 255)) == 0.0
    with pytest.raises(ValueError):
        psnr_rgb(a, a[:4])


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25)
def test_psnr_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 256, (2, 6, 5, 3))
    assert psnr_rgb(a, b) == psnr_rgb(b, a)


def test_ms_ssim_self_and_inverted():
    img = _natural(1, 192, 192)
    assert ms_ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    assert ms_ssim(img, img, mode="luma") == pytest.approx(1.0, abs=1e-12)
    assert ms_ssim(img, 255 - img) < 0.3


def test_ms_ssim_matches_reference_implementation():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        a = _natural(seed, 192, 208).astype(np.float64)
        b = np.clip(gaussian_filter(a, (seed % 3, seed % 3, 0)) + rng.normal(scale=2 + 3 * seed, size=a.shape), 0, 255)
        ref = torch_ms_ssim(torch.from_numpy(a.transpose(2, 0, 1)[None].copy()),
                            torch.from_numpy(b.transpose(2, 0, 1)[None].copy()), data_range=255.0).item()
        worst = max(worst, abs(ms_ssim(a, b) - ref))
    assert worst < 1e-4


def test_ms_ssim_scale_fallback():
    assert ms_ssim_scales(176, 176) == 5
    assert ms_ssim_scales(175, 300) == 4
    assert ms_ssim_scales(64, 64) == 3
    assert ms_ssim_scales(11, 11) == 1
    with pytest.raises(ValueError):
        ms_ssim_scales(10, 64)
    a, b = _natural(2), _natural(3)
    assert 0.0 <= ms_ssim(a, b) < 1.0
    with pytest.raises(ValueError):
        ms_ssim(a, b, mode="yuv")


# -- BD-rate

ANCHOR = [(0.1, 30.0), (0.2, 33.0), (0.4, 36.0), (0.8, 38.5)]


def _scaled(points, k):
    return [(r * k, q) for r, q in points]


def test_bd_rate_oracle():
    assert bd_rate(ANCHOR, ANCHOR) == 0.0
    assert bd_rate(ANCHOR, _scaled(ANCHOR, 0.9)) == pytest.approx(-10.0, abs=0.01)
    assert bd_rate(ANCHOR, _scaled(ANCHOR, 2.0)) == pytest.approx(100.0, abs=0.1)
    assert bd_rate(ANCHOR, _scaled(ANCHOR, 0.9), "pchip") == pytest.approx(-10.0, abs=1e-9)


def test_bd_rate_sign_convention():
    better = [(r * (0.5 + 0.1 * i), q) for i, (r, q) in enumerate(ANCHOR)]
    assert bd_rate(ANCHOR, better) < 0
    assert bd_rate(better, ANCHOR) > 0


def test_bd_rate_errors():
    with pytest.raises(BDRateError, match="at least 4"):
        bd_rate(ANCHOR[:3], ANCHOR)
    with pytest.raises(BDRateError, match="overlap"):
        bd_rate(ANCHOR, [(r, q + 20) for r, q in ANCHOR])
    with pytest.raises(BDRateError, match="distinct"):
        RDCurve([(0.1, 30), (0.1, 31)])
    with pytest.raises(BDRateError, match="positive"):
        RDCurve([(0.0, 30)])
    with pytest.raises(BDRateError):
        bd_rate(ANCHOR, ANCHOR, "linear")


def test_non_monotone_quality_warns():
    with pytest.warns(RuntimeWarning, match="quality decreases"):
        RDCurve([(0.1, 31.0), (0.2, 30.0)], "x", "s")


def test_bd_rate_both_reports_pchip_only_when_far():
    assert set(bd_rate_both(ANCHOR, _scaled(ANCHOR, 0.9))) == {"cubic"}
    wavy = [(0.1, 30.0), (0.11, 36.0), (0.7, 36.5), (0.8, 38.5)]
    res = bd_rate_both(ANCHOR, wavy)
    assert "pchip" in res and abs(res["pchip"] - res["cubic"]) > 0.5


_curve_points = st.lists(st.tuples(st.floats(0.01, 2.0), st.floats(0.05, 3.0)), min_size=4, max_size=7).map(
    lambda steps: list(zip(np.cumsum([s[0] for s in steps]), 25 + np.cumsum([s[1] for s in steps]))))


@given(_curve_points, st.floats(0.2, 5.0))
def test_bd_rate_properties(points, k):
    assert bd_rate(points, points) == 0.0
    assert bd_rate(points, _scaled(points, k)) == pytest.approx(100 * (k - 1), abs=1e-4)


# -- reports

CLASS_A = {"BasketballGround": -49.23, "GrassLand": -70.38, "Intersection": -71.72,
           "NightMall": -61.60, "SoccerGround": -66.36}


def test_aggregate_class_mean():
    rep = aggregate_report(CLASS_A, {n: "A" for n in CLASS_A}, metric="msssim")
    assert rep.class_means["A"] == pytest.approx(-63.858, abs=1e-9)
    assert round(rep.class_means["A"], 2) == -63.86
    single = aggregate_report({"x": -12.5}, {"x": "B"})
    assert single.class_means == {"B": -12.5} and single.overall == -12.5
    with pytest.raises(ReportError):
        aggregate_report({"x": 1.0}, {})
    with pytest.raises(ReportError):
        aggregate_report({"x": 1.0}, {"x": "A"}, overall_mode="median")


def test_uav_overall_from_fixtures():
    rep = reference_fixtures().report("II", "EEV-0.4")
    assert rep.class_means["A"] == pytest.approx(-63.86, abs=0.01)
    assert rep.overall == pytest.approx(-63.61, abs=0.01)


def _sample_report():
    per = {"Zeta": -3.25, "Alpha": 1.5, "Mid": -0.1 + 0.2, "Other": -7.0}
    return aggregate_report(per, {"Zeta": "A", "Alpha": "B", "Mid": "A", "Other": "UVG"}, metric="psnr",
                            label="test")


def test_report_csv_round_trip_is_byte_identical():
    rep = _sample_report()
    data = emit_report(rep, "csv")
    assert emit_report(parse_report_csv(data), "csv") == data
    rows = list(csv.reader(io.StringIO(data.decode())))
    assert [r[1:3] for r in rows[1:]] == [["A", "Mid"], ["A", "Zeta"], ["B", "Alpha"], ["UVG", "Other"]]


def test_empty_report_is_header_only():
    assert emit_report(aggregate_report({}, {}), "csv") == b"metric,class,sequence,bd_rate\n"


def test_report_json_validates_against_schema():
    schema = report_schema()
    doc = json.loads(emit_report(_sample_report(), "json"))
    jsonschema.validate(doc, schema)
    assert doc["overall"] == pytest.approx(np.mean([-3.25, 1.5, 0.1, -7.0]))
    curves = [RDCurve(ANCHOR, "HEVC", "s1"), RDCurve(_scaled(ANCHOR, 0.9), "EEV-0.4", "s1")]
    jsonschema.validate(json.loads(emit_report(curves, "json")), schema)
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"kind": "bd-report"}, schema)


def test_svg_outputs_are_well_formed_and_deterministic():
    curves = [RDCurve(ANCHOR, "HEVC", "s1"), RDCurve(_scaled(ANCHOR, 0.9), "EEV-0.4", "s1")]
    for obj in (_sample_report(), curves):
        data = emit_report(obj, "svg")
        root = ET.fromstring(data)
        assert root.tag.endswith("svg")
        assert emit_report(obj, "svg") == data
    assert len(ET.fromstring(emit_report(curves, "svg")).findall("{http://www.w3.org/2000/svg}polyline")) == 2
    with pytest.raises(ReportError):
        emit_report(curves, "png")


def test_curves_csv_round_trip():
    curves = [RDCurve(ANCHOR, "HEVC", "s1"), RDCurve(_scaled(ANCHOR, 0.9), "EEV-0.4", "s2")]
    data = emit_report(curves, "csv")
    back = parse_curves_csv(data)
    assert emit_report(back, "csv") == data
    assert {(c.codec, c.sequence) for c in back} == {("HEVC", "s1"), ("EEV-0.4", "s2")}
    with pytest.raises(ReportError):
        parse_curves_csv(b"a,b\n1,2\n")


# -- reference tables

def test_fixture_lookups():
    fx = reference_fixtures()
    assert fx.lookup("II", "EEV-0.4", "GrassLand", "ms-ssim") == -70.38
    assert fx.lookup("III", "VVC", "Elevator", "psnr") == -40.16
    assert fx.lookup("VIII", "EEV-0.4", "params") == 23.96
    assert fx.lookup("VIII", "EEV-0.1", "macs") == 0.678
    assert fx.lookup("VI", "EEV-0.3", "macs") == 2.021
    assert fx.lookup("VIII", "EEV-0.4", "macs") == 3.127
    assert fx.cells()[("II", "EEV-0.4", "GrassLand", "msssim")] == -70.38
    for args in (("II", "EEV-0.4", "Nowhere"), ("IX", "EEV-0.4", "GrassLand"), ("II", "BPG", "GrassLand"),
                 ("II", "EEV-0.4", "GrassLand", "psnr"), ("VIII", "EEV-0.4", "latency")):
        with pytest.raises(FixtureError):
            fx.lookup(*args)


def test_fixture_aggregation_reproduces_every_printed_row():
    fx = reference_fixtures()
    checked = 0
    for tid in fx.bd_ids:
        for codec in fx.codecs:
            printed = fx.printed(tid, codec)
            for name, value in printed["averages"].items():
                rep = fx.report(tid, codec, name)
                assert rep.overall == pytest.approx(value, abs=0.01), (tid, codec, name)
                for cls, mean in printed["class_means"].items():
                    assert rep.class_means[cls] == pytest.approx(mean, abs=0.01), (tid, codec, cls)
                    checked += 1
    assert checked > 100
    assert fx.report("II", "EEV-0.4").class_means["C"] == pytest.approx(-71.99, abs=0.01)
    assert fx.report("III", "EEV-0.4").overall == pytest.approx(-39.72, abs=0.01)


def test_fixture_text_rendering():
    fx = reference_fixtures()
    assert "GrassLand" in fx.format("II") and "23.96" in fx.format("VIII")
    with pytest.raises(FixtureError):
        fx.report("VIII", "EEV-0.4")


# -- runner

def test_load_manifest_toml_and_json(tmp_path):
    (tmp_path / "m.toml").write_text(
        '[[sequences]]\nname = "a"\npath = "a.rgb"\nformat = "raw-rgb24"\nwidth = 64\nheight = 64\n'
        'frames = 2\nclass = "A"\nanchor = "anchor.csv"\n')
    (entry,) = load_manifest(tmp_path / "m.toml")
    assert entry.path == str(tmp_path / "a.rgb") and entry.class_label == "A"
    assert entry.anchor == str(tmp_path / "anchor.csv") and entry.frames == 2
    (tmp_path / "m.json").write_text(json.dumps({"sequences": [{"name": "b", "path": "/x/b.yuv", "format": "yuv420"}]}))
    (entry,) = load_manifest(tmp_path / "m.json")
    assert entry.path == "/x/b.yuv" and entry.class_label == ""
    (tmp_path / "bad.json").write_text(json.dumps({"sequences": [{"name": "b"}]}))
    with pytest.raises(ManifestError, match="lacks path, format"):
        load_manifest(tmp_path / "bad.json")
    (tmp_path / "empty.toml").write_text("title = 1\n")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "empty.toml")


def test_worker_count(monkeypatch):
    monkeypatch.setenv("EEV_THREADS", "3")
    assert worker_count(10) == 3
    assert worker_count(2) == 2
    assert worker_count(10, threads=5) == 5
    monkeypatch.setenv("EEV_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count(4)
    monkeypatch.delenv("EEV_THREADS")
    assert worker_count(1) == 1
    with pytest.raises(ValueError):
        worker_count(4, threads=0)


LAMBDAS = (2048, 1024, 512, 256)


def _bench_setup(tmp_path):
    write_raw_rgb24([_natural(i) for i in range(2)], tmp_path / "clip.rgb")
    wdir = tmp_path / "weights"
    wdir.mkdir()
    for i, lam in enumerate(LAMBDAS):
        model = CodecModel(ModelConfig(version="EEV-0.1", arch=ArchConfig.small()), seed=0)
        rng = np.random.default_rng(i)
        for p in model.parameters():
            p.data = (p.data + rng.normal(scale=0.02, size=p.shape)).astype(np.float32)
        (wdir / f"EEV-0.1_psnr_{lam}.eevw").write_bytes(save_weights(model))
    return wdir


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_bench_writes_reports_and_bd_against_anchor(tmp_path):
    wdir = _bench_setup(tmp_path)
    manifest = tmp_path / "m.toml"
    manifest.write_text('[[sequences]]\nname = "clip"\npath = "clip.rgb"\nformat = "raw-rgb24"\n'
                        'width = 64\nheight = 64\nframes = 2\nclass = "A"\nanchor = "anchor.csv"\n')
    entries = load_manifest(manifest)
    first = run_bench([e.__class__(**{**e.__dict__, "anchor": None}) for e in entries], ["EEV-0.1"], LAMBDAS,
                      tmp_path / "r1", arch="small", weights_dir=wdir, threads=1)
    assert len(first["points"]) == 4 and not first["reports"]
    (curve,) = first["curves"]
    assert len(set(curve.rates)) == 4
    # anchor spends twice the rate for the same qualities
    anchor = RDCurve(_scaled(curve.points, 2.0), "HEVC", "clip")
    (tmp_path / "anchor.csv").write_bytes(emit_report([anchor], "csv"))
    res = run_bench(entries, ["EEV-0.1"], LAMBDAS, tmp_path / "r2", arch="small", weights_dir=wdir, threads=1)
    rep = res["reports"]["EEV-0.1"]
    assert rep.value("clip") == pytest.approx(-50.0, abs=1e-6)
    names = {p.name for p in (tmp_path / "r2").iterdir()}
    assert {"rd_points.csv", "curves.csv", "curves.json", "curves.svg", "jobs.json",
            "bdrate_EEV-0.1.csv", "bdrate_EEV-0.1.json", "bdrate_EEV-0.1.svg"} <= names
    jsonschema.validate(json.loads((tmp_path / "r2" / "bdrate_EEV-0.1.json").read_text()), report_schema())
    rows = list(csv.DictReader(open(tmp_path / "r2" / "rd_points.csv")))
    assert [int(r["lambda"]) for r in rows] == list(LAMBDAS) and all(r["frames"] == "2" for r in rows)


def test_run_bench_without_weights_skips_degenerate_curve(tmp_path, caplog):
    write_raw_rgb24([_natural(0)], tmp_path / "clip.rgb")
    entries = load_manifest(_write_json_manifest(tmp_path))
    res = run_bench(entries, ["EEV-0.2"], (512, 256), tmp_path / "r", arch="small", threads=1)
    assert len(res["points"]) == 2 and res["curves"] == []
    assert "no R-D curve" in caplog.text


def _write_json_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"sequences": [{"name": "clip", "path": "clip.rgb", "format": "raw-rgb24",
                                            "width": 64, "height": 64, "class": "B"}]}))
    return p
