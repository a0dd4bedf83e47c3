"""Coding networks: autoencoder closed loop, refinement identities, weight
store format and complexity accounting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eevcodec.entropy.container import CrcError
from eevcodec.nets import (
    RAB,
    REFERENCE_ROWS,
    CodecArch,
    HyperpriorAutoencoder,
    ILRNet,
    MissingWeightError,
    RefineArch,
    RefineNet,
    ShapeMismatchError,
    UnknownLayerKind,
    WeightStore,
    count_complexity,
    ilr_filter,
    load_weights,
    mcp_refine,
    mv_codec,
    residual_codec,
    save_weights,
)
from eevcodec.nets.refine import MCNet
from eevcodec.tensor import ShapeError, Tensor, grad_check, ops
from eevcodec.tensor.nn import Conv2d, LayerRecord

MV_ARCH = CodecArch(channels=2)
RES_ARCH = CodecArch(channels=3)


def _rand(shape, seed=0, scale=1.0):
    return Tensor((np.random.default_rng(seed).normal(size=shape) * scale).astype(np.float32))


def _zero_all(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


# -- autoencoders

def test_mv_codec_zero_flow_zero_synthesis():
    net = HyperpriorAutoencoder(MV_ARCH, seed=3)
    flow = Tensor(np.zeros((1, 2, 64, 64), np.float32))
    flow_hat, bits, payload = mv_codec(flow, net)
    assert flow_hat.shape == (1, 2, 64, 64)
    assert np.all(flow_hat.data == 0)
    assert bits > 0
    assert bits == 8 * len(payload)


def test_residual_codec_zero_residual():
    net = HyperpriorAutoencoder(RES_ARCH, seed=4)
    res_hat, bits, _ = residual_codec(Tensor(np.zeros((1, 3, 64, 64), np.float32)), net)
    assert np.all(res_hat.data == 0) and bits > 0


@pytest.mark.parametrize("seed", range(3))
def test_codec_decode_is_bit_exact(seed):
    net = HyperpriorAutoencoder(RES_ARCH, seed=seed, zero_synthesis=False)
    x = _rand((1, 3, 64, 64), seed, 0.5)
    res_hat, _, payload = residual_codec(x, net)
    decoded = net.decode(payload, x.shape)
    assert decoded.data.tobytes() == res_hat.data.tobytes()


def test_mv_codec_round_trip_non_square():
    net = HyperpriorAutoencoder(MV_ARCH, seed=9, zero_synthesis=False)
    flow = _rand((1, 2, 64, 128), 9, 2.0)
    flow_hat, _, payload = mv_codec(flow, net)
    assert net.decode(payload, flow.shape).data.tobytes() == flow_hat.data.tobytes()


def test_codec_bits_grow_with_residual_scale():
    grew = 0
    for seed in range(20):
        net = HyperpriorAutoencoder(RES_ARCH, seed=seed)
        x = _rand((1, 3, 64, 64), 100 + seed, 0.1)
        _, small, _ = residual_codec(x, net)
        _, large, _ = residual_codec(Tensor(x.data * 10), net)
        grew += large > small
    assert grew >= 18


def test_codec_estimate_tracks_payload():
    net = HyperpriorAutoencoder(RES_ARCH, seed=1)
    res = net.encode(_rand((1, 3, 64, 64), 5, 0.3))
    assert abs(res.bits - res.est_bits) <= 0.02 * res.est_bits + 8 * 64


def test_codec_train_mode_rate_is_differentiable_scalar():
    net = HyperpriorAutoencoder(RES_ARCH, seed=1)
    recon, bits, payload = residual_codec(_rand((1, 3, 64, 64)), net, mode="train",
                                          rng=np.random.default_rng(0))
    assert recon.shape == (1, 3, 64, 64) and bits.data.size == 1 and payload == b""


def test_codec_rejects_bad_shapes():
    net = HyperpriorAutoencoder(RES_ARCH)
    with pytest.raises(ShapeError):
        residual_codec(_rand((1, 3, 48, 64)), net)
    with pytest.raises(ShapeError):
        mv_codec(_rand((1, 3, 64, 64)), HyperpriorAutoencoder(MV_ARCH))
    with pytest.raises(ValueError):
        residual_codec(_rand((1, 3, 64, 64)), net, mode="sideways")


def test_codec_down_and_up_factors_match():
    net = HyperpriorAutoencoder(RES_ARCH)
    recs = net.layer_table(64, 64)
    down = np.prod([r.stride for r in recs if r.name.startswith("analysis")])
    up = np.prod([r.stride for r in recs if r.name.startswith("synthesis")])
    assert down == up == 16
    assert [r.kernel for r in recs if r.name.startswith("analysis")] == [5] * 4
    assert recs[3].cout == 128


# -- refinement nets

def test_mcp_refine_default_and_zero_weights_are_identity():
    x = _rand((1, 3, 16, 16), 1)
    net = RefineNet(seed=2)
    assert np.array_equal(mcp_refine(x, net).data, x.data)
    _zero_all(net)
    assert np.array_equal(mcp_refine(x, net).data, x.data)
    assert len(net.blocks) == 5


def test_mcp_refine_gate_one_zero_rab_convs_identity(monkeypatch):
    net = RefineNet(seed=2)
    net.tail.weight.data = np.random.default_rng(0).normal(size=net.tail.weight.shape).astype(np.float32)
    for b in net.blocks:
        b.conv1.weight.data[:] = 0
        b.conv2.weight.data[:] = 0
    monkeypatch.setattr(RAB, "gate", lambda self, body: Tensor(np.ones((body.shape[0], body.shape[1], 1, 1), np.float32)))
    x = _rand((1, 3, 8, 8), 3)
    trunk = net.head(x)
    out_blocks = trunk
    for b in net.blocks:
        out_blocks = b(out_blocks)
    assert np.array_equal(out_blocks.data, trunk.data)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 50.0))
def test_rab_gate_strictly_inside_unit_interval(seed, scale):
    rab = RAB(16, 4, np.random.default_rng(seed))
    g = rab.gate(_rand((1, 16, 4, 4), seed, scale)).data
    assert np.all(g > 0) and np.all(g < 1)


def test_refine_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        RefineNet()(_rand((1, 4, 8, 8)))


def test_refine_optional_extra_input():
    net = RefineNet(RefineArch(channels=16, extra_inputs=3), seed=0)
    x = _rand((1, 3, 8, 8), 0)
    assert np.array_equal(net(x, _rand((1, 3, 8, 8), 1)).data, x.data)


def test_ilr_identity_and_shape():
    x = _rand((2, 3, 12, 20), 4)
    net = ILRNet()
    assert np.array_equal(ilr_filter(x, net).data, x.data)
    _zero_all(net)
    assert np.array_equal(ilr_filter(x, net).data, x.data)


def test_ilr_gradient_reaches_input():
    net = ILRNet(specs=("k5c4s1", "k3c4s1", "k5c3s1"), seed=1)
    rng = np.random.default_rng(1)
    for p in net.parameters():
        p.data = rng.normal(scale=0.3, size=p.shape)
    point = rng.normal(size=(1, 3, 6, 6))
    assert grad_check(lambda x: ops.sum(ilr_filter(x, net)), point) < 1e-4


def test_mcnet_identity_on_warped():
    net = MCNet()
    w, r, f = _rand((1, 3, 8, 8), 1), _rand((1, 3, 8, 8), 2), _rand((1, 2, 8, 8), 3)
    assert np.array_equal(net.compensate(w, r, f).data, w.data)


# -- complexity

def test_complexity_hand_case():
    rec = LayerRecord("c", "conv", 3, 2, 4, 1, (10, 10), (10, 10))
    rep = count_complexity([rec], 10, 10)
    assert rep.params == 76
    assert rep.macs_per_pixel == 72


@pytest.mark.parametrize("hw", [(8, 8), (32, 48), (64, 64)])
def test_complexity_stride1_macs_resolution_invariant(hw):
    conv = Conv2d(2, "k3c4s1", np.random.default_rng(0))
    rep = count_complexity(conv, *hw)
    assert rep.params == 76 and rep.macs_per_pixel == 72


def test_complexity_params_independent_of_resolution_and_additive():
    subs = {"refine": RefineNet(), "ilr": ILRNet()}
    a = count_complexity(subs, 64, 64)
    b = count_complexity(subs, 128, 256)
    assert a.params == b.params
    assert a.params == sum(p for p, _ in a.breakdown.values())
    assert a.params == sum(p.data.size for s in subs.values() for p in s.parameters())
    assert a.macs_per_pixel == pytest.approx(sum(m for _, m in a.breakdown.values()))


def test_complexity_matches_traced_convolutions():
    from eevcodec.tensor.ops import trace_convolutions
    net = HyperpriorAutoencoder(RES_ARCH)
    with trace_convolutions() as trace:
        net.encode(_rand((1, 3, 64, 64)))
    traced = sum(k * k * cin * cout * oh * ow for _, k, cin, cout, _, _, (oh, ow) in trace)
    assert traced == count_complexity(net, 64, 64).macs_per_pixel * 64 * 64


def test_complexity_unknown_kind():
    with pytest.raises(UnknownLayerKind, match="pool"):
        count_complexity([LayerRecord("p", "pool", 2, 1, 1, 2, (4, 4), (2, 2))], 4, 4)


def test_complexity_reference_rows():
    rep = count_complexity(ILRNet(), 64, 64)
    assert rep.reference == REFERENCE_ROWS
    assert REFERENCE_ROWS["EEV-0.1"] == (0.678, 5.26)
    assert REFERENCE_ROWS["EEV-0.3"] == (2.021, 7.17)
    assert REFERENCE_ROWS["EEV-0.4"] == (3.127, 23.96)
    assert "EEV-0.4" in rep.format()


# -- weight store

def test_weights_round_trip_exact():
    src, dst = RefineNet(RefineArch(channels=16), seed=1), RefineNet(RefineArch(channels=16), seed=2)
    data = save_weights(src)
    assert data[:4] == b"EEVW"
    load_weights(data, dst)
    for (n1, a), (n2, b) in zip(sorted(src.state_dict().items()), sorted(dst.state_dict().items())):
        assert n1 == n2 and a.tobytes() == b.tobytes()
    assert save_weights(dst) == data


def test_weights_tamper_is_crc_error():
    data = bytearray(save_weights(ILRNet()))
    data[len(data) // 2] ^= 0x10
    with pytest.raises(CrcError):
        WeightStore.from_bytes(bytes(data))


def test_weights_missing_name_listed():
    store = WeightStore.from_module(ILRNet())
    del store["convs.2.bias"]
    with pytest.raises(MissingWeightError, match=r"convs\.2\.bias"):
        load_weights(save_weights(store), ILRNet())


def test_weights_shape_mismatch():
    data = save_weights(ILRNet(specs=("k3c8s1", "k3c3s1")))
    with pytest.raises(ShapeMismatchError, match="convs.0.weight"):
        load_weights(data, ILRNet(specs=("k5c8s1", "k3c3s1")))


def test_weight_errors_are_distinct():
    assert not issubclass(MissingWeightError, ShapeMismatchError)
    assert not issubclass(ShapeMismatchError, CrcError)
    assert not issubclass(CrcError, MissingWeightError)
