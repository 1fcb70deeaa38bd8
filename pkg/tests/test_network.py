import numpy as np
import pytest

from chsnet import functional as F
from chsnet.blocks import dsc_cost_ratio
from chsnet.errors import ConfigurationError, ShapeError
from chsnet.gradcheck import MAX_KINK_FRACTION, TOLERANCE, check, network_cases
from chsnet.network import (
    CHSNet,
    DirectNet,
    NetworkConfig,
    build_chs_net,
    build_model,
    build_raiu_net,
    dsc_layers,
    forward,
    load_checkpoint,
    parameter_census,
    save_checkpoint,
)
from chsnet.nn import Conv2d, DepthwiseSeparableConv, Init
from chsnet.tensor import Tape, Tensor


def small(**kw):
    base = dict(stages=2, base_filters=4, depth_growth=1.5, input_size=(16, 16, 1))
    base.update(kw)
    return NetworkConfig(**base)


def batch(cfg, b=2, seed=0):
    w, h, c = cfg.input_size
    return Tensor(np.random.default_rng(seed).uniform(size=(b, w, h, c)))


def test_widths_grow_by_half_and_round_to_four():
    assert NetworkConfig().widths() == [32, 48, 72, 108]
    assert NetworkConfig(depth_growth=2.0).widths() == [32, 64, 128, 256]
    assert NetworkConfig(stages=3, base_filters=16, input_size=(64, 64, 1)).widths() == [16, 24, 36]


@pytest.mark.parametrize(
    "kw",
    [dict(stages=1), dict(input_size=(18, 16, 1)), dict(dropout_rate=1.0), dict(gate_activation="tanh"),
     dict(cascade_coupling="sum"), dict(dtype="float16"), dict(base_filters=0)],
)
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        small(**kw)


def test_encoder_decoder_extents():
    cfg = small(stages=3, input_size=(32, 32, 1))
    net = build_raiu_net(cfg)
    feats = net.forward_features(batch(cfg))
    widths = cfg.widths()
    for i, f in enumerate(feats["encoder"]):
        assert f.shape == (2, 32 >> i, 32 >> i, widths[i])
    for f, i in zip(feats["decoder"], reversed(range(2))):
        assert f.shape == (2, 32 >> i, 32 >> i, widths[i])
    assert feats["output"][0].shape == (2, 32, 32, 1)


def test_chs_net_outputs_pair_in_open_interval():
    cfg = small()
    lung, inf = build_chs_net(cfg)(batch(cfg))
    for out in (lung, inf):
        assert out.shape == (2, 16, 16, 1)
        assert np.all((out.data > 0) & (out.data < 1))


def test_masking_identity_and_null():
    cfg = small()
    net = CHSNet(cfg)
    x = batch(cfg)
    net.lung_override = 1.0
    np.testing.assert_array_equal(net.couple(x, Tensor(np.ones(x.shape))).data, x.data)
    _, with_ones = net(x)
    np.testing.assert_array_equal(with_ones.data, net.infection_net(x).data)
    net.lung_override = 0.0
    _, with_zeros = net(x)
    np.testing.assert_array_equal(with_zeros.data, net.infection_net(Tensor(np.zeros(x.shape))).data)


@pytest.mark.parametrize("coupling, channels", [("lung_map", 1), ("slice_and_map", 2)])
def test_alternative_couplings(coupling, channels):
    cfg = small(cascade_coupling=coupling)
    net = CHSNet(cfg)
    assert net.infection_net.in_channels == channels
    assert net(batch(cfg))[1].shape == (2, 16, 16, 1)


def test_input_shape_is_checked():
    cfg = small()
    with pytest.raises(ShapeError):
        build_chs_net(cfg)(Tensor(np.zeros((1, 8, 8, 1))))


def test_forward_determinism():
    cfg = small(dropout_rate=0.5)
    net = build_chs_net(cfg)
    x = batch(cfg)
    a = forward(net, x)[1].data
    b = forward(net, x)[1].data
    assert np.array_equal(a, b)
    t1 = forward(build_chs_net(cfg), x, mode="train", seed=3, dropout=0.5)[1].data
    t2 = forward(build_chs_net(cfg), x, mode="train", seed=3, dropout=0.5)[1].data
    t3 = forward(build_chs_net(cfg), x, mode="train", seed=4, dropout=0.5)[1].data
    assert np.array_equal(t1, t2) and not np.array_equal(t1, t3)
    with pytest.raises(ConfigurationError):
        forward(net, x, mode="eval")


def test_cascade_gradient_reaches_lung_net():
    cfg = small()
    net = build_chs_net(cfg)
    with Tape() as tape:
        _, inf = net(batch(cfg))
        loss = F.mean(inf)
    params = net.lung_net.parameters()
    tape.backward(loss, params)
    assert max(np.abs(p.grad).max() for p in params) > 0


def test_census_counting_examples():
    assert parameter_census(Conv2d(Init(0), 1, 16, 3)).total == 160
    assert parameter_census(DepthwiseSeparableConv(Init(0), 8, 16, 3)).total == 216
    layer = DepthwiseSeparableConv(Init(0), 8, 64, 3)
    weights = layer.depthwise.size + layer.pointwise.size
    assert weights / (9 * 8 * 64) == pytest.approx(dsc_cost_ratio(3, 8, 64)[0], abs=1e-15)


def test_census_total_is_sum_and_chs_is_twice_direct():
    cfg = small()
    census = parameter_census(build_chs_net(cfg))
    assert census.total == sum(census.per_layer.values())
    single = parameter_census(build_raiu_net(cfg)).total
    assert census.total == 2 * single
    assert census.by_prefix("lung_net.") == single


def test_baseline_has_no_separable_spectral_or_attention_parameters():
    net = build_raiu_net(small(use_rib=False, use_hybrid_pool=False, use_ssd=False))
    names = [n for n, _ in net.named_parameters()]
    assert not list(dsc_layers(net))
    assert not any("ssd" in n or "pool" in n for n in names)


def test_each_toggle_strictly_adds_parameters():
    off = dict(use_rib=False, use_hybrid_pool=False, use_ssd=False)
    base = parameter_census(build_raiu_net(small(**off))).total
    for toggle in ("use_rib", "use_hybrid_pool", "use_ssd"):
        on = parameter_census(build_raiu_net(small(**{**off, toggle: True}))).total
        assert on > base, toggle


@pytest.mark.xfail(strict=True, reason="stage widths are under-specified; the default build has ~0.83M parameters")
def test_default_census_near_published_size():
    total = parameter_census(build_raiu_net(NetworkConfig())).total
    assert abs(total - 4.2e6) <= 0.15 * 4.2e6


def test_checkpoint_round_trip(tmp_path):
    cfg = small(dropout_rate=0.25)
    net = build_chs_net(cfg)
    for p in net.parameters():
        p.data += 0.01
    forward(net, batch(cfg), mode="train")  # move the running statistics
    path = tmp_path / "m.chsn"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert isinstance(loaded, CHSNet) and loaded.cfg == cfg
    x = batch(cfg, seed=9)
    assert np.array_equal(forward(loaded, x)[1].data, forward(net, x)[1].data)
    save_checkpoint(loaded, tmp_path / "again.chsn")
    assert path.read_bytes() == (tmp_path / "again.chsn").read_bytes()


def test_checkpoint_kinds_and_bad_magic(tmp_path):
    save_checkpoint(build_model(small(), "raiu"), tmp_path / "d.chsn")
    assert isinstance(load_checkpoint(tmp_path / "d.chsn"), DirectNet)
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "bad")
    with pytest.raises(ConfigurationError):
        build_model(small(), "unet")


@pytest.mark.slow
@pytest.mark.parametrize("case", network_cases(), ids=lambda c: c.name)
def test_miniature_network_gradients(case):
    res = check(case)
    assert res < TOLERANCE
    assert res.skipped <= MAX_KINK_FRACTION * (res.checked + res.skipped)
