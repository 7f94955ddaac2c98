import numpy as np
import pytest

from loopgen import checkpoint
from loopgen import numerics as nx
from loopgen.errors import CapacityError, ContractError, DataError
from loopgen.model import (
    FULL_SCALE_MILLIONS,
    FULL_SCALE_STAGE3_MILLIONS,
    GROUPS,
    IMAGE,
    POS_SLOTS,
    TEXT,
    CrossAttnWeights,
    NetConfig,
    Temm,
    conv_in_extend,
    forward,
    init_unet,
    param_report,
    routing_preset,
    temporal_attend,
    cross_attend,
    trainable_count,
    trainable_mask,
)


@pytest.fixture(scope="module")
def net():
    return init_unet(NetConfig(width=8, ctx_dim=8), seed=0)


def ctxs(seed=0, d=8):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((4, d)), rng.standard_normal((3, d))


def test_conv_in_extend_zero_std_matches_pretrained():
    rng = np.random.default_rng(0)
    w4, b = rng.standard_normal((6, 4, 3, 3)), rng.standard_normal(6)
    w9 = conv_in_extend(w4, rng, std=0.0)
    assert w9.shape == (6, 9, 3, 3) and not w9[:, 4:].any()
    z = rng.standard_normal((4, 5, 5))
    x9 = np.concatenate([z, np.zeros((5, 5, 5))])
    np.testing.assert_array_equal(nx.conv2d_3x3(x9, w9, b), nx.conv2d_3x3(z, w4, b))


def test_conv_in_extend_seed_isolation():
    w4 = np.random.default_rng(0).standard_normal((6, 4, 3, 3))
    a = conv_in_extend(w4, np.random.default_rng(1))
    b = conv_in_extend(w4, np.random.default_rng(2))
    np.testing.assert_array_equal(a[:, :4], b[:, :4])
    assert not np.array_equal(a[:, 4:], b[:, 4:])
    assert np.abs(a[:, 4:]).max() < 1e-2


def _cross(d=5, dc=3, seed=0):
    rng = np.random.default_rng(seed)
    return CrossAttnWeights(
        rng.standard_normal((d, d)), rng.standard_normal((dc, d)), rng.standard_normal((dc, d)),
        rng.standard_normal((d, d)), rng.standard_normal(d),
    )


def test_cross_attend_off_is_identity():
    z = np.random.default_rng(0).standard_normal((7, 5))
    assert cross_attend(z, None, None) is z


def test_cross_attend_single_token():
    w = _cross()
    rng = np.random.default_rng(1)
    z, ctx = rng.standard_normal((7, 5)), rng.standard_normal((1, 3))
    pre_residual = cross_attend(z, ctx, w) - z - w.out_bias
    expected_row = (ctx @ w.v) @ w.out
    np.testing.assert_allclose(pre_residual, np.repeat(expected_row, 7, axis=0), atol=1e-12)


def test_cross_attend_empty_context():
    with pytest.raises(ContractError):
        cross_attend(np.zeros((2, 5)), np.zeros((0, 3)), _cross())


def _temm(d=4, seed=0, slots=POS_SLOTS):
    rng = np.random.default_rng(seed)
    return Temm(
        rng.standard_normal((slots, d)), rng.standard_normal((d, d)), rng.standard_normal((d, d)),
        rng.standard_normal((d, d)), rng.standard_normal((d, d)), rng.standard_normal(d),
    )


def test_temporal_single_frame():
    t = _temm()
    z = np.random.default_rng(1).standard_normal((1, 6, 4))
    np.testing.assert_allclose(temporal_attend(z, t), z + (z @ t.v_proj) @ t.out_proj + t.out_bias, atol=1e-12)


def test_temporal_symmetry_without_positions():
    t = _temm()
    t.pos_embedding = np.zeros_like(t.pos_embedding)
    frame = np.random.default_rng(2).standard_normal((6, 4))
    out = temporal_attend(np.stack([frame] * 5), t)
    for i in range(1, 5):
        np.testing.assert_allclose(out[i], out[0], atol=1e-14)


def test_temporal_positions_break_permutation_symmetry():
    t = _temm()
    z = np.random.default_rng(3).standard_normal((5, 6, 4))
    perm = [4, 2, 0, 3, 1]
    assert not np.allclose(temporal_attend(z[perm], t), temporal_attend(z, t)[perm])


@pytest.mark.parametrize("T", [1, 35, 36])
def test_temporal_capacity_ok(T):
    out = temporal_attend(np.zeros((T, 2, 4)), _temm())
    assert out.shape == (T, 2, 4)


def test_temporal_capacity_exceeded():
    with pytest.raises(CapacityError):
        temporal_attend(np.zeros((37, 2, 4)), _temm())


@pytest.mark.parametrize("f", [8, 11, 18])
def test_forward_shape(net, f):
    z_c = np.random.default_rng(f).standard_normal((2 * f - 1, 9, 4, 4))
    assert forward(net, z_c, 10, *ctxs()).shape == (2 * f - 1, 4, 4, 4)


def test_forward_rejects_37_frames(net):
    with pytest.raises(CapacityError):
        forward(net, np.zeros((37, 9, 4, 4)), 0, *ctxs())


def test_all_image_routing_ignores_caption(net):
    z_c = np.random.default_rng(0).standard_normal((3, 9, 4, 4))
    img, txt = ctxs(1)
    r = routing_preset(3)
    a = forward(net, z_c, 5, img, txt, r)
    b = forward(net, z_c, 5, img, ctxs(2)[1] * 7, r)
    assert a.tobytes() == b.tobytes()


def test_all_text_routing_ignores_image_embedding(net):
    z_c = np.random.default_rng(0).standard_normal((3, 9, 4, 4))
    img, txt = ctxs(1)
    r = routing_preset(2)
    a = forward(net, z_c, 5, img, txt, r)
    b = forward(net, z_c, 5, img * -3 + 1, txt, r)
    assert a.tobytes() == b.tobytes()


def test_default_routing_uses_both(net):
    z_c = np.random.default_rng(0).standard_normal((3, 9, 4, 4))
    img, txt = ctxs(1)
    base = forward(net, z_c, 5, img, txt)
    assert not np.array_equal(base, forward(net, z_c, 5, img * 2, txt))
    assert not np.array_equal(base, forward(net, z_c, 5, img, txt * 2))


def test_routing_presets():
    assert routing_preset(0).sources == {IMAGE, TEXT}
    assert routing_preset(1).middle_source is None
    assert routing_preset(2).sources == {TEXT}
    assert routing_preset(3).sources == {IMAGE}
    assert routing_preset(4).up_source == IMAGE


def test_trainable_sets():
    s1, s2, s3 = (trainable_mask(None, s) for s in (1, 2, 3))
    assert s1 >= s2 >= s3
    assert "TEMM.K" not in s3 and "CAB" not in s3
    assert s3 == {"conv_in", "TEMM.Q", "TEMM.V"}
    assert s2 == {"conv_in", "TEMM.Q", "TEMM.K", "TEMM.V", "TEMM.other"}
    assert "backbone" not in s1


def test_param_accounting(net):
    rep = param_report(net)
    assert set(rep) == set(GROUPS)
    assert rep["TEMM.Q"] == rep["TEMM.K"] == rep["TEMM.V"] > 0
    assert sum(rep.values()) == sum(a.size for a in net.params.values())
    assert trainable_count(net, 3) == rep["conv_in"] + rep["TEMM.Q"] + rep["TEMM.V"]


def test_param_report_is_stable():
    a = param_report(init_unet(NetConfig(), seed=1))
    b = param_report(init_unet(NetConfig(), seed=2))
    assert a == b


def test_full_scale_identity():
    fs = FULL_SCALE_MILLIONS
    assert fs["TEMM.Q"] == fs["TEMM.K"] == fs["TEMM.V"]
    assert round(fs["conv_in"] + fs["TEMM.Q"] + fs["TEMM.V"], 6) == FULL_SCALE_STAGE3_MILLIONS == 303.2


def test_checkpoint_round_trip(net, tmp_path):
    extra = {"adam.m.x": np.arange(6.0).reshape(2, 3)}
    checkpoint.save(tmp_path / "a.ckpt", net, {"stage": 2}, extra)
    loaded, meta, ex = checkpoint.load(tmp_path / "a.ckpt", expect=net)
    assert meta == {"stage": 2}
    assert loaded.config == net.config
    for k, v in net.params.items():
        assert loaded.params[k].tobytes() == v.tobytes()
    np.testing.assert_array_equal(ex["adam.m.x"], extra["adam.m.x"])


def test_checkpoint_rejects_other_network(net, tmp_path):
    checkpoint.save(tmp_path / "a.ckpt", net)
    other = init_unet(NetConfig(width=16, ctx_dim=8))
    with pytest.raises(DataError):
        checkpoint.load(tmp_path / "a.ckpt", expect=other)


@pytest.mark.parametrize("damage", ["magic", "truncate", "header", "missing"])
def test_checkpoint_rejects_damage(net, tmp_path, damage):
    p = tmp_path / "a.ckpt"
    checkpoint.save(p, net)
    raw = bytearray(p.read_bytes())
    if damage == "magic":
        raw[:8] = b"NOTACKPT"
    elif damage == "truncate":
        raw = raw[:-8]
    elif damage == "header":
        raw[20:24] = b"\xff\xfe\xfd\xfc"
    p.write_bytes(bytes(raw))
    target = tmp_path / "nope.ckpt" if damage == "missing" else p
    with pytest.raises(DataError):
        checkpoint.load(target)
