import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loopgen.alss import AlssConfig, sample_sequence
from loopgen.conditioning import (
    BASIS,
    INFERENCE,
    TRAINING,
    MaskPair,
    assemble_condition,
    build_fgsm,
    build_sdslc,
    call_provider,
    decode_latents,
    downsample_mask,
    draw_drop,
    drop_last_frame,
    encode_frames,
    make_inference_bundle,
    make_training_bundle,
    null_mask_provider,
    toy_decode,
    toy_encode,
)
from loopgen.errors import DimensionError, ParameterError, ProviderError
from loopgen.schedule import make_linear_schedule
from loopgen.synth import PALETTE, SyntheticSpec, render


def projection_oracle(image):
    # explicit basis expansion, patch by patch
    C, H, W = image.shape
    out = np.zeros_like(image)
    for i in range(0, H, 8):
        for j in range(0, W, 8):
            patch = image[:, i : i + 8, j : j + 8].ravel()
            rec = np.zeros(192)
            for k in range(4):
                rec += np.dot(BASIS[k], patch) * BASIS[k]
            out[:, i : i + 8, j : j + 8] = rec.reshape(3, 8, 8)
    return out


def test_basis_is_orthonormal():
    np.testing.assert_allclose(BASIS @ BASIS.T, np.eye(4), atol=1e-15)


def test_constant_image_round_trips():
    img = np.empty((3, 16, 24))
    img[0], img[1], img[2] = 0.2, 0.7, 0.4
    np.testing.assert_allclose(toy_decode(toy_encode(img)), img, rtol=0, atol=1e-14)


def test_zero_image_zero_latent():
    np.testing.assert_array_equal(toy_encode(np.zeros((3, 8, 8))), np.zeros((4, 1, 1)))


def test_round_trip_matches_projection_oracle():
    img = np.random.default_rng(0).random((3, 16, 16))
    np.testing.assert_allclose(toy_decode(toy_encode(img)), projection_oracle(img), rtol=0, atol=1e-12)


def test_encoder_rejects_bad_extents():
    with pytest.raises(DimensionError):
        toy_encode(np.zeros((3, 10, 8)))
    with pytest.raises(DimensionError):
        toy_decode(np.zeros((3, 2, 2)))


def test_scaled_encoding_batches():
    frames = np.random.default_rng(1).random((3, 3, 16, 16))
    lat = encode_frames(frames)
    assert lat.shape == (3, 4, 2, 2)
    np.testing.assert_allclose(decode_latents(lat[1]), projection_oracle(frames[1]), atol=1e-12)


def test_drop_limits():
    rng = np.random.default_rng(0)
    x = np.ones((4, 2, 2))
    assert all(drop_last_frame(x, 0.0, rng) is x for _ in range(100))
    assert all(not drop_last_frame(x, 1.0, rng).any() for _ in range(100))
    with pytest.raises(ParameterError):
        draw_drop(1.5, rng)


def test_drop_frequency():
    rng = np.random.default_rng(3)
    freq = np.mean([draw_drop(0.5, rng) for _ in range(100_000)])
    assert 0.49 <= freq <= 0.51


def test_sdslc_minimal_training():
    a, b = np.full((4, 1, 1), 1.0), np.full((4, 1, 1), 2.0)
    out = build_sdslc(a, b, 2, TRAINING)
    np.testing.assert_array_equal(out, np.stack([a, b, a]))


def test_sdslc_inference_zero_count():
    a = np.random.default_rng(0).standard_normal((4, 2, 2))
    out = build_sdslc(a, None, 8, INFERENCE)
    zero = [i for i in range(15) if not out[i].any()]
    assert len(zero) == 13
    np.testing.assert_array_equal(out[0], a)
    np.testing.assert_array_equal(out[14], a)


def test_sdslc_dropped_last():
    a = np.ones((4, 2, 2))
    out = build_sdslc(a, np.zeros_like(a), 8, TRAINING)
    assert not out[7].any()


def test_sdslc_errors():
    with pytest.raises(ParameterError):
        build_sdslc(np.ones((4, 1, 1)), np.ones((4, 1, 1)), 1)
    with pytest.raises(ParameterError):
        build_sdslc(np.ones((4, 1, 1)), None, 3, "bogus")


def checker(h=2, w=2):
    return (np.indices((h, w)).sum(axis=0) % 2).astype(float)[None]


def test_fgsm_stage1_all_ones():
    for f in (2, 8, 18):
        out = build_fgsm(MaskPair(checker(), checker()), f, stage=1)
        assert out.shape == (2 * f - 1, 1, 2, 2) and np.all(out == 1.0)


def test_fgsm_stage2_minimal():
    m0, ml = checker(), 1 - checker()
    out = build_fgsm(MaskPair(m0, ml), 2, stage=2, dropped=False)
    np.testing.assert_array_equal(out, np.stack([m0, ml, m0]))


def test_fgsm_inference():
    m0 = checker()
    out = build_fgsm(MaskPair(m0), 8, stage=3, mode=INFERENCE)
    np.testing.assert_array_equal(out[0], m0)
    np.testing.assert_array_equal(out[14], m0)
    assert np.all(out[1:14] == 1.0)


def test_fgsm_dropped_mask_is_all_ones():
    out = build_fgsm(MaskPair(checker(), 1 - checker()), 8, stage=3, dropped=True)
    assert np.all(out[7] == 1.0)


def test_fgsm_missing_last_mask():
    with pytest.raises(ParameterError):
        build_fgsm(MaskPair(checker()), 8, stage=2, dropped=False)


def test_mask_pair_binary():
    with pytest.raises(ParameterError):
        MaskPair(np.full((1, 2, 2), 0.5))


def test_assemble_shapes_and_ordering():
    rng = np.random.default_rng(0)
    zt, zsd = rng.standard_normal((15, 4, 8, 8)), rng.standard_normal((15, 4, 8, 8))
    zm = (rng.random((15, 1, 8, 8)) > 0.5).astype(float)
    b = assemble_condition(zt, zsd, zm)
    assert b.z_c.shape == (15, 9, 8, 8)
    np.testing.assert_array_equal(b.z_c[:, :4], zt)
    np.testing.assert_array_equal(b.z_c[:, 4:8], zsd)
    np.testing.assert_array_equal(b.z_c[:, 8:], zm)


def test_assemble_extent_mismatch():
    with pytest.raises(DimensionError):
        assemble_condition(np.zeros((15, 4, 8, 8)), np.zeros((13, 4, 8, 8)), np.zeros((15, 1, 8, 8)))
    with pytest.raises(DimensionError):
        assemble_condition(np.zeros((3, 4, 2, 2)), np.zeros((3, 4, 2, 2)), np.zeros((3, 2, 2, 2)))


def test_null_provider_all_ones():
    img = np.zeros((3, 16, 8))
    np.testing.assert_array_equal(call_provider(null_mask_provider, img), np.ones((16, 8)))


def test_provider_failure_surfaces():
    def broken(image):
        raise RuntimeError("segmenter offline")

    with pytest.raises(ProviderError):
        call_provider(broken, np.zeros((3, 8, 8)))
    with pytest.raises(ProviderError):
        call_provider(lambda im: np.full((8, 8), 0.5), np.zeros((3, 8, 8)))
    with pytest.raises(ProviderError):
        call_provider(lambda im: np.ones((4, 4)), np.zeros((3, 8, 8)))


def test_synthetic_mask_is_ground_truth():
    spec = SyntheticSpec(length=5, seed=4)
    frames, masks = render(spec)
    fg = np.round(np.array(PALETTE[spec.color]) * 255)
    for fr, m in zip(frames, masks):
        provider = lambda image, m=m: m
        got = call_provider(provider, fr.transpose(2, 0, 1))
        np.testing.assert_array_equal(got.astype(bool), np.all(fr == fg, axis=-1))


def majority_oracle(mask):
    H, W = mask.shape
    out = np.zeros((1, H // 8, W // 8))
    for i in range(H // 8):
        for j in range(W // 8):
            ones = int(mask[8 * i : 8 * i + 8, 8 * j : 8 * j + 8].sum())
            out[0, i, j] = 1.0 if ones >= 32 else 0.0
    return out


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(0, 1), st.integers(0, 2**31))
def test_downsample_matches_majority_oracle(h, w, p, seed):
    mask = (np.random.default_rng(seed).random((8 * h, 8 * w)) < p).astype(float)
    np.testing.assert_array_equal(downsample_mask(mask), majority_oracle(mask))


def test_downsample_tie_goes_to_one():
    mask = np.zeros((8, 8))
    mask[:4] = 1
    assert downsample_mask(mask)[0, 0, 0] == 1.0


# -- training bundles ---------------------------------------------------------------


@pytest.fixture(scope="module")
def clip():
    frames, masks = render(SyntheticSpec(length=43, seed=2))
    pix = frames.transpose(0, 3, 1, 2) / 255.0
    lat = encode_frames(pix)
    lm = np.stack([downsample_mask(m) for m in masks])
    return pix, lat, lm


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1, 2, 3]), st.booleans(), st.integers(0, 2**31))
def test_training_bundle_loop_closure(clip, stage, dropped, seed):
    pix, lat, lm = clip
    rng = np.random.default_rng(seed)
    cfg = AlssConfig(s=6, f=8)
    seq = sample_sequence(cfg, rng)
    sched = make_linear_schedule()
    eps = rng.standard_normal((15,) + lat.shape[1:])
    b, z0 = make_training_bundle(lat, seq.indices, 8, stage, int(rng.integers(1000)), eps, sched, dropped, lm)
    assert b.z_c.shape == (15, 9, 8, 8)
    assert np.array_equal(b.z_sd[0], b.z_sd[14]) and np.array_equal(b.z_m[0], b.z_m[14])
    zero = [i for i in range(15) if not b.z_sd[i].any()]
    assert set(zero) >= set(range(1, 7)) | set(range(8, 14))
    assert (7 in zero) == dropped
    np.testing.assert_allclose(decode_latents(b.z_sd[0]), projection_oracle(pix[0]), atol=1e-12)
    np.testing.assert_array_equal(z0, lat[list(seq.indices)])


def test_training_bundle_needs_masks_after_stage1(clip):
    _, lat, _ = clip
    seq = list(range(0, 43, 6)) + list(range(36, -1, -6))
    with pytest.raises(ParameterError):
        make_training_bundle(lat, seq, 8, 2, 0, np.zeros((15, 4, 8, 8)), make_linear_schedule(), False)


def test_inference_depends_only_on_first_frame():
    rng = np.random.default_rng(5)
    first = rng.random((3, 16, 16))
    vid_a = np.concatenate([first[None], rng.random((4, 3, 16, 16))])
    vid_b = np.concatenate([first[None], rng.random((4, 3, 16, 16))])
    z_t = rng.standard_normal((15, 4, 2, 2))
    ba = make_inference_bundle(encode_frames(vid_a[0]), 8, z_t)
    bb = make_inference_bundle(encode_frames(vid_b[0]), 8, z_t)
    np.testing.assert_array_equal(ba.z_c, bb.z_c)
    assert not ba.z_sd[7].any()
