import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from helpers import ALL_ON, bilinear_sample, enumerate_patches, random_base, random_field
from mvforensics.errors import BoxTooLarge, FormatError
from mvforensics.ingest import FaceBox
from mvforensics.pipeline import (AugmentationConfig, SampleTensor, crop_resize_field,
                                  crop_resize_rgb, finish_sample, flip_h, flip_v, frame_rng,
                                  gaussian_blur, gaussian_kernel, gridmask, gridmask_cells, grayscale,
                                  make_sample, resize_bilinear, rgb_augment, sample_frames, square_pad,
                                  standardize_mv, standardize_rgb)

# -- geometry -------------------------------------------------------------------------------------

def test_square_pad_centered():
    assert square_pad(FaceBox(0, 150, 125, 100, 50), 400, 300) == FaceBox(0, 150, 100, 100, 100)


def test_square_pad_square_unchanged():
    assert square_pad(FaceBox(3, 10, 20, 64, 64), 400, 300) == FaceBox(3, 10, 20, 64, 64)


def test_square_pad_flush_top_is_shifted_inside():
    # centred growth would start at y = -25; the clamp moves it to 0
    assert square_pad(FaceBox(0, 150, 0, 100, 50), 400, 300) == FaceBox(0, 150, 0, 100, 100)


def test_square_pad_too_large():
    with pytest.raises(BoxTooLarge):
        square_pad(FaceBox(0, 0, 0, 500, 20), 400, 300)


@given(st.integers(0, 300), st.integers(0, 200), st.integers(1, 200), st.integers(1, 200))
def test_square_pad_stays_inside(x, y, w, h):
    fw, fh = 320, 240
    if x + w > fw or y + h > fh:
        return
    b = square_pad(FaceBox(0, x, y, w, h), fw, fh)
    assert b.x >= 0 and b.y >= 0 and b.x + b.w <= fw and b.y + b.h <= fh
    assert max(b.w, b.h) == min(max(w, h), max(fw, fh))


def test_resize_identity():
    img = np.random.default_rng(0).random((2, 7, 5))
    np.testing.assert_array_equal(resize_bilinear(img, 7, 5), img)


def test_resize_constant():
    out = resize_bilinear(np.full((1, 2, 2), 3.25), 9, 5)
    np.testing.assert_allclose(out, 3.25, rtol=0, atol=1e-12)


def test_resize_ramp_matches_brute_force():
    ramp = np.add.outer(np.arange(4.0) * 3, np.arange(4.0))
    np.testing.assert_allclose(resize_bilinear(ramp[None], 8, 8)[0], bilinear_sample(ramp, 8, 8), atol=1e-12)


@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 12), st.integers(1, 12), st.integers(0, 99))
def test_resize_random_matches_brute_force(h, w, oh, ow, seed):
    img = np.random.default_rng(seed).normal(size=(h, w))
    np.testing.assert_allclose(resize_bilinear(img[None], oh, ow)[0], bilinear_sample(img, oh, ow), atol=1e-9)


def test_crop_resize_rgb_identity_crop():
    frame = np.random.default_rng(1).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    out = crop_resize_rgb(frame, FaceBox(0, 0, 0, 8, 8), 8)
    np.testing.assert_array_equal(out, np.moveaxis(frame, -1, 0).astype(np.float32))


def test_crop_resize_field_keeps_codec_units():
    fld = random_field(np.random.default_rng(2), 4, 4, p_info=1.0)
    out = crop_resize_field(fld, FaceBox(0, 0, 0, 16, 16), 32)
    assert out.shape == (6, 32, 32)
    assert out[0].max() <= fld.past_x.max() + 1e-6 and out[0].min() >= fld.past_x.min() - 1e-6
    # nearest upsampling of the IM keeps a 2x replica of the 16x16 mask
    np.testing.assert_array_equal(out[4][::8, ::8], fld.im_past)


# -- standardization ------------------------------------------------------------------------------------

def mv_sample(x, im):
    data = np.stack([x, np.zeros_like(x), im]).astype(np.float32)
    return SampleTensor(data, (), ((0, 1, 2),))


def test_standardize_mv_two_values():
    out = standardize_mv(mv_sample(np.array([[2.0, 4.0, 9.0]]), np.array([[1, 1, 0]])))
    assert out.data[0].tolist() == [[-1.0, 1.0, 0.0]]
    assert 1 in out.degenerate  # the y channel is constant


def test_standardize_mv_all_masked():
    out = standardize_mv(mv_sample(np.array([[2.0, 4.0]]), np.array([[0, 0]])))
    assert not out.data[:2].any()
    assert out.degenerate == (0, 1)


@given(st.integers(0, 10**6))
def test_standardize_mv_moments(seed):
    base, *_ = random_base(seed)
    out = standardize_mv(base)
    for x, y, im in base.mv:
        m = base.data[im] == 1
        for c in (x, y):
            if c in out.degenerate:
                assert not out.data[c].any()
                continue
            vals = out.data[c][m].astype(np.float64)
            assert abs(vals.mean()) < 1e-5 and abs(vals.std() - 1) < 1e-5
            assert not out.data[c][~m].any()


def test_standardize_rgb_examples():
    flat = SampleTensor(np.full((3, 2, 2), 7.0, np.float32), (0, 1, 2))
    out = standardize_rgb(flat)
    assert not out.data.any() and out.degenerate == (0, 1, 2)
    two = SampleTensor(np.array([[[0.0, 2.0]]] * 3, np.float32), (0, 1, 2))
    assert standardize_rgb(two).data[0].tolist() == [[-1.0, 1.0]]


@given(st.integers(0, 10**6))
def test_standardize_rgb_moments(seed):
    data = np.random.default_rng(seed).uniform(0, 255, (3, 9, 11)).astype(np.float32)
    out = standardize_rgb(SampleTensor(data, (0, 1, 2)))
    for c in range(3):
        v = out.data[c].astype(np.float64)
        assert abs(v.mean()) < 1e-5 and abs(v.std() - 1) < 1e-5


# -- flips and gridmask ----------------------------------------------------------------------------------

def test_flip_h_moves_and_mirrors_one_cell():
    w = 6
    x = np.zeros((4, w))
    y = np.zeros((4, w))
    x[2, 1], y[2, 1] = 3, -1
    s = SampleTensor(np.stack([x, y, (x != 0).astype(float)]).astype(np.float32), (), ((0, 1, 2),))
    out = flip_h(s)
    assert out.data[0, 2, w - 2] == -3 and out.data[1, 2, w - 2] == -1
    assert np.count_nonzero(out.data[0]) == 1


def test_flip_zero_field():
    s = SampleTensor(np.zeros((9, 4, 4), np.float32), (0, 1, 2), ((3, 4, 7), (5, 6, 8)))
    assert not flip_h(s).data.any() and not flip_v(s).data.any()


@given(st.integers(0, 10**6))
def test_flips_are_involutions(seed):
    base, *_ = random_base(seed)
    for f in (flip_h, flip_v):
        np.testing.assert_array_equal(f(f(base)).data, base.data)


@given(st.integers(0, 10**6))
def test_flips_commute_with_standardization(seed):
    base, *_ = random_base(seed)
    for f in (flip_h, flip_v):
        a, b = f(standardize_mv(base)), standardize_mv(f(base))
        assert a.data.tobytes() == b.data.tobytes()
        assert a.degenerate == b.degenerate


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 9), st.data())
def test_gridmask_cells_match_enumeration(h, w, period, data):
    patch = data.draw(st.integers(0, period))
    offset = (data.draw(st.integers(0, period - 1)), data.draw(st.integers(0, period - 1)))
    np.testing.assert_array_equal(gridmask_cells(h, w, period, patch, offset),
                                  enumerate_patches(h, w, period, patch, offset))


def test_gridmask_seeded_zero_set():
    cfg = AugmentationConfig(gridmask_period=6, gridmask_ratio=0.5)
    s = SampleTensor(np.ones((2, 13, 17), np.float32))
    out = gridmask(s, cfg, np.random.default_rng(11))
    r = np.random.default_rng(11)
    offset = (int(r.integers(6)), int(r.integers(6)))
    zero = enumerate_patches(13, 17, 6, 3, offset)
    np.testing.assert_array_equal(out.data[0] == 0, zero)
    np.testing.assert_array_equal(out.data[1] == 0, zero)


def test_gridmask_ratio_zero_and_full():
    s = SampleTensor(np.ones((2, 8, 8), np.float32))
    assert np.array_equal(gridmask(s, AugmentationConfig(gridmask_ratio=0.0)).data, s.data)
    assert not gridmask(s, AugmentationConfig(gridmask_ratio=1.0, gridmask_period=4)).data.any()


# -- colour augmentations -------------------------------------------------------------------------------

def test_all_probabilities_zero_is_identity():
    base, *_ = random_base(3)
    cfg = AugmentationConfig.disabled()
    out = rgb_augment(base, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(out.data, base.data)
    a = finish_sample(base, "rgb+mv_im", cfg, np.random.default_rng(0))
    b = finish_sample(base, "rgb+mv_im", None)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)


def test_grayscale_of_gray_image():
    g = np.random.default_rng(4).uniform(0, 255, (5, 6))
    rgb = np.stack([g, g, g])
    np.testing.assert_allclose(grayscale(rgb), rgb, atol=1e-9)


def test_blur_impulse_reproduces_kernel():
    img = np.zeros((3, 11, 11))
    img[:, 5, 5] = 1.0
    out = gaussian_blur(img, 2, 1.0)
    x = np.arange(-2, 3)
    k = np.exp(-x ** 2 / 2.0)
    k /= k.sum()
    np.testing.assert_allclose(out[0, 5, 3:8], k * k[2], atol=1e-12)
    np.testing.assert_allclose(out[1, 3:8, 3:8], np.outer(k, k), atol=1e-12)
    assert abs(out[2].sum() - 1) < 1e-6
    assert abs(gaussian_kernel(2, 1.0).sum() - 1) < 1e-6


@given(st.integers(0, 10**6))
def test_rgb_augment_stays_in_range_and_leaves_motion(seed):
    base, *_ = random_base(seed)
    out = rgb_augment(base, ALL_ON, np.random.default_rng(seed))
    assert out.data[:3].min() >= 0 and out.data[:3].max() <= 255
    np.testing.assert_array_equal(out.data[3:], base.data[3:])


# -- invariants across ops --------------------------------------------------------------------------------

@given(st.integers(0, 10**6))
def test_every_op_preserves_im_consistency(seed):
    base, frame, fld, box = random_base(seed)
    rng = np.random.default_rng(seed)
    assert base.im_consistent()
    ops = [standardize_mv, standardize_rgb, flip_h, flip_v,
           lambda s: gridmask(s, ALL_ON, rng), lambda s: rgb_augment(s, ALL_ON, rng)]
    s = base
    for op in ops:
        s = op(s)
        assert s.im_consistent()
    for mod in ("mv", "mv_p", "mv_im"):
        assert make_sample(frame, fld, box, mod, 16, ALL_ON, frame_rng(seed, 0)).im_consistent()


@given(st.integers(0, 10**6), st.sampled_from(["rgb", "mv", "mv_p", "mv_im", "rgb+mv_im"]))
def test_seeded_reruns_are_bit_identical(seed, modality):
    _, frame, fld, box = random_base(seed)
    cfg = AugmentationConfig(**{**ALL_ON.__dict__, "p_hflip": 0.5, "p_gridmask": 0.5})
    a = make_sample(frame, fld, box, modality, 16, cfg, frame_rng(seed, 3))
    b = make_sample(frame, fld, box, modality, 16, cfg, frame_rng(seed, 3))
    pair_a, pair_b = (a, b) if isinstance(a, tuple) else ((a,), (b,))
    for x, y in zip(pair_a, pair_b):
        assert x.data.tobytes() == y.data.tobytes()


def test_modality_channel_counts():
    _, frame, fld, box = random_base(0)
    sizes = {m: make_sample(frame, fld, box, m, 16) for m in ("rgb", "mv", "mv_p", "mv_im")}
    assert {m: s.channels for m, s in sizes.items()} == {"rgb": 3, "mv": 4, "mv_p": 4, "mv_im": 6}
    rgb, motion = make_sample(frame, fld, box, "rgb+mv_im", 16)
    assert (rgb.channels, motion.channels) == (3, 6)
    assert not sizes["mv_p"].data[2:].any()
    with pytest.raises(ValueError):
        make_sample(frame, None, box, "mv_im", 16)
    with pytest.raises(ValueError):
        make_sample(frame, fld, box, "flow", 16)


# -- frame sampling --------------------------------------------------------------------------------------

def test_sample_frames_short_video():
    assert sample_frames(5, 100) == [0, 1, 2, 3, 4]


def test_sample_frames_exact_length_is_permutation():
    assert sorted(sample_frames(100, 100, seed=4)) == list(range(100))


def test_sample_frames_reproducible_and_distinct():
    a = sample_frames(1000, 100, seed=9)
    assert a == sample_frames(1000, 100, seed=9)
    assert len(set(a)) == 100 and a != sample_frames(1000, 100, seed=10)
    with pytest.raises(ValueError):
        sample_frames(0, 3)


def test_sample_frames_uniform_chi_square():
    counts = np.zeros(1000)
    for seed in range(10_000):
        counts[sample_frames(1000, 100, seed)] += 1
    chi2 = ((counts - 1000) ** 2 / 1000).sum()
    assert stats.chi2.sf(chi2, df=999) > 1e-3


# -- config -----------------------------------------------------------------------------------------------

def test_config_json_roundtrip(tmp_path):
    cfg = AugmentationConfig(p_blur=0.3, seed=5)
    p = tmp_path / "a.json"
    p.write_text(cfg.to_json())
    assert AugmentationConfig.load(p) == cfg


@pytest.mark.parametrize("obj", [{"p_blur": 2.0}, {"unknown": 1}, {"gridmask_period": 0}])
def test_config_rejects_bad_values(obj):
    with pytest.raises(FormatError):
        AugmentationConfig.from_dict(obj)
