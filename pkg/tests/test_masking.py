import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mln.fixtures import box_region, golden_image, planted_edit
from mln.masking import (MaskConfig, MaskPyramid, attention_difference, build_mask, extract_masks,
                         mask_pyramid, middle_layers)
from mln.pipeline import mask_config, regen_config
from mln.predictor import embed_prompt
from mln.tokenizer import ScaleSchedule, quantize


def count_oracle(d, q):
    v = np.sort(d.ravel())
    pos = (len(v) - 1) * q / 100
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    thr = v[lo] + (pos - lo) * (v[hi] - v[lo])
    return int(np.sum(d > thr)), d > thr


def test_difference_hand_cases():
    a = np.array([1.0, 0.0]).reshape(1, 1, 1, 2)
    b = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
    np.testing.assert_array_equal(attention_difference(a, b), [[1.0, 1.0]])
    assert np.array_equal(attention_difference(a, a), np.zeros((1, 2)))


def test_difference_averages_heads_then_layers(rng):
    a = rng.random((3, 2, 4, 4))
    b = rng.random((3, 2, 4, 4))

    def norm(m):
        return (m - m.min()) / (m.max() - m.min())

    per_layer = [np.mean([np.abs(norm(a[l, t]) - norm(b[l, t])) for t in range(2)], axis=0)
                 for l in (1, 2)]
    np.testing.assert_allclose(attention_difference(a, b, (1, 2)), np.mean(per_layer, axis=0), atol=1e-15)
    with pytest.raises(ValueError):
        attention_difference(a, b[:2])
    with pytest.raises(ValueError):
        attention_difference(a, b, (2, 3))


def test_build_mask_top_two():
    d = np.arange(1, 11).reshape(2, 5) / 10
    m = build_mask(d, 80)
    assert m.sum() == 2 and m.ravel()[-2:].tolist() == [1.0, 1.0]


def test_constant_difference_gives_empty_mask():
    assert not build_mask(np.full((4, 4), 0.3), 50).any()
    assert not build_mask(np.zeros((4, 4)), 80).any()


def test_cardinality_and_membership_match_oracle(rng):
    for i in range(500):
        d = rng.random((8, 8)) if i % 3 else rng.integers(0, 4, size=(8, 8)).astype(float)
        q = (60, 70, 80, 90)[i % 4]
        count, member = count_oracle(d, q)
        m = build_mask(d, q)
        assert m.sum() == count
        assert np.array_equal(m.astype(bool), member)


@settings(max_examples=60)
@given(arrays(np.float64, (6, 6), elements=st.floats(0, 1), unique=True),
       st.floats(1, 98), st.floats(1, 98))
def test_raising_q_never_adds_pixels(d, q1, q2):
    lo, hi = sorted((q1, q2))
    assert np.all(build_mask(d, hi) <= build_mask(d, lo))


def test_pyramid_constant_bases():
    sched = ScaleSchedule.square((1, 2, 3, 8, 16))
    ones = mask_pyramid(np.ones((16, 16)), sched)
    zeros = mask_pyramid(np.zeros((16, 16)), sched)
    assert all(m.all() for m in ones.masks)
    assert zeros.is_empty()
    for k in range(1, 6):
        assert np.array_equal(ones.edit(k) + ones.keep(k), np.ones(sched.dims(k)))


def test_pyramid_half_plane():
    sched = ScaleSchedule.square((1, 8, 16))
    base = np.zeros((16, 16))
    base[:, 8:] = 1
    m8 = mask_pyramid(base, sched).edit(2)
    want = np.zeros((8, 8))
    want[:, 4:] = 1
    # boundary columns may flip by at most one pixel
    diff_cols = np.nonzero(np.any(m8 != want, axis=0))[0]
    assert all(abs(c - 3.5) <= 1 for c in diff_cols)
    assert np.all(m8 == m8[0])


def test_pyramid_rejects_wrong_base():
    with pytest.raises(ValueError):
        mask_pyramid(np.ones((8, 8)), ScaleSchedule.square((1, 16)))


def test_config_checks_and_middle_layers():
    assert middle_layers(6) == (2, 3)
    assert middle_layers(30) == (10, 19)
    with pytest.raises(ValueError):
        MaskConfig(q=100).check(8, 6)
    with pytest.raises(ValueError):
        MaskConfig(start=8).check(8, 6)
    with pytest.raises(ValueError):
        MaskConfig(layers=(3, 6)).check(8, 6)


def test_identical_prompts_empty_mask(desk, desk_model):
    f = desk_model.codec.encode(golden_image(1))
    src, _ = quantize(f, desk_model.codebook, desk_model.schedule)
    p = embed_prompt("a red ball on grass")
    masks = extract_masks(src, p, embed_prompt("a red ball on grass"), mask_config(desk),
                          desk_model.predictor, regen_config(desk))
    assert masks.is_empty()


def test_different_prompts_give_q_sized_mask(desk, desk_model):
    f = desk_model.codec.encode(golden_image(2))
    src, _ = quantize(f, desk_model.codebook, desk_model.schedule)
    masks = extract_masks(src, embed_prompt("a cat"), embed_prompt("a dog"), mask_config(desk),
                          desk_model.predictor, regen_config(desk))
    frac = masks.finest.mean()
    assert 0 < frac <= 0.2 + 1e-9


def test_planted_region_recovered(desk, desk_model):
    f = desk_model.codec.encode(golden_image(3))
    src, _ = quantize(f, desk_model.codebook, desk_model.schedule)
    region = box_region((16, 16), 4, 6, 4, 8)
    planted = planted_edit(src, desk_model.codebook.size, region, keyword="dog")
    masks = extract_masks(src, embed_prompt("a photo of a cat"), embed_prompt("a photo of a dog"),
                          mask_config(desk), desk_model.predictor.with_planted(planted),
                          regen_config(desk))
    got = masks.finest.astype(bool)
    iou = (got & region).sum() / (got | region).sum()
    assert iou >= 0.5
