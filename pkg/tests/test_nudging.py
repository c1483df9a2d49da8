import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mln.fixtures import golden_image
from mln.masking import MaskPyramid
from mln.numerics import softmax
from mln.nudging import (SHARP_PROFILE, SMOOTH_PROFILE, make_schedule, masked_nudge, nudge,
                         nudged_regenerate)
from mln.pipeline import regen_config
from mln.predictor import RegenConfig, embed_prompt, regenerate
from mln.tokenizer import quantize


def test_named_profiles_at_ten_scales():
    assert make_schedule("smooth", 10, 7).alphas == SMOOTH_PROFILE
    assert make_schedule("sharp", 10, 7).alphas == SHARP_PROFILE
    assert SMOOTH_PROFILE == (12, 11.5, 11, 10, 9, 8, 6, 3, 1.5, 0.5)
    assert SHARP_PROFILE == (12, 12, 12, 12, 12, 12, 12, 4, 2, 0)
    assert make_schedule("smooth", 10, 7).beta == 12.0
    assert make_schedule("smooth", 10, 7, alpha_max=0).alphas == (0.0,) * 10


def test_resampled_profiles():
    s = make_schedule("smooth", 8, 6)
    assert len(s.alphas) == 8
    assert s.alphas[0] == 12.0 and s.alphas[-1] == 0.5
    assert all(a >= b for a, b in zip(s.alphas, s.alphas[1:]))
    half = make_schedule("smooth", 14, 9, alpha_max=6)
    assert max(half.alphas) == 6.0 and half.beta == 6.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        make_schedule("smooth", 10, 11)
    with pytest.raises(ValueError):
        make_schedule("wavy", 10, 3)
    with pytest.raises(ValueError):
        make_schedule("custom", 4, 2, alphas=(1, 2, 3))
    assert make_schedule("custom", 3, 2, alphas=(3, 2, 1), beta=7).beta == 7.0


def test_worked_example():
    z = np.array([2.0, 0.0]).reshape(1, 1, 2)
    out = nudge(z, np.zeros((1, 1), dtype=int), 1.0)
    p = np.exp(2) / (np.exp(2) + 1)
    np.testing.assert_allclose(out.ravel(), [3 - p, -(1 - p)], atol=1e-12)
    np.testing.assert_allclose(out.ravel(), [2.1192, -0.1192], atol=1e-4)


def test_zero_strength_is_bitwise_identity(rng):
    z = rng.normal(size=(4, 5, 9))
    r = rng.integers(0, 9, size=(4, 5))
    out = nudge(z, r, 0.0)
    assert np.array_equal(out, z) and out is not z


def test_huge_strength_forces_source(rng):
    z = rng.normal(scale=3, size=(25, 40, 16))
    r = rng.integers(0, 16, size=(25, 40))
    assert np.array_equal(nudge(z, r, 1e6).argmax(-1), r)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3), st.floats(0, 50))
def test_shift_equivariance(seed, c, alpha):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(3, 3, 6))
    r = rng.integers(0, 6, size=(3, 3))
    np.testing.assert_allclose(nudge(z + c, r, alpha), nudge(z, r, alpha) + c, rtol=0, atol=1e-9)


def test_direction_sign_structure(rng):
    z = rng.normal(size=(6, 6, 7))
    r = rng.integers(0, 7, size=(6, 6))
    d = nudge(z, r, 1.0) - z
    picked = np.take_along_axis(d, r[..., None], axis=-1)[..., 0]
    assert np.all(picked > 0)
    others = d.copy()
    np.put_along_axis(others, r[..., None], -1.0, axis=-1)
    assert np.all(others <= 0)
    np.testing.assert_allclose(d.sum(-1), 0, atol=1e-12)


def test_collapse_laws(rng):
    z = rng.normal(size=(5, 4, 8))
    r = rng.integers(0, 8, size=(5, 4))
    ones, zeros = np.ones((5, 4)), np.zeros((5, 4))
    assert np.array_equal(masked_nudge(z, r, 3.0, 12.0, ones, zeros), nudge(z, r, 3.0))
    assert np.array_equal(masked_nudge(z, r, 3.0, 12.0, zeros, ones), nudge(z, r, 12.0))
    m = (rng.random((5, 4)) > 0.5).astype(float)
    np.testing.assert_array_equal(masked_nudge(z, r, 4.0, 4.0, m, 1 - m), nudge(z, r, 4.0))


def test_masked_nudge_mixes_per_position(rng):
    z = rng.normal(size=(2, 2, 5))
    r = rng.integers(0, 5, size=(2, 2))
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = masked_nudge(z, r, 2.0, 9.0, m, 1 - m)
    a, b = nudge(z, r, 2.0), nudge(z, r, 9.0)
    assert np.array_equal(out[0, 0], a[0, 0]) and np.array_equal(out[0, 1], b[0, 1])


def test_masks_must_be_complementary(rng):
    z = rng.normal(size=(2, 2, 3))
    r = np.zeros((2, 2), dtype=int)
    with pytest.raises(ValueError):
        masked_nudge(z, r, 1.0, 1.0, np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        masked_nudge(z, r, 1.0, 1.0, np.full((2, 2), 0.5), np.full((2, 2), 0.5))
    with pytest.raises(ValueError):
        nudge(z, np.full((2, 2), 3), 1.0)


@pytest.fixture(scope="module")
def source(desk_model):
    f = desk_model.codec.encode(golden_image(4))
    src, _ = quantize(f, desk_model.codebook, desk_model.schedule)
    return src


def test_zero_schedule_equals_plain_regeneration(desk, desk_model, source):
    sched = make_schedule("smooth", desk.K, desk.k_cut, alpha_max=0.0, beta=0.0)
    empty = MaskPyramid.full(desk_model.schedule, 0.0)
    prompt = embed_prompt("a dog")
    a, _ = nudged_regenerate(source, prompt, sched, empty, desk.s, desk_model.predictor, regen_config(desk))
    b, _ = regenerate(source, desk.s, prompt, desk_model.predictor, regen_config(desk))
    assert a.equals(b)


def test_large_beta_reproduces_source(desk, desk_model, source):
    sched = make_schedule("smooth", desk.K, desk.s + 1, beta=1e6)
    empty = MaskPyramid.full(desk_model.schedule, 0.0)
    out, _ = nudged_regenerate(source, embed_prompt("a dog"), sched, empty, desk.s,
                               desk_model.predictor, regen_config(desk))
    assert out.equals(source)


def test_scales_below_cutoff_pass_through(desk, desk_model, source):
    cut = desk.s + 2
    empty = MaskPyramid.full(desk_model.schedule, 0.0)
    prompt = embed_prompt("a dog")
    nudged, _ = nudged_regenerate(source, prompt, make_schedule("smooth", desk.K, cut, beta=1e6),
                                  empty, desk.s, desk_model.predictor, regen_config(desk))
    plain, _ = regenerate(source, desk.s, prompt, desk_model.predictor, regen_config(desk))
    for k in range(desk.s + 1, cut):
        assert np.array_equal(nudged[k], plain[k])
    for k in range(1, desk.s + 1):
        assert np.array_equal(nudged[k], source[k])


def test_nudged_regenerate_validates(desk, desk_model, source):
    empty = MaskPyramid.full(desk_model.schedule, 0.0)
    with pytest.raises(ValueError):
        nudged_regenerate(source, embed_prompt("x"), make_schedule("smooth", 5, 3), empty, 2,
                          desk_model.predictor)
    with pytest.raises(ValueError):
        nudged_regenerate(source, embed_prompt("x"), make_schedule("smooth", desk.K, 3), empty,
                          desk.K, desk_model.predictor)
