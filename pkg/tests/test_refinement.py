import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from mln.refinement import (PRESETS, RefineConfig, project, refine, refine_features, residual_norm,
                            soft_assign)
from mln.tokenizer import Codebook


def in_hull(point, vertices):
    # feasibility of w >= 0, sum w = 1, w @ V = point
    V = len(vertices)
    A_eq = np.vstack([vertices.T, np.ones((1, V))])
    b_eq = np.concatenate([point, [1.0]])
    res = linprog(np.zeros(V), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * V, method="highs")
    return res.status == 0


def test_config_validation():
    for bad in (dict(iterations=0), dict(tau=0.0), dict(step=0.0), dict(step=1.5), dict(tol=-1)):
        with pytest.raises(ValueError):
            RefineConfig(**bad)


def test_presets():
    assert (PRESETS["512"].iterations, PRESETS["512"].tau) == (5, 0.2)
    assert (PRESETS["1024"].iterations, PRESETS["1024"].tau) == (3, 0.8)


def test_soft_assign_limits(rng):
    cb = Codebook.uniform(12, 3, seed=2)
    z = rng.normal(size=(50, 3))
    w = soft_assign(z, cb, 1e9)
    np.testing.assert_allclose(w, 1 / 12, atol=1e-6)
    sharp = soft_assign(z, cb, 1e-6)
    assert np.array_equal(sharp.argmax(1), np.argmax(z @ cb.vectors.T, axis=1))
    assert np.all(sharp.max(1) > 1 - 1e-9)
    with pytest.raises(ValueError):
        soft_assign(z, cb, 0.0)


def test_soft_assign_symmetric_pair():
    cb = Codebook(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    np.testing.assert_allclose(soft_assign(np.array([[0.0, 3.0]]), cb, 0.2), [[0.5, 0.5]])


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_soft_assign_rows_on_simplex(seed, tau):
    rng = np.random.default_rng(seed)
    cb = Codebook.uniform(10, 4, seed=seed % 5)
    w = soft_assign(rng.normal(size=(20, 4)), cb, tau)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-9)


def test_projection_lies_in_hull(rng):
    for d in (2, 3):
        cb = Codebook.uniform(9, d, seed=d)
        out = project(rng.normal(scale=2, size=(5, 5, d)), cb, 0.3).reshape(-1, d)
        assert all(in_hull(p, cb.vectors) for p in out)


def test_projection_of_codebook_vector_at_low_temperature():
    cb = Codebook.uniform(16, 4, seed=7)
    norms = np.sum(cb.vectors ** 2, axis=1)
    j = int(np.argmax(norms))
    # c_j must maximise <c_j, c_i> over i for the limit to land on c_j
    assert np.argmax(cb.vectors @ cb.vectors[j]) == j
    out = project(cb.vectors[j].reshape(1, 1, 4), cb, 1e-6)
    np.testing.assert_allclose(out[0, 0], cb.vectors[j], atol=1e-9)


def test_zero_residual_projects_to_codebook_mean():
    cb = Codebook.uniform(8, 3, seed=1, centered=False)
    np.testing.assert_allclose(project(np.zeros((2, 2, 3)), cb, 0.2)[0, 0], cb.vectors.mean(0), atol=1e-15)


def test_zero_residual_stops_immediately(rng):
    f = rng.normal(size=(4, 4, 3))
    cb = Codebook.uniform(8, 3)
    out, trace = refine(f, f, cb, np.ones((4, 4)))
    assert np.array_equal(out, f)
    assert trace.stop_reason == "tolerance" and trace.norms == [0.0]


def test_full_edit_mask_leaves_features_bitwise(rng):
    cb = Codebook.uniform(16, 3, seed=3)
    f = rng.normal(size=(6, 6, 3))
    f0 = rng.normal(size=(6, 6, 3))
    for cfg in (RefineConfig(), RefineConfig(iterations=9, tau=0.05, step=0.5, tol=0.0)):
        out, _ = refine(f, f0, cb, np.zeros((6, 6)), cfg)
        assert np.array_equal(out, f0)


def test_gating_is_bitwise_inside_edit_region(rng):
    cb = Codebook.uniform(16, 3, seed=3)
    f = rng.normal(scale=0.3, size=(6, 6, 3))
    f0 = rng.normal(scale=0.3, size=(6, 6, 3))
    keep = (rng.random((6, 6)) > 0.4).astype(float)
    out, _ = refine(f, f0, cb, keep)
    edited = keep == 0
    assert np.array_equal(out[edited], f0[edited])
    assert not np.array_equal(out[~edited], f0[~edited])


def test_matches_reference_loop(rng):
    cb = Codebook.uniform(16, 3, seed=5)
    f = rng.normal(scale=0.3, size=(4, 4, 3))
    f0 = rng.normal(scale=0.3, size=(4, 4, 3))
    keep = (rng.random((4, 4)) > 0.5).astype(float)
    cfg = RefineConfig(iterations=4, tau=0.2, step=0.7, tol=0.0)
    f_hat, f_out, norms = f0.copy(), f0.copy(), []
    for _ in range(cfg.iterations):
        rest = f - f_hat
        norms.append(np.mean(np.sqrt(np.sum(rest ** 2, axis=-1))))
        z = rest.reshape(-1, 3)
        s = z @ cb.vectors.T / cfg.tau
        w = np.exp(s - s.max(1, keepdims=True))
        w /= w.sum(1, keepdims=True)
        proj = (w @ cb.vectors).reshape(rest.shape)
        f_hat = f_hat + cfg.step * proj
        f_out = f_out + cfg.step * proj * keep[..., None]
    out, trace = refine(f, f0, cb, keep, cfg)
    np.testing.assert_allclose(out, f_out, atol=1e-12)
    np.testing.assert_allclose(trace.norms, norms, atol=1e-12)


def test_early_stop_honours_tolerance(rng):
    cb = Codebook.uniform(32, 3, seed=0)
    f = rng.normal(scale=0.2, size=(4, 4, 3))
    f0 = f + rng.normal(scale=0.05, size=f.shape)
    _, full = refine(f, f0, cb, np.ones((4, 4)), RefineConfig(iterations=6, tol=0.0))
    tol = (full.norms[1] + full.norms[2]) / 2
    _, trace = refine(f, f0, cb, np.ones((4, 4)), RefineConfig(iterations=6, tol=tol))
    below = [i for i, r in enumerate(trace.norms) if r < tol]
    assert trace.stop_reason == "tolerance"
    assert below == [len(trace.norms) - 1]
    assert len(trace.norms) <= 6


def test_residual_norm_is_mean_per_position():
    r = np.zeros((1, 2, 2))
    r[0, 0] = [3.0, 4.0]
    assert residual_norm(r) == 2.5


def test_balanced_codebook_gives_zero_correction():
    # stands in for a zero-only codebook, which the V >= 2 rule forbids
    cb = Codebook(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    f0 = np.zeros((3, 3, 2))
    f = np.zeros((3, 3, 2))
    f[..., 1] = 0.7
    out, trace = refine(f, f0, cb, np.ones((3, 3)))
    assert np.array_equal(out, f0)
    assert len(trace.norms) == 5


def test_pipeline_hook(rng):
    cb = Codebook.uniform(8, 3)
    f = rng.normal(size=(4, 4, 3))
    f0 = rng.normal(size=(4, 4, 3))
    out, trace = refine_features(f0, f, cb, np.ones((4, 4)), RefineConfig(), style=True)
    assert np.array_equal(out, f0) and trace is None
    out, trace = refine_features(f0, f, cb, np.ones((4, 4)), None)
    assert np.array_equal(out, f0) and trace is None
    out, trace = refine_features(f0, f, cb, np.ones((4, 4)), RefineConfig())
    assert trace is not None and not np.array_equal(out, f0)


def test_shape_errors():
    cb = Codebook.uniform(8, 3)
    with pytest.raises(ValueError):
        refine(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), cb, np.ones((2, 2)))
    with pytest.raises(ValueError):
        refine(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), cb, np.full((2, 2), 0.5))
    with pytest.raises(ValueError):
        project(np.zeros((2, 2, 4)), cb, 0.2)
