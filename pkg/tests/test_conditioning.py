import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camtraj.conditioning import (
    ClipLayout,
    GuidanceWeights,
    LayoutError,
    build_extension_input,
    combine_guidance,
    condition_frame_bounds,
    fuse_camera_features,
    masked_diffusion_loss,
    text_guidance,
    validate_condition_frames,
)

from .oracles import exact_guidance, exact_text_cfg

seeds = st.integers(0, 2**32 - 1)
weights = st.floats(0.0, 20.0)


def _triple(rng, n=64, scale=1.0):
    return tuple(scale * rng.standard_normal(n) for _ in range(3))


# guidance

def test_unit_weights_return_full_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(20):
        u, t, f = _triple(rng, scale=float(rng.uniform(1e-3, 1e3)))
        assert np.array_equal(combine_guidance(u, t, f, GuidanceWeights(1.0, 1.0)), f)


@settings(max_examples=100, deadline=None)
@given(seeds, weights)
def test_zero_camera_weight_is_text_cfg(seed, wt):
    u, t, f = _triple(np.random.default_rng(seed))
    out = combine_guidance(u, t, f, GuidanceWeights(wt, 0.0))
    assert np.array_equal(out, exact_text_cfg(u, t, wt))
    assert np.array_equal(out, text_guidance(u, t, wt))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_default_weights_match_exact_evaluation(seed):
    u, t, f = _triple(np.random.default_rng(seed))
    out = combine_guidance(u, t, f)
    assert np.array_equal(out, exact_guidance(u, t, f, 7.5, 8.0))
    direct = u + 7.5 * (t - u) + 8.0 * (f - t)
    np.testing.assert_allclose(out, direct, rtol=1e-12, atol=1e-12 * np.max(np.abs(direct)))


@settings(max_examples=100, deadline=None)
@given(seeds, weights, weights, st.floats(-5, 5), st.floats(-5, 5))
def test_linearity(seed, wt, wc, a, b):
    rng = np.random.default_rng(seed)
    x = _triple(rng)
    y = _triple(rng)
    w = GuidanceWeights(wt, wc)
    lhs = combine_guidance(*(a * p + b * q for p, q in zip(x, y)), w)
    rhs = a * combine_guidance(*x, w) + b * combine_guidance(*y, w)
    scale = max(1.0, (1 + wt + wc) * (abs(a) + abs(b)) * max(np.max(np.abs(v)) for v in (*x, *y)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@settings(max_examples=50)
@given(seeds, weights, weights)
def test_equal_inputs_fixed_point(seed, wt, wc):
    v = np.random.default_rng(seed).standard_normal(16)
    assert np.array_equal(combine_guidance(v, v, v, GuidanceWeights(wt, wc)), v)


def test_guidance_shape_preserved_and_errors():
    rng = np.random.default_rng(1)
    u, t, f = (rng.standard_normal((3, 4)) for _ in range(3))
    assert combine_guidance(u, t, f).shape == (3, 4)
    with pytest.raises(LayoutError):
        combine_guidance(u, t, f[:2])
    with pytest.raises(LayoutError):
        combine_guidance(u, t, np.full((3, 4), np.nan))


@pytest.mark.parametrize("wt,wc", [(-1.0, 1.0), (1.0, float("inf")), (float("nan"), 1.0)])
def test_weights_invariants(wt, wc):
    with pytest.raises(ValueError):
        GuidanceWeights(wt, wc)


# extension layout

def test_layout_two_three_four():
    prev = np.arange(8.0).reshape(2, 4)
    cur = -np.arange(12.0).reshape(3, 4)
    x = build_extension_input(prev, cur)
    assert x.tokens.shape == (5, 5)
    assert x.mask_channel.tolist() == [1, 1, 0, 0, 0]
    assert x.loss_mask.tolist() == [False, False, True, True, True]


def test_layout_without_condition():
    cur = np.ones((3, 2))
    x = build_extension_input(np.zeros((0, 2)), cur)
    assert x.layout.q_prev == 0 and x.loss_mask.all() and not x.mask_channel.any()
    assert build_extension_input([], cur).layout == ClipLayout(0, 3, 2)


@settings(max_examples=100, deadline=None)
@given(seeds, st.integers(0, 20), st.integers(1, 20), st.integers(1, 12))
def test_layout_properties(seed, qp, qc, c):
    rng = np.random.default_rng(seed)
    prev, cur = rng.standard_normal((qp, c)), rng.standard_normal((qc, c))
    x = build_extension_input(prev, cur)
    assert x.tokens.shape == (qp + qc, c + 1)
    assert np.array_equal(x.mask_channel, np.r_[np.ones(qp), np.zeros(qc)])
    assert np.array_equal(x.loss_mask, np.r_[np.zeros(qp, bool), np.ones(qc, bool)])
    a, b = x.split()
    assert np.array_equal(a, prev) and np.array_equal(b, cur)
    assert np.array_equal(x.features, np.concatenate([prev, cur]))


def test_layout_errors():
    with pytest.raises(LayoutError):
        build_extension_input(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(LayoutError):
        build_extension_input(np.ones((2, 3)), np.ones((0, 3)))
    with pytest.raises(LayoutError):
        ClipLayout(-1, 1, 1)


def test_condition_frame_bounds():
    assert condition_frame_bounds(40) == (5, 20)
    assert validate_condition_frames(5, 10) == 5
    with pytest.raises(LayoutError):
        validate_condition_frames(4, 40)
    with pytest.raises(LayoutError):
        validate_condition_frames(21, 40)
    with pytest.raises(LayoutError):
        condition_frame_bounds(9)


# feature fusion

def test_fuse_zero_addends():
    v = np.random.default_rng(2).standard_normal((6, 4))
    assert np.array_equal(fuse_camera_features(v, np.zeros_like(v)), v)
    assert np.array_equal(fuse_camera_features(np.zeros_like(v), v), v)


@settings(max_examples=50)
@given(seeds)
def test_fuse_commutative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 5, 3))
    assert np.array_equal(fuse_camera_features(a, b), fuse_camera_features(b, a))


def test_fuse_shape_mismatch():
    with pytest.raises(LayoutError):
        fuse_camera_features(np.ones((4, 3)), np.ones((4, 2)))


# masked loss

def test_loss_cases():
    y = np.random.default_rng(3).standard_normal((5, 4))
    mask = np.array([False, False, True, True, True])
    assert masked_diffusion_loss(y, y, mask) == 0.0
    assert masked_diffusion_loss(y + 2.0, y, np.ones(5, bool)) == 4.0
    assert masked_diffusion_loss((y + 2.0).ravel(), y.ravel(), np.ones(5, bool)) == 4.0


@settings(max_examples=100, deadline=None)
@given(seeds, st.integers(1, 10), st.integers(1, 10), st.integers(1, 8))
def test_loss_ignores_condition_tokens(seed, qp, qc, c):
    rng = np.random.default_rng(seed)
    x = build_extension_input(rng.standard_normal((qp, c)), rng.standard_normal((qc, c)))
    pred = rng.standard_normal((qp + qc, c))
    target = rng.standard_normal((qp + qc, c))
    base = masked_diffusion_loss(pred, target, x.loss_mask)
    corrupted = pred.copy()
    corrupted[:qp] = 1e300 * rng.standard_normal((qp, c))
    assert masked_diffusion_loss(corrupted, target, x.loss_mask) == base


def test_loss_errors():
    with pytest.raises(LayoutError):
        masked_diffusion_loss(np.ones(6), np.ones(6), np.zeros(3, bool))
    with pytest.raises(LayoutError):
        masked_diffusion_loss(np.ones(7), np.ones(7), np.ones(3, bool))
    with pytest.raises(LayoutError):
        masked_diffusion_loss(np.ones(6), np.ones(4), np.ones(2, bool))
