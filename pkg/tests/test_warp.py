import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deformreg.volume import Volume
from deformreg.warp import warp_backward, warp_labels_trilinear, warp_nearest, warp_trilinear
from oracles import central_differences, warp_naive


def _random_field(rng, dims, scale=1.5):
    return rng.uniform(-scale, scale, size=(3, *dims))


def _away_from_integers(d, margin=1e-3):
    frac = np.abs(d - np.round(d))
    return frac > margin


def test_identity_warp_is_exact(rng):
    m = rng.normal(size=(5, 6, 7))
    assert np.array_equal(warp_trilinear(m, np.zeros((3, 5, 6, 7))), m)


def test_integer_shift_matches_manual_shift(rng):
    m = rng.normal(size=(8, 8, 8))
    d = np.zeros((3, 8, 8, 8))
    d[0] = 1.0
    expected = np.zeros_like(m)
    expected[:-1] = m[1:]
    np.testing.assert_array_equal(warp_trilinear(m, d), expected)


def test_half_shift_on_linear_ramp():
    m = np.broadcast_to(np.arange(8.0)[:, None, None], (8, 8, 8)).copy()
    d = np.zeros((3, 8, 8, 8))
    d[0] = 0.5
    out = warp_trilinear(m, d)
    np.testing.assert_allclose(out[:-1], (np.arange(7.0) + 0.5)[:, None, None] + 0 * out[:-1], atol=1e-14)


def test_matches_per_voxel_oracle(rng):
    m = rng.normal(size=(5, 4, 6))
    d = _random_field(rng, m.shape, 2.5)
    np.testing.assert_allclose(warp_trilinear(m, d), warp_naive(m, d), rtol=0, atol=1e-12)


def test_dims_mismatch():
    with pytest.raises(ValueError):
        warp_trilinear(np.zeros((4, 4, 4)), np.zeros((3, 4, 4, 5)))
    with pytest.raises(ValueError):
        warp_trilinear(Volume.labels(np.zeros((2, 2, 2))), np.zeros((3, 2, 2, 2)))


@given(st.integers(0, 2**32 - 1))
def test_output_within_range_or_zero(seed):
    rng = np.random.default_rng(seed)
    m = rng.uniform(1.0, 3.0, size=(5, 5, 5))
    out = warp_trilinear(m, _random_field(rng, m.shape, 3.0))
    # convex combination of in-grid values plus zero-padding
    assert out.min() >= -1e-12
    assert out.max() <= m.max() + 1e-12


def test_backward_zero_upstream(rng):
    m = rng.normal(size=(4, 4, 4))
    gd, gm = warp_backward(m, _random_field(rng, m.shape), np.zeros(m.shape))
    assert not gd.any() and not gm.any()


def test_backward_identity_delta(rng):
    m = rng.normal(size=(6, 6, 6))
    up = np.zeros(m.shape)
    up[2, 3, 1] = 1.0
    _, gm = warp_backward(m, np.zeros((3, 6, 6, 6)), up)
    np.testing.assert_array_equal(gm, up)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_adjoint_identity_in_moving_image(seed):
    rng = np.random.default_rng(seed)
    dims = (6, 7, 5)
    d = _random_field(rng, dims, 2.0)
    a = rng.normal(size=dims)
    b = rng.normal(size=dims)
    _, gm = warp_backward(rng.normal(size=dims), d, b)
    # warp is linear in m, so J_m a = warp(a, d)
    assert np.sum(warp_trilinear(a, d) * b) == pytest.approx(np.sum(a * gm), rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_grad_d_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dims = (6, 6, 6)
    m = rng.normal(size=dims)
    up = rng.normal(size=dims)
    d = _random_field(rng, dims)
    gd, _ = warp_backward(m, d, up)
    fn = lambda x: float(np.sum(up * warp_trilinear(m, x.reshape(d.shape))))
    ok = np.flatnonzero(_away_from_integers(d).ravel())
    coords = rng.choice(ok, size=120, replace=False)
    fd = central_differences(fn, d, 1e-4, coords)
    for i, v in fd.items():
        a = gd.ravel()[i]
        assert abs(a - v) <= 1e-4 * max(abs(a), abs(v), 1e-8), (i, a, v)


def test_nearest_examples():
    lab = np.zeros((6, 6, 6))
    lab[2:4, 1:5, 2:3] = 3
    lab[0, 0, 0] = 1
    zero = np.zeros((3, 6, 6, 6))
    assert np.array_equal(warp_nearest(lab, zero), lab)
    d = zero.copy()
    d[1] = 1.0
    expected = np.zeros_like(lab)
    expected[:, :-1] = lab[:, 1:]
    assert np.array_equal(warp_nearest(lab, d), expected)
    d = zero.copy()
    d[0] = 0.4
    assert np.array_equal(warp_nearest(lab, d), lab)
    d[0] = 0.5  # ties round up
    expected = np.zeros_like(lab)
    expected[:-1] = lab[1:]
    assert np.array_equal(warp_nearest(lab, d), expected)


def test_labels_trilinear_uses_raw_values():
    lab = np.zeros((4, 4, 4))
    lab[2:] = 4.0
    d = np.zeros((3, 4, 4, 4))
    d[0] = 0.5
    out = warp_labels_trilinear(Volume.labels(lab), d)
    assert out[1, 0, 0] == 2.0
