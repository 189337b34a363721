import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deformreg.metrics import dice_binary, dice_multilabel, ncc, ssim
from oracles import dice_naive, ssim_naive


def test_dice_binary_examples():
    a = np.zeros((2, 2, 2))
    a[0, 0, 0] = a[0, 0, 1] = 1
    assert dice_binary(a, a) == 1.0
    b = np.zeros((2, 2, 2))
    b[1, 1, 1] = 1
    assert dice_binary(a, b) == 0.0
    c = np.zeros((2, 2, 2))
    c[0, 0, 0] = c[1, 0, 0] = 1
    assert dice_binary(a, c) == 0.5
    assert dice_binary(np.zeros((2, 2, 2)), np.zeros((2, 2, 2))) == 1.0


def test_dice_binary_rejects_non_binary():
    with pytest.raises(ValueError):
        dice_binary(np.full((2, 2, 2), 2.0), np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        dice_binary(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


@given(st.integers(0, 2**32 - 1))
def test_dice_binary_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((4, 4, 4)) < 0.3
    b = rng.random((4, 4, 4)) < 0.5
    assert dice_binary(a, b) == dice_binary(b, a)


def test_dice_multilabel_examples(rng):
    lf = rng.integers(0, 4, size=(6, 6, 6)).astype(float)
    scores, mean = dice_multilabel(lf, lf)
    assert mean == 1.0 and set(scores) == {1, 2, 3}
    scores, mean = dice_multilabel(lf, np.zeros_like(lf))
    assert mean == 0.0 and all(v == 0.0 for v in scores.values())


def test_dice_multilabel_matches_oracle(rng):
    lf = rng.integers(0, 3, size=(8, 8, 8)).astype(float)
    lw = rng.integers(0, 3, size=(8, 8, 8)).astype(float)
    scores, mean = dice_multilabel(lf, lw)
    for lab in (1, 2):
        assert scores[lab] == pytest.approx(dice_naive(lf == lab, lw == lab), abs=1e-12)
    assert mean == pytest.approx((scores[1] + scores[2]) / 2, abs=1e-15)


def test_dice_multilabel_explicit_labels(rng):
    lf = rng.integers(0, 5, size=(6, 6, 6)).astype(float)
    scores, _ = dice_multilabel(lf, lf, labels=[2, 7])
    # a label absent from both volumes is vacuously perfect
    assert scores == {2: 1.0, 7: 1.0}


def test_ncc_examples(rng):
    f = rng.normal(size=(5, 5, 5))
    assert ncc(f, f) == pytest.approx(1.0, abs=1e-12)
    assert ncc(f, -f) == pytest.approx(-1.0, abs=1e-12)
    assert ncc(f, 2 * f + 3) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        ncc(f, np.ones_like(f))


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-5, 5))
def test_ncc_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(4, 4, 4))
    w = rng.normal(size=(4, 4, 4))
    assert ncc(f, a * w + b) == pytest.approx(ncc(f, w), abs=1e-9)


def test_ssim_examples(rng):
    a = rng.random((6, 6, 6))
    assert ssim(a, a, 1.0) == pytest.approx(1.0, abs=1e-15)
    b = a + 0.1
    c1, c2 = 0.01**2, 0.03**2
    mu, var = a.mean(), a.var()
    expected = (2 * mu * (mu + 0.1) + c1) * (2 * var + c2) / ((mu**2 + (mu + 0.1) ** 2 + c1) * (2 * var + c2))
    assert ssim(a, b, 1.0) == pytest.approx(expected, abs=1e-14)
    assert ssim(a, b, 1.0) < 1.0
    with pytest.raises(ValueError):
        ssim(a, a, 0.0)


def test_ssim_matches_oracle_and_is_symmetric(rng):
    a = rng.random((8, 8, 8))
    b = rng.random((8, 8, 8))
    assert ssim(a, b, 1.0) == pytest.approx(ssim_naive(a, b, 1.0), abs=1e-12)
    assert ssim(a, b, 1.0) == ssim(b, a, 1.0)
