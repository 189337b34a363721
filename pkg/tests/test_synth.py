import numpy as np
import pytest

from deformreg.losses import box_sum, smoothness
from deformreg.metrics import dice_multilabel, ncc
from deformreg.synth import MARGIN, make_pair, make_phantom, random_smooth_dvf


def test_zero_amplitude_field():
    assert not random_smooth_dvf((16, 16, 16), 0.0, 2.0, seed=1).any()


@pytest.mark.parametrize("amp", [0.5, 3.0])
def test_field_max_equals_amplitude(amp):
    d = random_smooth_dvf((20, 18, 16), amp, 3.0, seed=2)
    assert d.shape == (3, 20, 18, 16)
    assert np.abs(d).max() == pytest.approx(amp, abs=1e-9)


def test_field_margin_is_zero():
    d = random_smooth_dvf((16, 16, 16), 3.0, 2.0, seed=3)
    m = MARGIN
    inner = np.zeros((16, 16, 16), dtype=bool)
    inner[m:-m, m:-m, m:-m] = True
    assert not d[:, ~inner].any()


def test_field_rejects_bad_params():
    with pytest.raises(ValueError):
        random_smooth_dvf((16, 16, 16), -1.0, 2.0)
    with pytest.raises(ValueError):
        random_smooth_dvf((16, 16, 16), 1.0, 0.0)


def test_smoothness_decreases_with_sigma():
    wins = 0
    for seed in range(3):
        r = [smoothness(random_smooth_dvf((24, 24, 24), 2.0, s, seed)) for s in (1.0, 2.0, 4.0)]
        wins += r[0] > r[1] > r[2]
    assert wins >= 2


def test_phantom_deterministic_and_labelled():
    a, la = make_phantom((16, 16, 16), n_blobs=4, seed=7)
    b, lb = make_phantom((16, 16, 16), n_blobs=4, seed=7)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert set(np.unique(la)) <= {0, 1, 2, 3, 4}
    for j in range(1, 5):
        assert np.any(la == j)
    assert np.any(la == 0)


def test_phantom_non_constant_in_every_window():
    img, _ = make_phantom((24, 24, 24), seed=0)
    r = 4
    count = box_sum(np.ones(img.shape), r)
    mean = box_sum(img, r) / count
    var = box_sum(img * img, r) / count - mean**2
    assert var[r:-r, r:-r, r:-r].min() > 1e-8


def test_phantom_rejects_small_dims():
    with pytest.raises(ValueError):
        make_phantom((8, 16, 16))
    with pytest.raises(ValueError):
        make_phantom((16, 16, 16), n_blobs=0)


def test_pair_zero_amplitude():
    f, m, d, lf, lm = make_pair((16, 16, 16), amplitude=0.0, seed=4)
    assert np.array_equal(f, m) and np.array_equal(lf, lm)
    assert not d.any()


def test_pair_is_misaligned():
    f, m, _, lf, lm = make_pair((32, 32, 32), amplitude=3.0, smooth_sigma=4.0, seed=5)
    assert dice_multilabel(lf, lm)[1] < 1.0
    assert ncc(f, m) < 1.0


def test_pair_is_pure():
    a = make_pair((16, 16, 16), seed=9)
    b = make_pair((16, 16, 16), seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
