import numpy as np
import pytest

from app.core.exceptions import DimensionError
from app.models.wavelet import iwt, merge_freq, split_freq, wt
from app.tensor import Tensor, gradcheck, ops


def test_constant_image_has_no_high_frequency():
    x = Tensor(np.full((3, 4, 4), 0.5))
    bands = wt(x)
    np.testing.assert_allclose(bands.ll.data, np.full((3, 2, 2), 1.0))
    for band in (bands.lh, bands.hl, bands.hh):
        np.testing.assert_array_equal(band.data, np.zeros((3, 2, 2)))


def test_single_block_coefficients():
    # a b / c d = 1 2 / 3 4
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    bands = wt(x)
    assert bands.ll.data.item() == pytest.approx(5.0)
    assert bands.lh.data.item() == pytest.approx(-1.0)
    assert bands.hl.data.item() == pytest.approx(-2.0)
    assert bands.hh.data.item() == pytest.approx(0.0)


def test_round_trip_and_energy(rng):
    for _ in range(100):
        x = Tensor(rng.standard_normal((3, 64, 64)))
        bands = wt(x)
        restored = iwt(bands)
        assert np.max(np.abs(restored.data - x.data)) < 1e-6
        energy = sum(float(np.sum(b.data ** 2)) for b in (bands.ll, bands.lh, bands.hl, bands.hh))
        assert abs(energy - float(np.sum(x.data ** 2))) / float(np.sum(x.data ** 2)) < 1e-4


def test_split_and_merge(rng):
    x = Tensor(rng.uniform(size=(3, 8, 6)))
    lf, hf = split_freq(x)
    assert lf.shape == (3, 4, 3)
    assert hf.shape == (9, 4, 3)
    np.testing.assert_allclose(merge_freq(lf, hf).data, x.data, atol=1e-12)


def test_odd_sizes_rejected():
    with pytest.raises(DimensionError):
        wt(Tensor(np.zeros((3, 5, 4))))
    with pytest.raises(DimensionError):
        merge_freq(Tensor(np.zeros((3, 2, 2))), Tensor(np.zeros((6, 2, 2))))


def test_gradients_flow_through_transform(rng):
    x = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True)
    weights = rng.standard_normal((6, 2, 2))

    def loss():
        _, hf = split_freq(x)
        return ops.sum(ops.mul(hf, weights))

    report = gradcheck(loss, [x], h=1e-5, tolerance=1e-6, max_coords=None)
    assert report.ok, report.summary()


def test_transform_is_linear(rng):
    x = rng.standard_normal((3, 6, 8))
    y = rng.standard_normal((3, 6, 8))
    combined = wt(Tensor(2.0 * x - 0.5 * y))
    first, second = wt(Tensor(x)), wt(Tensor(y))
    for name in ("ll", "lh", "hl", "hh"):
        expected = 2.0 * getattr(first, name).data - 0.5 * getattr(second, name).data
        np.testing.assert_allclose(getattr(combined, name).data, expected, atol=1e-12)
