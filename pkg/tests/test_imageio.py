import numpy as np
import pytest

from app.core.config import settings
from app.core.exceptions import ImageFormatError
from app.services.imageio import decode_ppm, encode_ppm, read_image, write_image
from app.tensor import Tensor


def test_decode_minimal_header():
    data = b"P6\n2 2\n255\n" + bytes(range(12))
    image = decode_ppm(data)
    assert image.shape == (3, 2, 2)
    assert image[0, 0, 0] == 0.0
    assert image[2, 1, 1] == pytest.approx(11 / 255)


def test_decode_skips_comments():
    data = b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 128])
    np.testing.assert_allclose(decode_ppm(data)[:, 0, 0], [1.0, 0.0, 128 / 255], rtol=1e-6)


@pytest.mark.parametrize("data", [
    b"P5\n1 1\n255\n\x00",
    b"P6\n1 1\n65535\n" + bytes(6),
    b"P6\n2 2\n255\n" + bytes(5),
    b"P6\n2",
    b"P6\nx 2\n255\n" + bytes(12),
])
def test_decode_rejects_malformed(data):
    with pytest.raises(ImageFormatError):
        decode_ppm(data)


def test_encode_clamps():
    image = np.full((3, 1, 2), 1.5)
    image[:, 0, 1] = -0.2
    data = encode_ppm(image)
    assert data.startswith(b"P6\n2 1\n255\n")
    assert list(data[-6:]) == [255, 255, 255, 0, 0, 0]


def test_write_read_round_trip(tmp_path, rng):
    image = Tensor(rng.uniform(size=(3, 5, 7)).astype(np.float32))
    path = write_image(tmp_path / "nested" / "img.ppm", image)
    restored = read_image(path)
    assert restored.shape == (3, 5, 7)
    assert np.max(np.abs(restored.data - image.data)) <= 1.0 / 255.0


def test_png_requires_switch(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "ENABLE_PNG", False)
    with pytest.raises(ImageFormatError):
        write_image(tmp_path / "img.png", np.zeros((3, 2, 2)))


def test_png_round_trip(tmp_path, rng, monkeypatch):
    monkeypatch.setattr(settings, "ENABLE_PNG", True)
    image = rng.uniform(size=(3, 4, 4))
    restored = read_image(write_image(tmp_path / "img.png", image))
    assert np.max(np.abs(restored.data - image)) <= 1.0 / 255.0 + 1e-6


def test_missing_file(tmp_path):
    with pytest.raises(ImageFormatError):
        read_image(tmp_path / "absent.ppm")


def test_corrupt_png_is_a_format_error(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "ENABLE_PNG", True)
    path = tmp_path / "broken.png"
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + bytes(10))
    with pytest.raises(ImageFormatError):
        read_image(path)


def test_plain_ppm_is_rejected():
    with pytest.raises(ImageFormatError):
        decode_ppm(b"P3\n1 1\n255\n0 0 0\n")
