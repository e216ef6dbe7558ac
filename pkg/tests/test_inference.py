import numpy as np
import pytest

from app.core.exceptions import CheckpointError, DimensionError
from app.schemas.train import SynthSpec
from app.services.checkpoint import load_model, save_model
from app.services.data import generate_dataset
from app.services.imageio import read_image, write_image
from app.services.inference import crop_image, evaluate, infer, pad_image, padded_size, restore_image
from app.tensor import Tensor, no_grad


@pytest.fixture
def identity_checkpoint(micro_model, tmp_path):
    # a fresh model returns its input: the output projection starts at zero
    return save_model(tmp_path / "identity.ckpt", micro_model, "joint", 0, 7)


@pytest.fixture
def active_checkpoint(micro_model, tmp_path):
    output = micro_model.restorer.output
    output.weight.data = np.random.default_rng(3).normal(0.0, 0.1, size=output.weight.shape).astype(output.weight.dtype)
    return save_model(tmp_path / "active.ckpt", micro_model, "joint", 0, 7)


def test_padded_size():
    assert padded_size(16, 8, 16) == 16
    assert padded_size(17, 8, 16) == 24
    assert padded_size(5, 8, 16) == 16
    assert padded_size(30, 4, 0) == 32


def test_pad_and_crop(rng):
    image = Tensor(rng.uniform(size=(3, 20, 18)))
    padded, size = pad_image(image, 8, 16)
    assert padded.shape == (3, 24, 24)
    assert size == (20, 18)
    np.testing.assert_array_equal(padded.data[:, :20, :18], image.data)
    # reflect padding mirrors without repeating the border row
    np.testing.assert_array_equal(padded.data[:, 20, :18], image.data[:, 18, :])
    np.testing.assert_array_equal(crop_image(padded, size).data, image.data)


def test_small_images_use_edge_padding(rng):
    image = Tensor(rng.uniform(size=(3, 3, 5)))
    padded, _ = pad_image(image, 8, 16)
    assert padded.shape == (3, 16, 16)
    np.testing.assert_array_equal(padded.data[:, -1, :5], image.data[:, -1, :])


def test_pad_rejects_non_images():
    with pytest.raises(DimensionError):
        pad_image(Tensor(np.zeros((4, 4))), 8)


def test_fresh_model_is_identity(identity_checkpoint, tmp_path, rng):
    source = write_image(tmp_path / "in.ppm", rng.uniform(size=(3, 20, 22)))
    out = tmp_path / "out.ppm"
    result = infer(source, identity_checkpoint, seed=7, out_path=out, gt_path=source)
    assert (result.height, result.width) == (20, 22)
    assert out.read_bytes() == source.read_bytes()
    assert result.metrics.psnr == float("inf")
    assert result.metrics.ssim == pytest.approx(1.0)


def test_restoration_is_deterministic(active_checkpoint, tmp_path, rng):
    source = write_image(tmp_path / "in.ppm", rng.uniform(size=(3, 16, 16)))
    first = infer(source, active_checkpoint, seed=11, out_path=tmp_path / "a.ppm")
    second = infer(source, active_checkpoint, seed=11, out_path=tmp_path / "b.ppm")
    assert first.output_path != second.output_path
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
    assert (tmp_path / "a.ppm").read_bytes() != source.read_bytes()


def test_file_inference_matches_in_memory_restore(active_checkpoint, tmp_path, rng):
    source = write_image(tmp_path / "in.ppm", rng.uniform(size=(3, 16, 16)))
    model, _ = load_model(active_checkpoint)
    image = read_image(source)
    with no_grad():
        expected = model.restore(image, seed=5)
    np.testing.assert_allclose(restore_image(model, image, seed=5).data, expected.data, atol=1e-6)
    infer(source, active_checkpoint, seed=5, out_path=tmp_path / "out.ppm")
    written = read_image(tmp_path / "out.ppm").data
    np.testing.assert_allclose(written, np.clip(expected.data, 0.0, 1.0), atol=1.0 / 255)


def test_infer_without_metrics(identity_checkpoint, tmp_path, rng):
    source = write_image(tmp_path / "in.ppm", rng.uniform(size=(3, 16, 16)))
    result = infer(source, identity_checkpoint, seed=7)
    assert result.output_path is None
    assert result.metrics is None


def test_missing_checkpoint(tmp_path, rng):
    source = write_image(tmp_path / "in.ppm", rng.uniform(size=(3, 16, 16)))
    with pytest.raises(CheckpointError):
        infer(source, tmp_path / "absent.ckpt", seed=7)


def test_evaluate_identity_model(identity_checkpoint, tmp_path):
    generate_dataset(tmp_path / "data", count=2, size=16, spec=SynthSpec(seed=3))
    report = evaluate(tmp_path / "data", identity_checkpoint, seed=7)
    assert report.pairs == 2
    assert report.restored.psnr == pytest.approx(report.input.psnr)
    assert report.psnr_gain == pytest.approx(0.0, abs=1e-9)
    limited = evaluate(tmp_path / "data", identity_checkpoint, seed=7, limit=1)
    assert limited.pairs == 1
