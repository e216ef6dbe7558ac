import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.api.deps.pipeline import get_pipeline, load_pipeline
from app.core.config import settings
from app.main import app
from app.services.checkpoint import save_model
from app.services.imageio import decode_ppm, encode_ppm

PPM = "image/x-portable-pixmap"


@pytest.fixture
def checkpoint(micro_model, tmp_path):
    return save_model(tmp_path / "joint.ckpt", micro_model, "joint", 3, 7)


@pytest.fixture
def client(checkpoint):
    pipeline = load_pipeline(checkpoint)
    app.dependency_overrides[get_pipeline] = lambda: pipeline
    yield TestClient(app)
    app.dependency_overrides.clear()


@pytest.fixture
def ppm(rng):
    return encode_ppm(rng.uniform(size=(3, 20, 12)))


def test_model_metadata(client):
    response = client.get(f"{settings.API_V1_STR}/model")
    assert response.status_code == 200
    body = response.json()
    assert body["metadata"]["preset"] == "desk"
    assert body["metadata"]["stage"] == "joint"
    assert body["metadata"]["iteration"] == "3"
    assert "model_config" not in body["metadata"]
    assert body["parameters"] > 0


def test_restore_returns_same_size_ppm(client, ppm):
    response = client.post(
        f"{settings.API_V1_STR}/restore",
        params={"seed": 3},
        files={"image": ("in.ppm", ppm, PPM)},
    )
    assert response.status_code == 200
    assert response.headers["content-type"] == PPM
    restored = decode_ppm(response.content)
    assert restored.shape == (3, 20, 12)
    # a fresh model passes its input through
    assert response.content == ppm


def test_restore_rejects_malformed_upload(client):
    response = client.post(
        f"{settings.API_V1_STR}/restore",
        files={"image": ("in.ppm", b"P5\n2 2\n255\n\x00\x00\x00\x00", PPM)},
    )
    assert response.status_code == 400
    assert "in.ppm" in response.json()["detail"]


def test_metrics_endpoint(client, ppm, rng):
    other = encode_ppm(rng.uniform(size=(3, 20, 12)))
    response = client.post(
        f"{settings.API_V1_STR}/metrics",
        files={"image": ("a.ppm", ppm, PPM), "reference": ("b.ppm", other, PPM)},
    )
    assert response.status_code == 200
    body = response.json()
    assert np.isfinite(body["psnr"])
    assert -1.0 <= body["ssim"] <= 1.0


def test_identical_images_report_null_psnr(client, ppm):
    response = client.post(
        f"{settings.API_V1_STR}/metrics",
        files={"image": ("a.ppm", ppm, PPM), "reference": ("b.ppm", ppm, PPM)},
    )
    assert response.status_code == 200
    assert response.json()["psnr"] is None


def test_metrics_size_mismatch(client, ppm, rng):
    other = encode_ppm(rng.uniform(size=(3, 8, 8)))
    response = client.post(
        f"{settings.API_V1_STR}/metrics",
        files={"image": ("a.ppm", ppm, PPM), "reference": ("b.ppm", other, PPM)},
    )
    assert response.status_code == 400


def test_no_checkpoint_configured(monkeypatch):
    monkeypatch.setattr(settings, "CHECKPOINT_PATH", None)
    response = TestClient(app).get(f"{settings.API_V1_STR}/model")
    assert response.status_code == 503


def test_unreadable_checkpoint(monkeypatch, tmp_path):
    path = tmp_path / "broken.ckpt"
    path.write_bytes(b"not a checkpoint")
    monkeypatch.setattr(settings, "CHECKPOINT_PATH", path)
    response = TestClient(app).get(f"{settings.API_V1_STR}/model")
    assert response.status_code == 503


def test_configured_checkpoint_is_loaded(monkeypatch, checkpoint):
    monkeypatch.setattr(settings, "CHECKPOINT_PATH", checkpoint)
    response = TestClient(app).get(f"{settings.API_V1_STR}/model")
    assert response.status_code == 200
    assert response.json()["path"] == str(checkpoint)
