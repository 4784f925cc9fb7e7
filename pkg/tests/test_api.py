"""
HTTP API tests against an in-process client with a tiny model injected
"""
import base64
import io

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from app.services.image_processor import png_bytes
from app.services.mdcn_arch import build_model
from app.services.model_service import SRModelService
from main import app
from tests.helpers import smooth_image


@pytest.fixture
def image_png():
    return png_bytes(smooth_image(12, 10, seed=3))


@pytest.fixture
def client(micro_config):
    with TestClient(app) as client:
        app.state.model_service = SRModelService(checkpoint_path="micro.mdcn", params=build_model(micro_config))
        yield client


@pytest.fixture
def unconfigured_client():
    with TestClient(app) as client:
        app.state.model_service = SRModelService(checkpoint_path="")
        yield client


def test_root(client):
    data = client.get("/").json()
    assert data["model"] == "MDCN"
    assert data["endpoints"]["sr_upscale"] == "/api/sr/upscale"


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    data = response.json()
    assert data["status"] == "healthy"
    assert data["model_loaded"] is True
    assert data["checkpoint"] == "micro.mdcn"


def test_upload_returns_png(client, image_png):
    response = client.post(
        "/api/sr/upscale",
        files={"image": ("lr.png", image_png, "image/png")},
        data={"factor": "4"},
    )
    assert response.status_code == 200
    assert response.headers["content-type"] == "image/png"
    assert response.headers["x-sr-factor"] == "4"
    assert Image.open(io.BytesIO(response.content)).size == (40, 48)


def test_upload_with_ensemble(client, image_png):
    response = client.post(
        "/api/sr/upscale",
        files={"image": ("lr.png", image_png, "image/png")},
        data={"factor": "2", "ensemble": "true"},
    )
    assert response.status_code == 200
    assert Image.open(io.BytesIO(response.content)).size == (20, 24)


def test_upload_rejects_unsupported_format(client):
    response = client.post("/api/sr/upscale", files={"image": ("notes.txt", b"hello", "text/plain")})
    assert response.status_code == 400
    assert "Unsupported file format" in response.json()["detail"]


def test_upload_incompatible_factor(client, image_png):
    response = client.post(
        "/api/sr/upscale",
        files={"image": ("lr.png", image_png, "image/png")},
        data={"factor": "3"},
    )
    assert response.status_code == 400
    assert response.json()["detail"].startswith("incompatible-factor:")


def test_base64(client, image_png):
    payload = {"image_base64": "data:image/png;base64," + base64.b64encode(image_png).decode(), "factor": 2}
    response = client.post("/api/sr/upscale-base64", json=payload)
    assert response.status_code == 200
    data = response.json()
    assert data["success"] is True
    assert data["factor"] == 2
    assert data["input_info"]["width"] == 10
    assert data["output_info"] == {"width": 20, "height": 24, "mode": "RGB", "format": "PNG"}
    decoded = Image.open(io.BytesIO(base64.b64decode(data["image_base64"])))
    assert decoded.size == (20, 24)


def test_base64_garbage(client):
    response = client.post("/api/sr/upscale-base64", json={"image_base64": "***"})
    assert response.status_code == 400
    assert response.json()["detail"].startswith("unusable-image:")


def test_model_info(client):
    data = client.get("/api/sr/model-info").json()
    assert data["status"] == "loaded"
    assert data["supported_factors"] == [2, 4, 8]
    assert data["tail_factor"] == 2
    assert data["config"]["feat"] == 4


def test_without_checkpoint(unconfigured_client, image_png):
    response = unconfigured_client.post("/api/sr/upscale", files={"image": ("lr.png", image_png, "image/png")})
    assert response.status_code == 400
    assert response.json()["detail"].startswith("config:")
    assert unconfigured_client.get("/health").json()["model_loaded"] is False
    assert unconfigured_client.get("/api/sr/model-info").json()["status"] == "not_loaded"
