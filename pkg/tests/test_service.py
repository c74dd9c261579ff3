import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from demark.config import ModelConfig
from demark.geometry import rasterize_polygons
from demark.images import decode_b64, decode_png, encode_b64, encode_png, to_uint8
from demark.model import build_model, save_checkpoint, write_model_card
from demark.service import create_app


def tiny_model():
    cfg = ModelConfig(
        h=32, w=32, d=8, downsample_factor=8, ta_blocks_per_branch=2,
        ffc_blocks=3, init_seed=5,
    )
    return build_model(cfg).eval()


@pytest.fixture(scope="module")
def client():
    app = create_app(model=tiny_model(), model_id="toy-test")
    return TestClient(app)


def b64_image(seed=0, size=32):
    rng = np.random.default_rng(seed)
    return encode_b64(rng.random((size, size, 3)).astype(np.float32))


def b64_mask(size=32, fill=0.0):
    return encode_b64(np.full((size, size, 1), fill, dtype=np.float32))


class TestHealth:
    def test_ready_with_model(self, client):
        body = client.get("/v1/health").json()
        assert body["status"] == "ready"
        assert body["model_id"] == "toy-test"
        assert body["uptime_s"] >= 0

    def test_degraded_without_model(self):
        app = create_app()
        body = TestClient(app).get("/v1/health").json()
        assert body["status"] == "degraded"

    def test_config_hash_matches_model_card(self, tmp_path):
        model = tiny_model()
        save_checkpoint(model, tmp_path / "checkpoint.npz")
        write_model_card(model.config, tmp_path / "model_card.json", extra={"step": 0})
        app = create_app(checkpoint_dir=tmp_path)
        body = TestClient(app).get("/v1/health").json()
        assert body["status"] == "ready"
        assert body["config_hash"] == model.config.config_hash()


class TestRemove:
    def test_zero_mask_returns_valid_image(self, client):
        resp = client.post("/v1/remove", json={"image": b64_image(), "mask": b64_mask()})
        assert resp.status_code == 200
        out = decode_b64(resp.json()["image"])
        assert out.shape == (32, 32, 3)

    def test_blind_flag_without_mask(self, client):
        resp = client.post(
            "/v1/remove",
            json={"image": b64_image(), "options": {"blind": True, "return_cbkg": True}},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["cbkg"] is not None
        assert decode_b64(body["cbkg"]).shape == (32, 32, 3)

    def test_repeated_request_identical_image_bytes(self, client):
        payload = {"image": b64_image(3), "mask": b64_mask(fill=1.0)}
        r1 = client.post("/v1/remove", json=payload).json()
        r2 = client.post("/v1/remove", json=payload).json()
        assert base64.b64decode(r1["image"]) == base64.b64decode(r2["image"])
        assert r1["model_id"] == r2["model_id"]

    def test_polygon_payload_equals_bitmap_of_same_mask(self, client):
        poly = [[(4.0, 4.0), (28.0, 6.0), (20.0, 26.0)]]
        raster = rasterize_polygons(poly, 32, 32).astype(np.float32)[:, :, None]
        img = b64_image(9)
        via_poly = client.post("/v1/remove", json={"image": img, "polygons": poly}).json()
        via_bitmap = client.post(
            "/v1/remove", json={"image": img, "mask": encode_b64(raster)}
        ).json()
        assert via_poly["image"] == via_bitmap["image"]

    def test_dilate_radius_applied(self, client):
        poly = [[(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)]]
        img = b64_image(10)
        plain = client.post("/v1/remove", json={"image": img, "polygons": poly}).json()
        grown = client.post(
            "/v1/remove",
            json={"image": img, "polygons": poly, "options": {"dilate_radius": 4}},
        ).json()
        assert plain["image"] != grown["image"]

    def test_response_dimensions_follow_request(self, client):
        resp = client.post(
            "/v1/remove", json={"image": b64_image(size=40), "options": {"blind": True}}
        )
        assert resp.status_code == 200
        assert decode_b64(resp.json()["image"]).shape == (40, 40, 3)

    def test_concurrent_identical_requests_agree(self, client):
        from concurrent.futures import ThreadPoolExecutor

        payload = {"image": b64_image(7), "mask": b64_mask(fill=1.0)}
        with ThreadPoolExecutor(max_workers=4) as pool:
            futures = [pool.submit(client.post, "/v1/remove", json=payload) for _ in range(4)]
            bodies = [f.result().json() for f in futures]
        assert all(b["image"] == bodies[0]["image"] for b in bodies)


class TestErrors:
    def test_undecodable_image_400(self, client):
        resp = client.post("/v1/remove", json={"image": "!!!notb64!!!", "mask": b64_mask()})
        assert resp.status_code == 400

    def test_mask_size_mismatch_400(self, client):
        resp = client.post(
            "/v1/remove", json={"image": b64_image(), "mask": b64_mask(size=16)}
        )
        assert resp.status_code == 400

    def test_no_mask_no_blind_400(self, client):
        resp = client.post("/v1/remove", json={"image": b64_image()})
        assert resp.status_code == 400

    def test_payload_too_large_413(self):
        app = create_app(model=tiny_model(), size_limit=64)
        resp = TestClient(app).post(
            "/v1/remove", json={"image": b64_image(), "mask": b64_mask()}
        )
        assert resp.status_code == 413

    def test_no_model_503(self):
        app = create_app()
        resp = TestClient(app).post(
            "/v1/remove", json={"image": b64_image(), "options": {"blind": True}}
        )
        assert resp.status_code == 503


class TestRoundTrip:
    def test_png_roundtrip_lossless(self):
        rng = np.random.default_rng(11)
        img = rng.random((20, 24, 3)).astype(np.float32)
        decoded = decode_png(encode_png(img))
        assert np.array_equal(to_uint8(decoded), to_uint8(img))

    def test_mask_bitmap_roundtrip_pixel_exact(self):
        rng = np.random.default_rng(12)
        mask = (rng.random((32, 32, 1)) > 0.6).astype(np.float32)
        back = decode_b64(encode_b64(mask), channels=1)
        assert np.array_equal((back >= 0.5).astype(np.float32), mask)
