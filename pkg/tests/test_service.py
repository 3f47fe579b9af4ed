import base64
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from resincam.imaging import RasterImage, mask_from_image
from resincam.service import create_app

from conftest import paint, solid


def png_bytes(img):
    buf = io.BytesIO()
    Image.fromarray(img.array, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def mask_bits_from_b64(b64):
    data = base64.b64decode(b64)
    arr = np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.uint8)
    return mask_from_image(RasterImage(arr)).bits


@pytest.fixture
def client():
    return TestClient(create_app())


def open_session(client, img, config):
    response = client.post(
        "/sessions",
        files={"image": ("img.png", png_bytes(img), "image/png")},
        data={"config": json.dumps(config)},
    )
    assert response.status_code == 200, response.text
    return response.json()


THRESHOLD_CFG = {
    "background": {"mode": "chroma-key", "key_color": [0, 255, 0], "tolerance": 10},
    "backend": {"variant": "threshold", "threshold_mode": "fixed", "fixed_threshold": 128},
}


def two_blob_setup():
    """Light ground, dark blob A (16 px) seeded by the 1x1 grid, dark
    blob B (9 px) off-grid; ground truth covers both blobs."""
    img = solid(24, 12, (220, 220, 220))
    img = paint(img, 10, 4, 13, 7, (30, 30, 30))   # blob A around the grid center (12, 6)
    img = paint(img, 18, 2, 20, 4, (70, 40, 30))   # blob B, different dark tone
    config = {
        "background": {"mode": "chroma-key", "key_color": [220, 220, 220], "tolerance": 10},
        "grid": {"rows": 1, "cols": 1, "patch_size": 1},
        "backend": {"variant": "region_grow", "color_tol": 10, "connectivity": 4},
        "accept_threshold": 0.5,
    }
    truth = np.zeros((12, 24), dtype=bool)
    truth[4:8, 10:14] = True
    truth[2:5, 18:21] = True
    return img, config, truth


class TestHealth:
    def test_healthz(self, client):
        response = client.get("/healthz")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}


class TestCreateSession:
    def test_all_background_gives_empty_mask(self, client):
        img = solid(8, 8, (0, 255, 0))
        body = open_session(client, img, THRESHOLD_CFG)
        assert mask_bits_from_b64(body["mask_png_b64"]).sum() == 0

    def test_two_tone_threshold_blob(self, client, two_tone):
        img, blob = two_tone
        cfg = dict(THRESHOLD_CFG)
        cfg["background"] = {"mode": "chroma-key", "key_color": [0, 255, 0], "tolerance": 0}
        body = open_session(client, img, cfg)
        assert len(body["proposals"]) == 1
        assert body["proposals"][0]["confidence"] == 1.0
        assert np.array_equal(mask_bits_from_b64(body["mask_png_b64"]), blob.bits)

    def test_malformed_png_rejected(self, client):
        response = client.post(
            "/sessions",
            files={"image": ("bad.png", b"this is not a png", "image/png")},
            data={"config": "{}"},
        )
        assert response.status_code == 400
        assert response.json()["code"] == "decode-error"

    def test_bad_config_rejected(self, client):
        response = client.post(
            "/sessions",
            files={"image": ("img.png", png_bytes(solid(4, 4, (1, 2, 3))), "image/png")},
            data={"config": "{not json"},
        )
        assert response.status_code == 400
        assert response.json()["code"] == "bad-config"

    def test_unknown_session_404(self, client):
        response = client.get("/sessions/nope/mask.png")
        assert response.status_code == 404
        assert response.json()["code"] == "unknown-session"


class TestPrompts:
    def test_fg_prompt_inside_retained_is_noop(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        before = mask_bits_from_b64(body["mask_png_b64"])
        response = client.post(f"/sessions/{body['id']}/prompts",
                               json={"x": 11, "y": 5, "label": "fg"})
        assert response.status_code == 200
        assert response.json()["delta"] == 0
        assert np.array_equal(mask_bits_from_b64(response.json()["mask_png_b64"]), before)

    def test_fg_prompt_grows_by_blob(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        assert mask_bits_from_b64(body["mask_png_b64"]).sum() == 16  # blob A only
        response = client.post(f"/sessions/{body['id']}/prompts",
                               json={"x": 19, "y": 3, "label": "fg"})
        assert response.status_code == 200
        assert response.json()["delta"] == 9  # blob B pixel count

    def test_bg_prompt_shrinks(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.post(f"/sessions/{body['id']}/prompts",
                               json={"x": 11, "y": 5, "label": "bg"})
        assert response.status_code == 200
        assert response.json()["delta"] == -16  # blob A removed

    def test_out_of_bounds_prompt(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.post(f"/sessions/{body['id']}/prompts",
                               json={"x": 99, "y": 0, "label": "fg"})
        assert response.status_code == 400
        assert response.json()["code"] == "out-of-bounds"

    def test_bad_label(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.post(f"/sessions/{body['id']}/prompts",
                               json={"x": 1, "y": 1, "label": "maybe"})
        assert response.status_code == 400

    def test_undo_restores_exactly(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        sid = body["id"]
        before_png = client.get(f"/sessions/{sid}/mask.png").content
        applied = client.post(f"/sessions/{sid}/prompts", json={"x": 19, "y": 3, "label": "fg"})
        index = applied.json()["prompt_index"]
        after_png = client.get(f"/sessions/{sid}/mask.png").content
        assert after_png != before_png
        undone = client.delete(f"/sessions/{sid}/prompts/{index}")
        assert undone.status_code == 200
        assert undone.json()["delta"] == -9
        assert client.get(f"/sessions/{sid}/mask.png").content == before_png

    def test_delete_unknown_index(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.delete(f"/sessions/{body['id']}/prompts/0")
        assert response.status_code == 404


class TestDeterminismAndIsolation:
    def test_replay_reproduces_bytes(self, client):
        img, config, _ = two_blob_setup()
        history = [{"x": 19, "y": 3, "label": "fg"}, {"x": 11, "y": 5, "label": "bg"}]
        masks = []
        for _ in range(2):
            body = open_session(client, img, config)
            for point in history:
                client.post(f"/sessions/{body['id']}/prompts", json=point)
            masks.append(client.get(f"/sessions/{body['id']}/mask.png").content)
        assert masks[0] == masks[1]

    def test_sessions_isolated(self, client):
        img, config, _ = two_blob_setup()
        a = open_session(client, img, config)
        b = open_session(client, img, config)
        baseline = client.get(f"/sessions/{b['id']}/mask.png").content
        client.post(f"/sessions/{a['id']}/prompts", json={"x": 19, "y": 3, "label": "fg"})
        # Session b never saw a's prompt, and a fresh session starts clean.
        assert client.get(f"/sessions/{b['id']}/mask.png").content == baseline
        assert mask_bits_from_b64(open_session(client, img, config)["mask_png_b64"]).sum() == 16


class TestGcodeExport:
    def test_empty_mask_program(self, client):
        # All-background image: the final mask is empty, but there is no
        # wood to cut either, so the program is header/footer only.
        img = solid(8, 8, (0, 255, 0))
        body = open_session(client, img, THRESHOLD_CFG)
        response = client.post(f"/sessions/{body['id']}/gcode", json={"mm_per_pixel": 1.0})
        assert response.status_code == 200
        doc = response.json()
        assert doc["removed_cells"] == 0
        assert doc["cut_mm"] == 0.0
        assert doc["gcode"].splitlines() == [
            "G21", "G90", "M3 S10000", "G0 Z5.000", "G0 X0.000 Y0.000", "M5"]

    def test_fully_retained_mask_cuts_nothing(self, client):
        # Dark image, nothing matches the chroma key: all retained.
        img = solid(6, 6, (20, 20, 20))
        body = open_session(client, img, THRESHOLD_CFG)
        response = client.post(f"/sessions/{body['id']}/gcode", json={"mm_per_pixel": 1.0})
        doc = response.json()
        assert doc["removed_cells"] == 0
        assert doc["cut_mm"] == 0.0
        lines = doc["gcode"].splitlines()
        assert lines == ["G21", "G90", "M3 S10000", "G0 Z5.000", "G0 X0.000 Y0.000", "M5"]

    def test_run_fixture_line(self, client):
        # Dark retained top row; light (non-resin) wood on the bottom row
        # becomes a 3x1 removal run at y = 0.
        img = solid(3, 2, (20, 20, 20))
        img = paint(img, 0, 1, 2, 1, (200, 200, 200))
        body = open_session(client, img, THRESHOLD_CFG)
        response = client.post(f"/sessions/{body['id']}/gcode", json={"mm_per_pixel": 1.0})
        doc = response.json()
        assert "G1 X2.000 Y0.000 F300" in doc["gcode"].splitlines()
        assert doc["removed_cells"] == 3

    def test_removed_cells_always_matches_simulator(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.post(f"/sessions/{body['id']}/gcode",
                               json={"mm_per_pixel": 1.0, "optimize": True})
        doc = response.json()
        # Foreground is the two blobs (25 px); blob A (16 px) is retained,
        # so exactly blob B's 9 cells get removed.
        assert doc["removed_cells"] == 9

    def test_invalid_machine_config(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.post(f"/sessions/{body['id']}/gcode", json={"mm_per_pixel": -1.0})
        assert response.status_code == 400
        assert response.json()["code"] == "bad-machine-config"

    def test_missing_scale(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.post(f"/sessions/{body['id']}/gcode", json={})
        assert response.status_code == 400


class TestEvaluation:
    def test_refinement_raises_iou_and_undo_restores(self, client):
        img, config, truth_bits = two_blob_setup()
        body = open_session(client, img, config)
        sid = body["id"]
        truth_img = RasterImage(
            np.where(truth_bits[:, :, None], 255, 0).astype(np.uint8).repeat(3, axis=2))
        upload = client.post(f"/sessions/{sid}/truth",
                             files={"truth": ("t.png", png_bytes(truth_img), "image/png")})
        assert upload.status_code == 200

        first = client.get(f"/sessions/{sid}/evaluation").json()
        assert first["iou_percent"] == 64.0  # 16 / 25
        before_png = client.get(f"/sessions/{sid}/mask.png").content

        applied = client.post(f"/sessions/{sid}/prompts", json={"x": 19, "y": 3, "label": "fg"})
        second = client.get(f"/sessions/{sid}/evaluation").json()
        assert second["iou_percent"] > first["iou_percent"]
        assert second["iou_percent"] == 100.0

        client.delete(f"/sessions/{sid}/prompts/{applied.json()['prompt_index']}")
        assert client.get(f"/sessions/{sid}/mask.png").content == before_png
        assert client.get(f"/sessions/{sid}/evaluation").json()["iou_percent"] == first["iou_percent"]

    def test_truth_via_query_path(self, client, tmp_path):
        img, config, truth_bits = two_blob_setup()
        body = open_session(client, img, config)
        truth_img = RasterImage(
            np.where(truth_bits[:, :, None], 255, 0).astype(np.uint8).repeat(3, axis=2))
        path = tmp_path / "truth.png"
        Image.fromarray(truth_img.array, mode="RGB").save(str(path), format="PNG")
        response = client.get(f"/sessions/{body['id']}/evaluation", params={"truth": str(path)})
        assert response.status_code == 200
        assert response.json()["quality"] == "Good"

    def test_no_truth_is_error(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        response = client.get(f"/sessions/{body['id']}/evaluation")
        assert response.status_code == 400
        assert response.json()["code"] == "no-truth"

    def test_truth_dimension_mismatch(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        wrong = solid(4, 4, (255, 255, 255))
        response = client.post(f"/sessions/{body['id']}/truth",
                               files={"truth": ("t.png", png_bytes(wrong), "image/png")})
        assert response.status_code == 400
        assert response.json()["code"] == "dimension-mismatch"

    def test_grade_reported_for_nonempty_mask(self, client):
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        truth_img = solid(24, 12, (255, 255, 255))
        client.post(f"/sessions/{body['id']}/truth",
                    files={"truth": ("t.png", png_bytes(truth_img), "image/png")})
        doc = client.get(f"/sessions/{body['id']}/evaluation").json()
        assert doc["grade"] == "A"  # blob A pixels are (30, 30, 30), luma 30


class TestPersistence:
    def test_history_written(self, tmp_path):
        client = TestClient(create_app(persist_dir=str(tmp_path)))
        img, config, _ = two_blob_setup()
        body = open_session(client, img, config)
        client.post(f"/sessions/{body['id']}/prompts", json={"x": 19, "y": 3, "label": "fg"})
        root = tmp_path / body["id"]
        assert (root / "image.png").exists()
        history = json.loads((root / "history.json").read_text())
        assert history["prompts"] == [{"x": 19, "y": 3, "label": "fg"}]
