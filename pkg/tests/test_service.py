"""Rating service: session manifests, idempotent submissions, progress, durability."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gmadloop import storage
from gmadloop.mining import GmadPair
from gmadloop.pool import ImageRecord
from gmadloop.service import create_app
from gmadloop.storage import Workspace

N_PAIRS = 8


@pytest.fixture
def workdir(tmp_path):
    ws = Workspace(tmp_path)
    rng = np.random.default_rng(0)
    records = [
        ImageRecord(f"img{k:03d}", f"c{k // 2}", "blur", 1 + k % 5, None, rng.normal(size=4))
        for k in range(2 * N_PAIRS)
    ]
    storage.write_pool_csv(ws.pool_path, records)
    pairs = [
        GmadPair(
            pair_id=f"r1-p{k:04d}",
            defender_id="ours",
            attacker_id="ref00",
            level=k % 5,
            x=f"img{2 * k:03d}",
            y=f"img{2 * k + 1:03d}",
            objective_value=float(k),
            role="model-as-defender",
        )
        for k in range(N_PAIRS)
    ]
    storage.write_manifest_csv(ws.round_path(1, "manifest.csv"), 1, pairs)
    return tmp_path


@pytest.fixture
def client(workdir):
    return TestClient(create_app(workdir))


class TestSession:
    def test_manifest_order_preserved_with_training_block(self, client):
        doc = client.get("/api/rounds/1/session/s01").json()
        assert doc["session_id"] == "r1-s01"
        assert [e["pair_id"] for e in doc["main"]] == [f"r1-p{k:04d}" for k in range(N_PAIRS)]
        assert len(doc["training"]) == 5
        assert all(e["training"] for e in doc["training"])

    def test_left_right_deterministic_per_subject(self, client):
        a = client.get("/api/rounds/1/session/s01").json()
        b = client.get("/api/rounds/1/session/s01").json()
        assert a["main"] == b["main"]
        other = client.get("/api/rounds/1/session/s02").json()
        assert [e["left"] for e in a["main"]] != [e["left"] for e in other["main"]]

    def test_sides_are_the_pair_images(self, client):
        doc = client.get("/api/rounds/1/session/s01").json()
        for k, entry in enumerate(doc["main"]):
            assert {entry["left"], entry["right"]} == {f"img{2 * k:03d}", f"img{2 * k + 1:03d}"}

    def test_unknown_round_404(self, client):
        assert client.get("/api/rounds/9/session/s01").status_code == 404


def submit(client, subject, image, score=50.0, training=False, session="r1-%s"):
    return client.post(
        "/api/ratings",
        json={
            "subject_id": subject,
            "session_id": session % subject if "%s" in session else session,
            "image_id": image,
            "score": score,
            "training": training,
        },
    )


class TestSubmission:
    def test_duplicate_stored_once(self, workdir, client):
        assert submit(client, "s01", "img000").json() == {"status": "stored"}
        assert submit(client, "s01", "img000").json() == {"status": "duplicate"}
        log = storage.read_ratings_csv(Workspace(workdir).round_path(1, "service_ratings.csv"))
        assert len(log) == 1

    def test_full_session_yields_2n_non_training_records(self, workdir, client):
        doc = client.get("/api/rounds/1/session/s01").json()
        for entry in doc["training"]:
            for image in (entry["left"], entry["right"]):
                submit(client, "s01", image, training=True)
        for entry in doc["main"]:
            for image in (entry["left"], entry["right"]):
                submit(client, "s01", image)
        log = storage.read_ratings_csv(Workspace(workdir).round_path(1, "service_ratings.csv"))
        main = [r for r in log if not r.session_id.endswith(".train")]
        training = [r for r in log if r.session_id.endswith(".train")]
        assert len(main) == 2 * N_PAIRS
        assert len(training) == 10
        progress = client.get("/api/rounds/1/progress/s01").json()
        assert progress["submitted"] == 2 * N_PAIRS
        assert progress["expected"] == 2 * N_PAIRS
        assert progress["training_submitted"] == 10

    def test_training_and_main_records_distinct(self, client):
        assert submit(client, "s01", "img000", training=True).json() == {"status": "stored"}
        assert submit(client, "s01", "img000", training=False).json() == {"status": "stored"}
        assert submit(client, "s01", "img000", training=True).json() == {"status": "duplicate"}

    def test_idempotency_survives_restart(self, workdir):
        first = TestClient(create_app(workdir))
        submit(first, "s01", "img000")
        fresh = TestClient(create_app(workdir))
        assert submit(fresh, "s01", "img000").json() == {"status": "duplicate"}

    def test_malformed_payloads_rejected(self, client):
        assert submit(client, "s01", "img000", score=250.0).status_code == 422
        assert submit(client, "s01", "img000", session="bogus").status_code == 400
        bad = client.post("/api/ratings", json={"subject_id": "s01"})
        assert bad.status_code == 422
        assert "detail" in bad.json()

    def test_unknown_round_in_session_404(self, client):
        assert submit(client, "s01", "img000", session="r7-s01").status_code == 404


class TestImageEndpoint:
    def test_feature_payload(self, client):
        doc = client.get("/api/images/img003").json()
        assert doc["distortion_type"] == "blur"
        assert len(doc["features"]) == 4

    def test_unknown_image_404(self, client):
        assert client.get("/api/images/ghost").status_code == 404
