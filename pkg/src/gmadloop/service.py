"""HTTP rating service: serves per-subject session manifests and accepts
rating submissions into an append-only log.

The log file is the same CSV format as every other ratings file, so the
labeling stage can ingest it directly. Submissions are idempotent on
(subject, session, image); training-session submissions are recorded under
a ``.train`` session suffix and skipped at ingest. Endpoint paths and field
names are documented in API.md at the repository root.
"""

from __future__ import annotations

import csv
import threading
import zlib
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import storage
from .storage import Workspace

RATINGS_HEADER = ["subject_id", "session_id", "image_id", "score", "timestamp"]


class RatingSubmission(BaseModel):
    subject_id: str = Field(min_length=1)
    session_id: str = Field(min_length=1)
    image_id: str = Field(min_length=1)
    score: float = Field(ge=0.0, le=100.0)
    training: bool = False


class RatingLog:
    """Append-only CSV log with an in-memory idempotency index."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.lock = threading.Lock()
        self.seen: set = set()
        if self.path.exists():
            with open(self.path, newline="") as fh:
                reader = csv.reader(fh)
                next(reader, None)
                for row in reader:
                    self.seen.add((row[0], row[1], row[2]))

    def append(self, subject_id: str, session_id: str, image_id: str, score: float) -> bool:
        """Returns True when stored, False when it was a duplicate."""
        key = (subject_id, session_id, image_id)
        with self.lock:
            if key in self.seen:
                return False
            new_file = not self.path.exists()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", newline="") as fh:
                writer = csv.writer(fh)
                if new_file:
                    writer.writerow(RATINGS_HEADER)
                timestamp = datetime.now(timezone.utc).isoformat()
                writer.writerow([subject_id, session_id, image_id, repr(score), timestamp])
            self.seen.add(key)
            return True

    def count_for(self, subject_id: str, session_prefix: str) -> tuple[int, int]:
        with self.lock:
            main = sum(
                1
                for (s, sess, _) in self.seen
                if s == subject_id and sess == session_prefix
            )
            training = sum(
                1
                for (s, sess, _) in self.seen
                if s == subject_id and sess == f"{session_prefix}.train"
            )
        return main, training


def presentation_order(subject_id: str, pair_id: str, x: str, y: str) -> tuple[str, str]:
    """Deterministic left/right assignment per (subject, pair)."""
    seed = zlib.crc32(f"{subject_id}|{pair_id}".encode())
    flip = np.random.default_rng(seed).integers(0, 2)
    return (y, x) if flip else (x, y)


def create_app(workdir, training_pairs: int = 5) -> FastAPI:
    ws = Workspace(workdir)
    app = FastAPI(title="gmadloop rating service")
    logs: dict = {}
    logs_lock = threading.Lock()

    def log_for(round_index: int) -> RatingLog:
        with logs_lock:
            if round_index not in logs:
                logs[round_index] = RatingLog(ws.round_path(round_index, "service_ratings.csv"))
            return logs[round_index]

    manifests: dict = {}
    pool_cache: list = []

    def load_manifest(round_index: int):
        if round_index not in manifests:
            path = ws.round_path(round_index, "manifest.csv")
            if not path.exists():
                raise HTTPException(status_code=404, detail=f"no exported manifest for round {round_index}")
            _, manifests[round_index] = storage.read_manifest_csv(path)
        return manifests[round_index]

    def load_pool():
        if not pool_cache:
            pool_cache.append(storage.read_pool_csv(ws.pool_path))
        return pool_cache[0]

    @app.get("/api/rounds/{round_index}/session/{subject_id}")
    def get_session(round_index: int, subject_id: str):
        pairs = load_manifest(round_index)
        session_id = f"r{round_index}-{subject_id}"

        def entry(pair, training):
            left, right = presentation_order(subject_id, pair.pair_id, pair.x, pair.y)
            return {"pair_id": pair.pair_id, "left": left, "right": right, "training": training}

        training = [entry(p, True) for p in pairs[: min(training_pairs, len(pairs))]]
        main = [entry(p, False) for p in pairs]
        return {
            "subject_id": subject_id,
            "session_id": session_id,
            "round": round_index,
            "training": training,
            "main": main,
        }

    @app.post("/api/ratings")
    def submit_rating(submission: RatingSubmission):
        if "-" not in submission.session_id or not submission.session_id.startswith("r"):
            raise HTTPException(status_code=400, detail="malformed session id")
        try:
            round_index = int(submission.session_id.split("-", 1)[0][1:])
        except ValueError:
            raise HTTPException(status_code=400, detail="malformed session id") from None
        load_manifest(round_index)  # 404 when the round was never exported
        effective_session = submission.session_id + (".train" if submission.training else "")
        stored = log_for(round_index).append(
            submission.subject_id, effective_session, submission.image_id, submission.score
        )
        return {"status": "stored" if stored else "duplicate"}

    @app.get("/api/rounds/{round_index}/progress/{subject_id}")
    def get_progress(round_index: int, subject_id: str):
        pairs = load_manifest(round_index)
        session_id = f"r{round_index}-{subject_id}"
        main, training = log_for(round_index).count_for(subject_id, session_id)
        return {
            "subject_id": subject_id,
            "session_id": session_id,
            "submitted": main,
            "training_submitted": training,
            "expected": 2 * len(pairs),
        }

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        pool = load_pool()
        if image_id not in pool:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id}")
        record = pool[image_id]
        return {
            "image_id": record.image_id,
            "content_id": record.content_id,
            "distortion_type": record.distortion_type,
            "distortion_level": record.distortion_level,
            "features": record.features.tolist(),
        }

    return app
