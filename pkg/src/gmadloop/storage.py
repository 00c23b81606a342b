"""On-disk workspace layout and file formats.

Tabular artifacts are headered CSV; structured artifacts (world, config,
checkpoints, reports, round state) are versioned JSON documents. Floats are
written with repr so every file round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .mining import GmadPair, ScoreTable
from .objectives import NoisyPair, PairLabel
from .pool import ImagePool, ImageRecord
from .subjective import MosRecord, RatingRecord


def _fmt(v: float) -> str:
    return repr(float(v))


def write_doc(path, doc: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_doc(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


# --- pool metadata ------------------------------------------------------------


def write_pool_csv(path, records: Sequence[ImageRecord]) -> None:
    dim = records[0].features.shape[0]
    header = ["image_id", "content_id", "distortion_type", "distortion_level", "reference_id"]
    header += [f"f{i}" for i in range(dim)]
    rows = [
        [r.image_id, r.content_id, r.distortion_type, r.distortion_level, r.reference_id or ""]
        + [_fmt(v) for v in r.features]
        for r in records
    ]
    _write_csv(path, header, rows)


def read_pool_csv(path) -> ImagePool:
    header, rows = _read_csv(path)
    n_meta = 5
    if header[:n_meta] != ["image_id", "content_id", "distortion_type", "distortion_level", "reference_id"]:
        raise ValueError(f"{path}: unexpected pool header {header[:n_meta]}")
    records = [
        ImageRecord(
            image_id=row[0],
            content_id=row[1],
            distortion_type=row[2],
            distortion_level=int(row[3]),
            reference_id=row[4] or None,
            features=np.array([float(v) for v in row[n_meta:]]),
        )
        for row in rows
    ]
    return ImagePool(records)


# --- score tables -------------------------------------------------------------


def write_scores_csv(path, table: ScoreTable) -> None:
    rows = []
    for image_id in sorted(table.raw):
        mapped = "" if table.mapped is None else _fmt(table.mapped[image_id])
        rows.append([image_id, table.model_id, _fmt(table.raw[image_id]), mapped])
    _write_csv(path, ["image_id", "model_id", "raw", "mapped"], rows)


def read_scores_csv(path) -> ScoreTable:
    _, rows = _read_csv(path)
    if not rows:
        raise ValueError(f"{path}: empty score table")
    model_id = rows[0][1]
    raw = {row[0]: float(row[2]) for row in rows}
    mapped = None
    if rows[0][3] != "":
        mapped = {row[0]: float(row[3]) for row in rows}
    return ScoreTable(model_id, raw, mapped)


# --- ratings / MOS ------------------------------------------------------------


def write_ratings_csv(path, ratings: Sequence[RatingRecord]) -> None:
    rows = [[r.subject_id, r.session_id, r.image_id, _fmt(r.score), r.timestamp] for r in ratings]
    _write_csv(path, ["subject_id", "session_id", "image_id", "score", "timestamp"], rows)


def read_ratings_csv(path) -> list[RatingRecord]:
    _, rows = _read_csv(path)
    return [
        RatingRecord(subject_id=r[0], session_id=r[1], image_id=r[2], score=float(r[3]), timestamp=r[4])
        for r in rows
    ]


def write_mos_csv(path, records: Sequence[MosRecord]) -> None:
    rows = [
        [m.image_id, _fmt(m.mos), _fmt(m.std), m.n_valid, m.n_rejected]
        for m in sorted(records, key=lambda m: m.image_id)
    ]
    _write_csv(path, ["image_id", "mos", "std", "n_valid", "n_rejected"], rows)


def read_mos_csv(path) -> dict:
    _, rows = _read_csv(path)
    return {
        r[0]: MosRecord(r[0], float(r[1]), float(r[2]), int(r[3]), int(r[4])) for r in rows
    }


# --- labeled pairs ------------------------------------------------------------

LABEL_HEADER = ["pair_id", "x", "y", "p", "source", "case_tag", "role"]


def write_labels_csv(path, labels: Sequence[PairLabel]) -> None:
    rows = [[l.pair_id, l.x, l.y, _fmt(l.p), l.source, l.case, l.role] for l in labels]
    _write_csv(path, LABEL_HEADER, rows)


def read_labels_csv(path) -> list[PairLabel]:
    _, rows = _read_csv(path)
    return [
        PairLabel(x=r[1], y=r[2], p=float(r[3]), source=r[4], pair_id=r[0], case=r[5], role=r[6])
        for r in rows
    ]


# --- annotator vote pairs -----------------------------------------------------


def write_noisy_pairs_csv(path, pairs: Sequence[NoisyPair]) -> None:
    n = len(pairs[0].votes)
    header = ["x", "y"] + [f"q{j}" for j in range(n)]
    rows = [[p.x, p.y] + [int(v) for v in p.votes] for p in pairs]
    _write_csv(path, header, rows)


def read_noisy_pairs_csv(path) -> list[NoisyPair]:
    _, rows = _read_csv(path)
    return [NoisyPair(r[0], r[1], np.array([int(v) for v in r[2:]], dtype=np.int8)) for r in rows]


# --- round pair manifest --------------------------------------------------------

MANIFEST_HEADER = [
    "round",
    "pair_id",
    "defender",
    "attacker",
    "role",
    "level",
    "image_x",
    "image_y",
    "attacker_diff",
]


def write_manifest_csv(path, round_index: int, pairs: Sequence[GmadPair]) -> None:
    rows = [
        [
            round_index,
            p.pair_id,
            p.defender_id,
            p.attacker_id,
            p.role,
            p.level,
            p.x,
            p.y,
            _fmt(p.objective_value),
        ]
        for p in pairs
    ]
    _write_csv(path, MANIFEST_HEADER, rows)


def read_manifest_csv(path) -> tuple[int, list[GmadPair]]:
    _, rows = _read_csv(path)
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    pairs = [
        GmadPair(
            pair_id=r[1],
            defender_id=r[2],
            attacker_id=r[3],
            level=int(r[5]),
            x=r[6],
            y=r[7],
            objective_value=float(r[8]),
            role=r[4],
        )
        for r in rows
    ]
    return int(rows[0][0]), pairs


# --- training traces ------------------------------------------------------------


def write_trace_csv(path, step_trace: Sequence[tuple]) -> None:
    rows = [[step, epoch, _fmt(value)] for step, epoch, value in step_trace]
    _write_csv(path, ["step", "epoch", "objective"], rows)


# --- histogram tables -----------------------------------------------------------


def write_histogram_csv(path, hist) -> None:
    rows = [[_fmt(lo), _fmt(hi), count] for lo, hi, count in hist.rows()]
    _write_csv(path, ["bin_lo", "bin_hi", "count"], rows)


# --- workspace ------------------------------------------------------------------


class Workspace:
    """Fixed directory layout for one experiment."""

    def __init__(self, root):
        self.root = Path(root)

    # structured documents
    @property
    def world_path(self) -> Path:
        return self.root / "world.json"

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def scale_maps_path(self) -> Path:
        return self.root / "scale_maps.json"

    # pools and datasets
    @property
    def pool_path(self) -> Path:
        return self.root / "pool.csv"

    @property
    def calib_path(self) -> Path:
        return self.root / "calib.csv"

    def dataset_path(self, name: str) -> Path:
        return self.root / "datasets" / f"{name}.csv"

    # models and scores
    def checkpoint_path(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.json"

    def scores_path(self, model_id: str) -> Path:
        return self.root / "scores" / f"{model_id}.csv"

    def trace_path(self, name: str) -> Path:
        return self.root / "traces" / f"{name}.csv"

    # rounds
    def round_dir(self, t: int) -> Path:
        return self.root / "rounds" / str(t)

    def round_path(self, t: int, name: str) -> Path:
        return self.round_dir(t) / name

    def report_path(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.json"

    def existing_rounds(self) -> list[int]:
        base = self.root / "rounds"
        if not base.is_dir():
            return []
        return sorted(int(p.name) for p in base.iterdir() if p.name.isdigit())
