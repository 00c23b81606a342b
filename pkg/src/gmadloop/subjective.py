"""Raw subject ratings to MOS records, outlier screening, probability labels,
case classification of rated pairs, and the random-pairing augmentation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .objectives import PairLabel, normal_cdf

DEFENDER_CASES = ("I", "II", "III")
ATTACKER_CASES = ("IV", "V", "VI")


class InsufficientRatingsError(ValueError):
    pass


@dataclass
class RatingRecord:
    subject_id: str
    image_id: str
    score: float
    session_id: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 100.0:
            raise ValueError(f"rating {self.score} outside [0, 100]")


@dataclass
class MosRecord:
    image_id: str
    mos: float
    std: float
    n_valid: int
    n_rejected: int = 0


@dataclass
class SubjectVerdict:
    subject_id: str
    p_high: int
    q_low: int
    n_ratings: int
    rejected: bool


@dataclass
class ImageStats:
    mean: float
    std: float
    kurtosis: float


@dataclass
class ScreeningResult:
    kept: list
    outliers: list                 # individually flagged ratings
    rejected_subject_ratings: list  # everything from rejected subjects
    verdicts: dict                 # subject_id -> SubjectVerdict
    outlier_fraction: float
    rejected_fraction: float       # fraction removed via subject rejection
    image_stats: dict = field(default_factory=dict)

    @property
    def removed_fraction(self) -> float:
        total = len(self.kept) + len(self.outliers) + len(self.rejected_subject_ratings)
        return (len(self.outliers) + len(self.rejected_subject_ratings)) / total


def screen_outliers(
    ratings: Sequence[RatingRecord],
    min_ratings: int = 3,
    stats: Optional[dict] = None,
) -> ScreeningResult:
    """Outlier detection and subject rejection in the ITU BT.500 style.

    Statistics (mean, sample std, kurtosis coefficient m4/m2^2) are computed
    once per image over the raw data. A rating counts against its subject
    when it deviates from the image mean by more than 2*std (kurtosis in
    [2, 4]) or sqrt(20)*std (otherwise). A subject is rejected when flagged
    ratings exceed 5% of their total and the high/low flags are unbalanced
    by less than 0.3. Flagged ratings and all ratings of rejected subjects
    are removed.

    Passing ``stats`` (image_id -> ImageStats, e.g. from a previous result)
    screens against those statistics instead of recomputing; screening a
    kept set against the statistics that produced it removes nothing.
    """
    by_image = defaultdict(list)
    for r in ratings:
        by_image[r.image_id].append(r)

    image_stats: dict = {}
    flagged_high: set = set()
    flagged_low: set = set()
    for image_id, group in by_image.items():
        if len(group) < min_ratings:
            raise InsufficientRatingsError(
                f"image {image_id} has {len(group)} ratings; need >= {min_ratings}"
            )
        scores = np.array([r.score for r in group], dtype=np.float64)
        if stats is not None and image_id in stats:
            st = stats[image_id]
        else:
            centered0 = scores - scores.mean()
            m2 = np.mean(centered0**2)
            m4 = np.mean(centered0**4)
            st = ImageStats(
                mean=float(scores.mean()),
                std=float(scores.std(ddof=1)),
                kurtosis=float(m4 / (m2 * m2)) if m2 > 0 else 0.0,
            )
        image_stats[image_id] = st
        if st.std == 0.0:
            continue
        factor = 2.0 if 2.0 <= st.kurtosis <= 4.0 else math.sqrt(20.0)
        for r in group:
            c = r.score - st.mean
            if c > factor * st.std:
                flagged_high.add(id(r))
            elif -c > factor * st.std:
                flagged_low.add(id(r))

    counters = defaultdict(lambda: [0, 0, 0])  # subject -> [P, Q, N]
    for r in ratings:
        row = counters[r.subject_id]
        row[2] += 1
        if id(r) in flagged_high:
            row[0] += 1
        elif id(r) in flagged_low:
            row[1] += 1

    verdicts = {}
    rejected_subjects = set()
    for subject_id, (p, q, n) in counters.items():
        rejected = False
        if p + q > 0 and (p + q) / n > 0.05 and abs(p - q) / (p + q) < 0.3:
            rejected = True
            rejected_subjects.add(subject_id)
        verdicts[subject_id] = SubjectVerdict(subject_id, p, q, n, rejected)

    kept, outliers, rejected_ratings = [], [], []
    for r in ratings:
        if r.subject_id in rejected_subjects:
            rejected_ratings.append(r)
        elif id(r) in flagged_high or id(r) in flagged_low:
            outliers.append(r)
        else:
            kept.append(r)

    total = len(ratings)
    return ScreeningResult(
        kept=kept,
        outliers=outliers,
        rejected_subject_ratings=rejected_ratings,
        verdicts=verdicts,
        outlier_fraction=len(outliers) / total if total else 0.0,
        rejected_fraction=len(rejected_ratings) / total if total else 0.0,
        image_stats=image_stats,
    )


def compute_mos(
    kept: Sequence[RatingRecord],
    removed: Sequence[RatingRecord] = (),
    expected_images: Optional[Iterable[str]] = None,
) -> tuple[list[MosRecord], list[str]]:
    """Per-image mean opinion score and sample std over the kept ratings.

    Images that were expected (or had every rating removed) but have no kept
    ratings are returned in the exclusions list instead of being silently
    dropped.
    """
    by_image = defaultdict(list)
    for r in kept:
        by_image[r.image_id].append(r.score)
    removed_counts = defaultdict(int)
    for r in removed:
        removed_counts[r.image_id] += 1

    records = []
    for image_id in sorted(by_image):
        scores = np.array(by_image[image_id], dtype=np.float64)
        std = scores.std(ddof=1) if len(scores) > 1 else 0.0
        records.append(
            MosRecord(
                image_id=image_id,
                mos=float(scores.mean()),
                std=float(std),
                n_valid=len(scores),
                n_rejected=removed_counts.get(image_id, 0),
            )
        )

    wanted = set(expected_images) if expected_images is not None else set(removed_counts)
    exclusions = sorted(i for i in wanted if i not in by_image)
    return records, exclusions


def label_probability(mx: float, sx: float, my: float, sy: float) -> float:
    """Pr(first image judged better) from two MOS/std summaries.

    With both stds zero the limit convention applies: 1, 0, or 0.5 by the
    sign of the mean difference.
    """
    denom = math.sqrt(sx * sx + sy * sy)
    if denom == 0.0:
        if mx > my:
            return 1.0
        if mx < my:
            return 0.0
        return 0.5
    return float(normal_cdf((mx - my) / denom))


def label_pairs(pairs, mos: dict, source: str = "gmad") -> list[PairLabel]:
    """Probability labels for mined pairs from the MOS table (image_id -> MosRecord)."""
    labels = []
    for pair in pairs:
        try:
            rx, ry = mos[pair.x], mos[pair.y]
        except KeyError as exc:
            raise KeyError(f"no MOS record for image {exc.args[0]!r}") from None
        labels.append(
            PairLabel(
                x=pair.x,
                y=pair.y,
                p=label_probability(rx.mos, rx.std, ry.mos, ry.std),
                source=source,
                pair_id=getattr(pair, "pair_id", ""),
                role=getattr(pair, "role", ""),
            )
        )
    return labels


@dataclass
class CaseTag:
    tag: str
    role: str
    p: float


def classify_case(label: PairLabel, role: str, lo: float = 0.2, hi: float = 0.8) -> CaseTag:
    """Assign the six-way outcome category of a rated pair.

    ``role`` is the tested model's part in the comparison that produced the
    pair: when it defended, a high p means the attacker found a true
    counterexample (Case I); when it attacked, a high p means its attack
    succeeded (Case IV).
    """
    role = role.replace("model-as-", "")
    if role not in ("defender", "attacker"):
        raise ValueError(f"unknown role {role!r}")
    cases = DEFENDER_CASES if role == "defender" else ATTACKER_CASES
    if label.p > hi:
        tag = cases[0]
    elif label.p >= lo:
        tag = cases[1]
    else:
        tag = cases[2]
    return CaseTag(tag=tag, role=role, p=label.p)


def augment_pairs(image_ids: Iterable[str], mos: dict, source: str = "gmad-aug") -> list[PairLabel]:
    """All distinct unordered pairs over the rated gMAD images, labeled.

    For m mined pairs over 2m distinct images this yields m(2m-1) pairs.
    Enumeration order is lexicographic over sorted image ids.
    """
    ids = sorted(set(image_ids))
    if len(ids) < 2:
        raise ValueError("need at least two rated images to augment")
    labels = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            rx, ry = mos[ids[i]], mos[ids[j]]
            labels.append(
                PairLabel(
                    x=ids[i],
                    y=ids[j],
                    p=label_probability(rx.mos, rx.std, ry.mos, ry.std),
                    source=source,
                )
            )
    return labels


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def modal_bin(self) -> int:
        return int(np.argmax(self.counts))

    def rows(self) -> list[tuple[float, float, int]]:
        return [
            (float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i]))
            for i in range(len(self.counts))
        ]


def p_histogram(labels: Sequence[PairLabel], role: Optional[str] = None, n_bins: int = 10) -> Histogram:
    """Counts of label probabilities over equal-width bins spanning [0, 1]."""
    if role is not None:
        role = role.replace("model-as-", "")
        labels = [l for l in labels if l.role.replace("model-as-", "") == role]
    if not labels:
        raise ValueError("no labels to histogram")
    counts, edges = np.histogram([l.p for l in labels], bins=n_bins, range=(0.0, 1.0))
    return Histogram(edges=edges, counts=counts)
