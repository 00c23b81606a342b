"""Synthetic world for exercising the whole active loop at desk scale.

The world owns a ground-truth quality function that is exactly linear in the
image feature vectors, a family of reference scorers built as monotone
distortions of that truth plus model-specific biases and noise, noisy binary
annotators, and virtual rating subjects. Everything is derived from one
master seed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evaluation import srcc
from .mining import ScoreTable
from .objectives import NoisyPair, PairLabel, normal_cdf
from .pool import ImagePool, ImageRecord
from .subjective import MosRecord, RatingRecord, compute_mos

DEFAULT_DISTORTION_TYPES = (
    "blur",
    "white-noise",
    "jpeg",
    "jp2k",
    "contrast",
    "color-shift",
    "banding",
    "ghosting",
)

WORLD_FORMAT_VERSION = 1


def _stream(seed: int, *tags) -> np.random.Generator:
    """Independent deterministic generator for a named part of the world."""
    material = [seed] + [zlib.crc32(str(t).encode()) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(material))


@dataclass
class ReferenceScorerDef:
    model_id: str
    exponent: float
    type_bias: dict
    noise_scale: float
    gain: float
    offset: float
    achieved_srcc: float


@dataclass
class SimWorld:
    seed: int
    feature_dim: int
    distortion_types: list
    quality_weights: np.ndarray
    tq_low: float
    tq_high: float
    annotator_alpha: np.ndarray
    annotator_beta: np.ndarray
    references: list = field(default_factory=list)
    subject_noise_std: float = 5.0
    subject_bias_std: float = 1.0
    n_subjects: int = 15
    weakened_type: Optional[str] = None

    def true_quality(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=np.float64)) @ self.quality_weights

    def true_quality_mapped(self, X) -> np.ndarray:
        """Affine map of true quality onto roughly [2, 98] on the rating scale."""
        tq = self.true_quality(X)
        return 2.0 + 96.0 * (tq - self.tq_low) / (self.tq_high - self.tq_low)

    def subject_ids(self) -> list[str]:
        return [f"s{j + 1:02d}" for j in range(self.n_subjects)]

    def subject_biases(self) -> np.ndarray:
        return _stream(self.seed, "subject-bias").normal(0.0, self.subject_bias_std, self.n_subjects)

    def to_doc(self) -> dict:
        return {
            "format_version": WORLD_FORMAT_VERSION,
            "kind": "gmadloop-world",
            "seed": self.seed,
            "feature_dim": self.feature_dim,
            "distortion_types": list(self.distortion_types),
            "quality_weights": self.quality_weights.tolist(),
            "tq_low": self.tq_low,
            "tq_high": self.tq_high,
            "annotator_alpha": self.annotator_alpha.tolist(),
            "annotator_beta": self.annotator_beta.tolist(),
            "references": [
                {
                    "model_id": r.model_id,
                    "exponent": r.exponent,
                    "type_bias": r.type_bias,
                    "noise_scale": r.noise_scale,
                    "gain": r.gain,
                    "offset": r.offset,
                    "achieved_srcc": r.achieved_srcc,
                }
                for r in self.references
            ],
            "subject_noise_std": self.subject_noise_std,
            "subject_bias_std": self.subject_bias_std,
            "n_subjects": self.n_subjects,
            "weakened_type": self.weakened_type,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "SimWorld":
        if doc.get("kind") != "gmadloop-world":
            raise ValueError("not a world document")
        return cls(
            seed=doc["seed"],
            feature_dim=doc["feature_dim"],
            distortion_types=list(doc["distortion_types"]),
            quality_weights=np.array(doc["quality_weights"]),
            tq_low=doc["tq_low"],
            tq_high=doc["tq_high"],
            annotator_alpha=np.array(doc["annotator_alpha"]),
            annotator_beta=np.array(doc["annotator_beta"]),
            references=[ReferenceScorerDef(**r) for r in doc["references"]],
            subject_noise_std=doc["subject_noise_std"],
            subject_bias_std=doc["subject_bias_std"],
            n_subjects=doc["n_subjects"],
            weakened_type=doc.get("weakened_type"),
        )


@dataclass
class SimBundle:
    """Everything a protocol run starts from."""

    world: SimWorld
    pool: ImagePool
    calib: ImagePool
    reference_tables: list
    d1: list
    d2: list
    calib_ratings: list
    calib_mos: dict
    mean_rating_std: float


def _make_images(
    rng: np.random.Generator,
    id_prefix: str,
    content_prefix: str,
    n_images: int,
    types: Sequence[str],
    feature_dim: int,
    variants_per_content: int,
    exclude_type: Optional[str] = None,
) -> list[ImageRecord]:
    usable_types = [t for t in types if t != exclude_type]
    n_types_total = len(types)
    combos = [(t, lv) for t in usable_types for lv in range(1, 6)]
    records = []
    content_idx = 0
    while len(records) < n_images:
        content_id = f"{content_prefix}{content_idx:04d}"
        base_quality = rng.uniform(-6.0, 6.0)
        chosen = rng.choice(len(combos), size=min(variants_per_content, len(combos)), replace=False)
        for c in chosen:
            if len(records) >= n_images:
                break
            dist_type, level = combos[c]
            x = rng.normal(0.0, 1.0, feature_dim)
            x[0] = base_quality + rng.normal(0.0, 0.05)
            sev = np.zeros(n_types_total)
            sev[types.index(dist_type)] = 3.0 * level / 5.0
            x[1 : 1 + n_types_total] = sev + rng.normal(0.0, 0.02, n_types_total)
            records.append(
                ImageRecord(
                    image_id=f"{id_prefix}{len(records):05d}",
                    content_id=content_id,
                    distortion_type=dist_type,
                    distortion_level=int(level),
                    reference_id=f"src-{content_id}",
                    features=x,
                )
            )
        content_idx += 1
    return records


def _calibrated_reference(
    rng: np.random.Generator,
    model_id: str,
    world: SimWorld,
    pool: ImagePool,
    calib: ImagePool,
    target: float,
) -> tuple[ReferenceScorerDef, ScoreTable]:
    """One reference scorer: monotone power curve on normalized truth plus
    per-type bias and noise, with the noise scale bisected until the SRCC
    against truth on the pool hits the target."""
    exponent = rng.uniform(0.6, 1.8)
    type_bias = {t: float(rng.normal(0.0, 0.06)) for t in world.distortion_types}
    gain = rng.uniform(20.0, 60.0)
    offset = rng.uniform(-10.0, 10.0)

    all_records = pool.records + calib.records
    X = np.stack([r.features for r in all_records])
    tq = world.true_quality(X)
    tq01 = (tq - world.tq_low) / (world.tq_high - world.tq_low)
    base = np.clip(tq01, 0.0, 1.0) ** exponent
    bias_vec = np.array([type_bias[r.distortion_type] for r in all_records])
    unit_noise = rng.normal(0.0, 1.0, len(all_records))
    disturbance = bias_vec + unit_noise

    n_pool = len(pool)
    tq_pool = tq[:n_pool]

    def pool_srcc(scale):
        return srcc(base[:n_pool] + scale * disturbance[:n_pool], tq_pool)

    lo, hi = 0.0, 4.0
    while pool_srcc(hi) > target:
        hi *= 2.0
        if hi > 1e3:
            break
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if pool_srcc(mid) > target:
            lo = mid
        else:
            hi = mid
    scale = 0.5 * (lo + hi)
    achieved = pool_srcc(scale)
    raw = gain * (base + scale * disturbance) + offset
    table = ScoreTable(model_id, {r.image_id: float(v) for r, v in zip(all_records, raw)})
    ref = ReferenceScorerDef(model_id, float(exponent), type_bias, float(scale), float(gain), float(offset), float(achieved))
    return ref, table


def _taxonomy_pairs(rng: np.random.Generator, records: Sequence[ImageRecord], n_pairs: int):
    """Pair indices drawn from the three representable pair families:
    same content & type at different levels, same content across types, and
    cross-content."""
    by_ct: dict = {}
    by_c: dict = {}
    for i, r in enumerate(records):
        by_ct.setdefault((r.content_id, r.distortion_type), []).append(i)
        by_c.setdefault(r.content_id, []).append(i)
    same_ct = [g for g in by_ct.values() if len(g) >= 2]
    same_c = [g for g in by_c.values() if len(g) >= 2]
    weights = np.array([0.2 if same_ct else 0.0, 0.3 if same_c else 0.0, 0.5])
    weights /= weights.sum()

    kinds = rng.choice(3, size=n_pairs, p=weights)
    n = len(records)
    out = np.empty((n_pairs, 2), dtype=np.intp)
    for k, kind in enumerate(kinds):
        if kind == 0:
            group = same_ct[rng.integers(len(same_ct))]
            a, b = rng.choice(len(group), size=2, replace=False)
            out[k] = group[a], group[b]
        elif kind == 1:
            group = same_c[rng.integers(len(same_c))]
            a, b = rng.choice(len(group), size=2, replace=False)
            out[k] = group[a], group[b]
        else:
            a = rng.integers(n)
            b = rng.integers(n)
            while records[a].content_id == records[b].content_id:
                b = rng.integers(n)
            out[k] = a, b
    return out


def simulate_ratings(
    world: SimWorld,
    features,
    image_ids: Sequence[str],
    session_id: str,
) -> list[RatingRecord]:
    """Every virtual subject rates every listed image once.

    rating = clamp(mapped true quality + subject bias + noise, 0, 100),
    deterministic in (world seed, session id).
    """
    from .pool import feature_matrix

    X = feature_matrix(features, image_ids)
    tqm = world.true_quality_mapped(X)
    biases = world.subject_biases()
    rng = _stream(world.seed, "ratings", session_id)
    noise = rng.normal(0.0, world.subject_noise_std, (world.n_subjects, len(image_ids)))
    records = []
    counter = 0
    for s, subject in enumerate(world.subject_ids()):
        for i, image_id in enumerate(image_ids):
            value = float(np.clip(tqm[i] + biases[s] + noise[s, i], 0.0, 100.0))
            records.append(
                RatingRecord(
                    subject_id=subject,
                    image_id=image_id,
                    score=value,
                    session_id=session_id,
                    timestamp=str(counter),
                )
            )
            counter += 1
    return records


def _vote_matrix(rng, q_true: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    m, n = len(q_true), len(alpha)
    u = rng.random((m, n))
    votes = np.empty((m, n), dtype=np.int8)
    for j in range(n):
        votes[:, j] = np.where(q_true == 1, u[:, j] < alpha[j], u[:, j] >= beta[j])
    return votes


def build_sim_world(
    seed: int,
    pool_size: int = 2000,
    n_references: int = 3,
    *,
    feature_dim: int = 16,
    calib_size: int = 600,
    n_d1_pairs: int = 10000,
    n_d2_pairs: int = 4000,
    d1_min_margin: float = 0.0,
    reliability_range: tuple = (0.7, 0.95),
    n_annotators: int = 6,
    subject_noise_std: float = 5.0,
    subject_bias_std: float = 1.0,
    n_subjects: int = 15,
    variants_per_content: int = 4,
    weakened_type: Optional[str] = None,
    distortion_types: Sequence[str] = DEFAULT_DISTORTION_TYPES,
) -> SimBundle:
    """Generate the full simulation bundle from one master seed.

    With ``weakened_type`` set, that distortion category is kept in the
    mining pool but excluded from the calibration set and from every
    training pair, leaving the pre-trained baseline blind to it.
    """
    if pool_size < 100:
        raise ValueError("pool_size must be >= 100")
    types = list(distortion_types)
    if weakened_type is not None and weakened_type not in types:
        raise ValueError(f"weakened_type {weakened_type!r} not in distortion types")
    if feature_dim < 1 + len(types):
        raise ValueError("feature_dim too small for the distortion taxonomy")

    rng_pool = _stream(seed, "pool")
    pool_records = _make_images(rng_pool, "img", "c", pool_size, types, feature_dim, variants_per_content)
    rng_calib = _stream(seed, "calib")
    calib_records = _make_images(
        rng_calib, "cal", "cc", calib_size, types, feature_dim, variants_per_content, exclude_type=weakened_type
    )
    pool = ImagePool(pool_records)
    calib = ImagePool(calib_records)

    rng_world = _stream(seed, "world")
    weights = np.zeros(feature_dim)
    weights[0] = 1.0
    for t_idx, t in enumerate(types):
        if t == weakened_type:
            weights[1 + t_idx] = -rng_world.uniform(3.5, 4.5)
        else:
            weights[1 + t_idx] = -rng_world.uniform(0.5, 2.5)

    all_X = np.vstack([pool.matrix(pool.image_ids()), calib.matrix(calib.image_ids())])
    tq_all = all_X @ weights
    alpha = rng_world.uniform(*reliability_range, n_annotators)
    beta = rng_world.uniform(*reliability_range, n_annotators)

    world = SimWorld(
        seed=seed,
        feature_dim=feature_dim,
        distortion_types=types,
        quality_weights=weights,
        tq_low=float(tq_all.min()),
        tq_high=float(tq_all.max()),
        annotator_alpha=alpha,
        annotator_beta=beta,
        subject_noise_std=subject_noise_std,
        subject_bias_std=subject_bias_std,
        n_subjects=n_subjects,
        weakened_type=weakened_type,
    )

    rng_refs = _stream(seed, "references")
    targets = np.linspace(0.72, 0.9, n_references)
    reference_tables = []
    for j in range(n_references):
        ref, table = _calibrated_reference(rng_refs, f"ref{j:02d}", world, pool, calib, float(targets[j]))
        world.references.append(ref)
        reference_tables.append(table)

    # D1: noisy annotator votes over pool pairs (training never sees the
    # weakened category).
    rng_d1 = _stream(seed, "d1")
    d1_records = [r for r in pool.records if r.distortion_type != weakened_type]
    d1_tq = world.true_quality(np.stack([r.features for r in d1_records]))
    pairs = _taxonomy_pairs(rng_d1, d1_records, int(n_d1_pairs * 1.5) if d1_min_margin > 0 else n_d1_pairs)
    if d1_min_margin > 0:
        keep = np.abs(d1_tq[pairs[:, 0]] - d1_tq[pairs[:, 1]]) >= d1_min_margin
        pairs = pairs[keep][:n_d1_pairs]
        if len(pairs) < n_d1_pairs:
            raise ValueError("margin filter left too few pairs; lower d1_min_margin")
    q_true = (d1_tq[pairs[:, 0]] >= d1_tq[pairs[:, 1]]).astype(np.int8)
    votes = _vote_matrix(rng_d1, q_true, alpha, beta)
    d1 = [
        NoisyPair(d1_records[a].image_id, d1_records[b].image_id, votes[i])
        for i, (a, b) in enumerate(pairs)
    ]

    # Calibration ratings, MOS, and the probability-labeled base set D2.
    calib_ids = calib.image_ids()
    calib_ratings = simulate_ratings(world, calib, calib_ids, "calib")
    mos_records, _ = compute_mos(calib_ratings)
    calib_mos = {m.image_id: m for m in mos_records}
    mean_rating_std = float(np.mean([m.std for m in mos_records]))

    rng_d2 = _stream(seed, "d2")
    d2_pairs = _taxonomy_pairs(rng_d2, calib.records, n_d2_pairs)
    d2 = []
    for a, b in d2_pairs:
        ra, rb = calib.records[a], calib.records[b]
        ma, mb = calib_mos[ra.image_id], calib_mos[rb.image_id]
        denom = np.sqrt(ma.std**2 + mb.std**2)
        p = float(normal_cdf((ma.mos - mb.mos) / denom)) if denom > 0 else 0.5
        d2.append(PairLabel(ra.image_id, rb.image_id, p, source="database"))

    return SimBundle(
        world=world,
        pool=pool,
        calib=calib,
        reference_tables=reference_tables,
        d1=d1,
        d2=d2,
        calib_ratings=calib_ratings,
        calib_mos=calib_mos,
        mean_rating_std=mean_rating_std,
    )
