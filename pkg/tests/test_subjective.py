"""Rating screening, MOS aggregation, probability labels, case tags,
augmentation, and label histograms."""

import math

import numpy as np
import pytest

from gmadloop.objectives import PairLabel
from gmadloop.subjective import (
    InsufficientRatingsError,
    MosRecord,
    RatingRecord,
    augment_pairs,
    classify_case,
    compute_mos,
    label_pairs,
    label_probability,
    p_histogram,
    screen_outliers,
)

from test_objectives import phi_oracle


def clean_ratings(seed=8, n_images=60, n_subjects=15, sigma=5.0):
    rng = np.random.default_rng(seed)
    tq = rng.uniform(10, 90, n_images)
    out = []
    for s in range(n_subjects):
        for i in range(n_images):
            out.append(
                RatingRecord(
                    f"s{s:02d}", f"i{i:03d}", float(np.clip(tq[i] + rng.normal(0, sigma), 0, 100)), "sess"
                )
            )
    return out


class TestScreening:
    def test_clean_subjects_survive(self):
        res = screen_outliers(clean_ratings())
        assert res.rejected_fraction < 0.01
        assert not any(v.rejected for v in res.verdicts.values())
        assert res.outlier_fraction < 0.06  # a few percent of individual flags is normal

    def test_planted_constant_subject_rejected_per_hand_rule(self):
        # Deviations of ~13.5 against honest noise sigma=4 keep the image
        # kurtosis inside the [2, 4] gate, so the 2*std rule fires; larger
        # deviations would push kurtosis past 4 and mask themselves behind
        # the sqrt(20)*std branch.
        rng = np.random.default_rng(12)
        tq = np.array([36.5] * 6 + [63.5] * 6 + list(np.linspace(45, 55, 28)))
        ratings = []
        for s in range(14):
            for i, t in enumerate(tq):
                ratings.append(
                    RatingRecord(f"s{s:02d}", f"i{i:03d}", float(np.clip(t + rng.normal(0, 4), 0, 100)), "sess")
                )
        for i in range(len(tq)):
            ratings.append(RatingRecord("planted", f"i{i:03d}", 50.0, "sess"))

        res = screen_outliers(ratings)

        # Re-derive the planted subject's P/Q counters from scratch.
        p_hand = q_hand = 0
        for i in range(len(tq)):
            group = np.array([r.score for r in ratings if r.image_id == f"i{i:03d}"])
            mean, std = group.mean(), group.std(ddof=1)
            if std == 0:
                continue
            centered = group - mean
            kurt = np.mean(centered**4) / np.mean(centered**2) ** 2
            factor = 2.0 if 2.0 <= kurt <= 4.0 else math.sqrt(20.0)
            if 50.0 - mean > factor * std:
                p_hand += 1
            elif mean - 50.0 > factor * std:
                q_hand += 1

        v = res.verdicts["planted"]
        assert (v.p_high, v.q_low) == (p_hand, q_hand)
        assert (p_hand + q_hand) / v.n_ratings > 0.05
        assert abs(p_hand - q_hand) / (p_hand + q_hand) < 0.3
        assert v.rejected
        assert not any(vv.rejected for s, vv in res.verdicts.items() if s != "planted")

    def test_identical_ratings_no_outliers(self):
        ratings = [RatingRecord(f"s{s}", "img", 42.0, "sess") for s in range(10)]
        res = screen_outliers(ratings)
        assert res.outliers == [] and res.kept == ratings

    def test_insufficient_ratings_rejected(self):
        ratings = [RatingRecord("s0", "img", 40.0), RatingRecord("s1", "img", 50.0)]
        with pytest.raises(InsufficientRatingsError):
            screen_outliers(ratings)

    def test_fixed_point_under_same_statistics(self):
        res = screen_outliers(clean_ratings())
        again = screen_outliers(res.kept, stats=res.image_stats)
        assert again.outliers == [] and again.rejected_subject_ratings == []
        assert again.kept == res.kept

    def test_recomputed_second_pass_nearly_fixed(self):
        res = screen_outliers(clean_ratings())
        again = screen_outliers(res.kept)
        assert again.removed_fraction < 0.02


class TestComputeMos:
    def test_two_ratings(self):
        recs, _ = compute_mos(
            [RatingRecord("s0", "a", 40.0), RatingRecord("s1", "a", 60.0)]
        )
        assert recs[0].mos == 50.0
        assert recs[0].std == pytest.approx(math.sqrt(200.0), abs=1e-9)
        assert recs[0].n_valid == 2

    def test_single_rating_degenerate(self):
        recs, _ = compute_mos([RatingRecord("s0", "a", 70.0)])
        assert recs[0].mos == 70.0 and recs[0].std == 0.0 and recs[0].n_valid == 1

    def test_order_invariant(self):
        rng = np.random.default_rng(3)
        base = [RatingRecord(f"s{k}", "a", float(v)) for k, v in enumerate(rng.uniform(0, 100, 9))]
        a, _ = compute_mos(base)
        b, _ = compute_mos(list(reversed(base)))
        assert a == b

    def test_zero_kept_reported_not_dropped(self):
        kept = [RatingRecord("s0", "a", 50.0)]
        removed = [RatingRecord("s1", "b", 10.0)]
        recs, exclusions = compute_mos(kept, removed, expected_images=["a", "b"])
        assert [r.image_id for r in recs] == ["a"]
        assert exclusions == ["b"]

    def test_rejected_counts_attached(self):
        kept = [RatingRecord("s0", "a", 50.0), RatingRecord("s1", "a", 60.0)]
        removed = [RatingRecord("s2", "a", 5.0)]
        recs, _ = compute_mos(kept, removed)
        assert recs[0].n_rejected == 1


class TestLabelPairs:
    def test_equal_means(self):
        assert label_probability(50.0, 5.0, 50.0, 5.0) == 0.5

    def test_unit_normalized_difference(self):
        sx, sy = 3.0, 4.0
        diff = math.sqrt(sx**2 + sy**2)
        p = label_probability(60.0 + diff, sx, 60.0, sy)
        assert p == pytest.approx(phi_oracle(1.0), abs=1e-12)

    def test_degenerate_std_convention(self):
        assert label_probability(60.0, 0.0, 40.0, 0.0) == 1.0
        assert label_probability(40.0, 0.0, 60.0, 0.0) == 0.0
        assert label_probability(50.0, 0.0, 50.0, 0.0) == 0.5

    def test_antisymmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            mx, my = rng.uniform(0, 100, 2)
            sx, sy = rng.uniform(0.5, 12, 2)
            assert label_probability(mx, sx, my, sy) + label_probability(my, sy, mx, sx) == pytest.approx(
                1.0, abs=1e-12
            )

    def test_missing_mos_rejected(self):
        class Pair:
            x, y = "a", "ghost"

        mos = {"a": MosRecord("a", 50.0, 5.0, 15)}
        with pytest.raises(KeyError):
            label_pairs([Pair()], mos)


class TestClassifyCase:
    def test_defender_tags(self):
        assert classify_case(PairLabel("a", "b", 0.95), "defender").tag == "I"
        assert classify_case(PairLabel("a", "b", 0.5), "defender").tag == "II"
        assert classify_case(PairLabel("a", "b", 0.05), "defender").tag == "III"

    def test_attacker_tags(self):
        assert classify_case(PairLabel("a", "b", 0.95), "model-as-attacker").tag == "IV"
        assert classify_case(PairLabel("a", "b", 0.5), "attacker").tag == "V"
        assert classify_case(PairLabel("a", "b", 0.05), "attacker").tag == "VI"

    def test_partition(self):
        for role, cases in (("defender", "I II III"), ("attacker", "IV V VI")):
            tags = [classify_case(PairLabel("a", "b", p), role).tag for p in np.linspace(0, 1, 101)]
            assert set(tags) <= set(cases.split())
            for p in (0.2, 0.8):  # boundary goes to the middle band
                assert classify_case(PairLabel("a", "b", p), role).tag == cases.split()[1]

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError):
            classify_case(PairLabel("a", "b", 0.5), "referee")


def _mos_table(ids, rng):
    return {
        i: MosRecord(i, float(rng.uniform(0, 100)), float(rng.uniform(0.5, 8)), 15) for i in ids
    }


class TestAugment:
    def test_two_mined_pairs_give_six(self):
        rng = np.random.default_rng(5)
        ids = ["a", "b", "c", "d"]
        out = augment_pairs(ids, _mos_table(ids, rng))
        assert len(out) == 6

    def test_single_pair_gives_one(self):
        rng = np.random.default_rng(6)
        ids = ["a", "b"]
        assert len(augment_pairs(ids, _mos_table(ids, rng))) == 1

    def test_count_formula(self):
        rng = np.random.default_rng(7)
        for m in (3, 5, 8):
            ids = [f"i{k}" for k in range(2 * m)]
            out = augment_pairs(ids, _mos_table(ids, rng))
            assert len(out) == m * (2 * m - 1)

    def test_labels_antisymmetric_and_in_range(self):
        rng = np.random.default_rng(8)
        ids = [f"i{k}" for k in range(6)]
        mos = _mos_table(ids, rng)
        out = augment_pairs(ids, mos)
        for lab in out:
            assert 0.0 <= lab.p <= 1.0
            rx, ry = mos[lab.x], mos[lab.y]
            reverse = label_probability(ry.mos, ry.std, rx.mos, rx.std)
            assert lab.p + reverse == pytest.approx(1.0, abs=1e-12)

    def test_too_few_images_rejected(self):
        with pytest.raises(ValueError):
            augment_pairs(["solo"], {})


class TestHistogram:
    def test_single_bin(self):
        labels = [PairLabel("a", "b", 0.5) for _ in range(7)]
        hist = p_histogram(labels)
        assert hist.counts.sum() == 7
        assert hist.counts[5] == 7  # 0.5 falls in [0.5, 0.6)

    def test_uniform_fill(self):
        rng = np.random.default_rng(9)
        labels = [PairLabel("a", "b", float(p)) for p in rng.uniform(0, 1, 10000)]
        hist = p_histogram(labels)
        assert hist.counts.sum() == 10000
        assert np.all(np.abs(hist.counts - 1000) <= 100)

    def test_role_filter(self):
        labels = [
            PairLabel("a", "b", 0.9, role="model-as-defender"),
            PairLabel("c", "d", 0.1, role="model-as-attacker"),
        ]
        hist = p_histogram(labels, role="defender")
        assert hist.counts.sum() == 1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            p_histogram([])
