"""Scale mapping, level bins, the greedy miner against its brute-force oracle,
and whole-round competitions."""

import numpy as np
import pytest

from gmadloop.evaluation import srcc
from gmadloop.mining import (
    DegenerateInputError,
    DiversityBudget,
    LevelBins,
    ScoreTable,
    build_level_bins,
    fit_scale_map,
    mine_pairs,
    mine_pairs_oracle,
    run_competition,
)
from gmadloop.pool import ImagePool, ImageRecord
from gmadloop.scaling import FourParamMap


def make_pool(entries):
    """entries: (image_id, content_id, distortion_type, level)."""
    return ImagePool(
        [
            ImageRecord(i, c, t, lv, None, np.zeros(2))
            for (i, c, t, lv) in entries
        ]
    )


def random_pool_and_tables(seed, n_images, n_contents=None, n_types=5):
    rng = np.random.default_rng(seed)
    n_contents = n_contents or max(2, n_images // 3)
    entries = []
    for k in range(n_images):
        entries.append(
            (
                f"m{k:04d}",
                f"c{rng.integers(n_contents):03d}",
                f"t{rng.integers(n_types)}",
                int(rng.integers(1, 6)),
            )
        )
    pool = make_pool(entries)
    ids = pool.image_ids()
    defender = ScoreTable("defender", {}, {i: float(rng.uniform(0, 100)) for i in ids})
    attacker = ScoreTable("attacker", {}, {i: float(rng.uniform(0, 100)) for i in ids})
    return pool, defender, attacker


class TestFitScaleMap:
    def test_self_consistency(self):
        rng = np.random.default_rng(0)
        truth = FourParamMap(100.0, 0.0, 0.0, 1.0)
        raw = {f"i{k}": float(v) for k, v in enumerate(rng.uniform(-4, 4, 40))}
        anchors = {i: truth.apply(v) for i, v in raw.items()}
        mapping, mapped = fit_scale_map(ScoreTable("m", raw), anchors)
        resid = np.array([mapped.mapped[i] - anchors[i] for i in raw])
        assert np.sqrt(np.mean(resid**2)) < 1e-6

    def test_constant_scores_rejected(self):
        raw = {f"i{k}": 5.0 for k in range(20)}
        anchors = {f"i{k}": float(k) for k in range(20)}
        with pytest.raises(DegenerateInputError):
            fit_scale_map(ScoreTable("m", raw), anchors)

    def test_too_few_anchors_rejected(self):
        raw = {f"i{k}": float(k) for k in range(20)}
        anchors = {f"i{k}": float(k) for k in range(5)}
        with pytest.raises(DegenerateInputError):
            fit_scale_map(ScoreTable("m", raw), anchors)

    def test_rank_preserved_exactly(self):
        rng = np.random.default_rng(1)
        raw = {f"i{k}": float(v) for k, v in enumerate(rng.normal(50, 12, 60))}
        anchors = {i: float(np.clip(v + rng.normal(0, 3), 0, 100)) for i, v in raw.items()}
        _, mapped = fit_scale_map(ScoreTable("m", raw), anchors)
        ids = sorted(raw)
        assert srcc([raw[i] for i in ids], [mapped.mapped[i] for i in ids]) == 1.0

    def test_negatively_oriented_rejected(self):
        rng = np.random.default_rng(2)
        raw = {f"i{k}": float(v) for k, v in enumerate(rng.uniform(0, 10, 30))}
        anchors = {i: 100.0 - 9.0 * v for i, v in raw.items()}  # decreasing truth
        with pytest.raises(DegenerateInputError):
            fit_scale_map(ScoreTable("m", raw), anchors)


class TestLevelBins:
    def test_default_anchor_rule(self):
        bins = LevelBins.make(l=5, bin_width=10.0)
        assert bins.anchors == [10.0, 30.0, 50.0, 70.0, 90.0]

    def test_width_exceeding_spacing_rejected(self):
        with pytest.raises(ValueError):
            LevelBins.make(l=5, bin_width=25.0)

    def test_membership_inside_intervals(self):
        pool, defender, _ = random_pool_and_tables(3, 200)
        bins, members = build_level_bins(defender, LevelBins.make(l=5, bin_width=14.0))
        intervals = bins.intervals()
        seen = set()
        for level, ids in members.items():
            lo, hi = intervals[level]
            for i in ids:
                assert lo <= defender.mapped[i] <= hi
                assert i not in seen  # at most one bin
                seen.add(i)

    def test_empty_bin_is_fine(self):
        pool = make_pool([("a", "c0", "t0", 1), ("b", "c1", "t1", 2)])
        defender = ScoreTable("d", {}, {"a": 50.0, "b": 51.0})
        _, members = build_level_bins(defender, LevelBins.make(l=5, bin_width=10.0))
        assert members[0] == [] and sorted(members[2]) == ["a", "b"]


class TestMinePairs:
    def test_four_image_top_pair(self):
        pool = make_pool(
            [("a", "c0", "t0", 1), ("b", "c1", "t1", 2), ("c", "c2", "t2", 3), ("d", "c3", "t3", 4)]
        )
        defender = ScoreTable("d", {}, {i: 50.0 for i in "abcd"})
        attacker = ScoreTable("a", {}, {"a": 9.0, "b": 5.0, "c": 4.0, "d": 1.0})
        bins = LevelBins.make(l=5, bin_width=10.0)
        pairs = mine_pairs(defender, attacker, bins, pool, k=1)
        assert len(pairs) == 1
        assert (pairs[0].x, pairs[0].y, pairs[0].objective_value) == ("a", "d", 8.0)

    def test_same_content_cap_limits_selection(self):
        pool = make_pool([(f"i{k}", "shared", f"t{k}", 1 + k % 5) for k in range(6)])
        defender = ScoreTable("d", {}, {f"i{k}": 50.0 for k in range(6)})
        attacker = ScoreTable("a", {}, {f"i{k}": float(10 * k) for k in range(6)})
        bins = LevelBins.make(l=5, bin_width=10.0)
        pairs = mine_pairs(defender, attacker, bins, pool, k=5, budget=DiversityBudget())
        assert len(pairs) == 1  # the content cap of 2 leaves room for one pair

    def test_unknown_image_rejected(self):
        pool = make_pool([("a", "c0", "t0", 1)])
        defender = ScoreTable("d", {}, {"a": 50.0, "ghost": 50.0})
        attacker = ScoreTable("a", {}, {"a": 1.0, "ghost": 2.0})
        with pytest.raises(KeyError):
            mine_pairs(defender, attacker, LevelBins.make(), pool, k=1)

    def test_k_below_one_rejected(self):
        pool, defender, attacker = random_pool_and_tables(4, 20)
        with pytest.raises(ValueError):
            mine_pairs(defender, attacker, LevelBins.make(), pool, k=0)

    def test_oracle_equivalence_random_pools(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            n = int(rng.integers(30, 250))
            pool, defender, attacker = random_pool_and_tables(
                1000 + trial, n, n_contents=int(rng.integers(3, 40)), n_types=int(rng.integers(2, 8))
            )
            k = int(rng.integers(1, 6))
            budget = DiversityBudget() if trial % 2 == 0 else None
            bins = LevelBins.make(l=5, bin_width=float(rng.uniform(5, 20)))
            greedy = mine_pairs(defender, attacker, bins, pool, k, budget, exclude_pairs=set())
            oracle = mine_pairs_oracle(defender, attacker, bins, pool, k, budget)
            assert [(p.level, p.x, p.y, p.objective_value) for p in greedy] == [
                (p.level, p.x, p.y, p.objective_value) for p in oracle
            ]

    def test_budget_caps_verified_by_recount(self):
        for seed in range(6):
            pool, defender, attacker = random_pool_and_tables(200 + seed, 150, n_contents=10, n_types=3)
            pairs = mine_pairs(
                defender, attacker, LevelBins.make(l=5, bin_width=16.0), pool, k=8, budget=DiversityBudget()
            )
            images = [img for p in pairs for img in (p.x, p.y)]
            contents = [pool[i].content_id for i in images]
            types = [pool[i].distortion_type for i in images]
            combos = [tuple(sorted((pool[p.x].distortion_type, pool[p.y].distortion_type))) for p in pairs]
            assert all(contents.count(c) <= 2 for c in contents)
            assert all(types.count(t) <= 3 for t in types)
            assert all(combos.count(c) <= 1 for c in combos)

    def test_top_pair_invariant_under_monotone_attacker_map(self):
        for seed in range(8):
            pool, defender, attacker = random_pool_and_tables(300 + seed, 120)
            bins = LevelBins.make(l=5, bin_width=18.0)
            base = mine_pairs(defender, attacker, bins, pool, k=1)
            warped = ScoreTable(
                "warped", {}, {i: float(np.exp(v / 25.0)) for i, v in attacker.mapped.items()}
            )
            transformed = mine_pairs(defender, warped, bins, pool, k=1)
            assert [(p.level, p.x, p.y) for p in base] == [(p.level, p.x, p.y) for p in transformed]

    def test_sorted_by_level_then_objective(self):
        pool, defender, attacker = random_pool_and_tables(9, 180)
        pairs = mine_pairs(defender, attacker, LevelBins.make(l=5, bin_width=16.0), pool, k=4)
        for a, b in zip(pairs, pairs[1:]):
            assert a.level <= b.level
            if a.level == b.level:
                assert a.objective_value >= b.objective_value


class TestRunCompetition:
    def _tables(self, seed, n=240):
        pool, our, ref0 = random_pool_and_tables(seed, n, n_contents=n // 2, n_types=8)
        rng = np.random.default_rng(seed + 1)
        refs = [ref0] + [
            ScoreTable(f"ref{j}", {}, {i: float(rng.uniform(0, 100)) for i in pool.image_ids()})
            for j in range(1, 3)
        ]
        for j, r in enumerate(refs):
            r.model_id = f"ref{j}"
        return pool, our, refs

    def test_empty_reference_list_rejected(self):
        pool, our, _ = random_pool_and_tables(11, 30)
        with pytest.raises(ValueError):
            run_competition(our, [], LevelBins.make(), pool, k=1)

    def test_size_bound_and_roles(self):
        pool, our, refs = self._tables(12)
        bins = LevelBins.make(l=5, bin_width=18.0)
        pairs = run_competition(our, refs, bins, pool, k=2, budget=DiversityBudget())
        assert len(pairs) <= 2 * 2 * 5 * len(refs)
        assert {p.role for p in pairs} == {"model-as-defender", "model-as-attacker"}
        for p in pairs:
            if p.role == "model-as-defender":
                assert p.defender_id == "our" or p.defender_id == our.model_id
            else:
                assert p.attacker_id == our.model_id

    def test_rich_unconstrained_pool_hits_exact_budget(self):
        pool, our, refs = self._tables(13, n=400)
        bins = LevelBins.make(l=5, bin_width=20.0)
        pairs = run_competition(our, refs, bins, pool, k=2, budget=None)
        assert len(pairs) == 2 * 2 * 5 * len(refs)

    def test_no_duplicate_unordered_pairs(self):
        pool, our, refs = self._tables(14)
        pairs = run_competition(our, refs, LevelBins.make(l=5, bin_width=18.0), pool, k=3, budget=None)
        keys = [p.unordered() for p in pairs]
        assert len(keys) == len(set(keys))

    def test_defender_bin_membership(self):
        pool, our, refs = self._tables(15)
        bins = LevelBins.make(l=5, bin_width=18.0)
        pairs = run_competition(our, refs, bins, pool, k=2, budget=None)
        tables = {t.model_id: t for t in [our] + refs}
        intervals = bins.intervals()
        for p in pairs:
            lo, hi = intervals[p.level]
            mapped = tables[p.defender_id].mapped
            assert lo <= mapped[p.x] <= hi and lo <= mapped[p.y] <= hi
            att = tables[p.attacker_id].mapped
            assert p.objective_value == pytest.approx(att[p.x] - att[p.y])
            assert p.objective_value >= 0

    def test_pair_ids_sequential_and_deterministic(self):
        pool, our, refs = self._tables(16)
        a = run_competition(our, refs, LevelBins.make(l=5, bin_width=18.0), pool, k=2, budget=None)
        b = run_competition(our, refs, LevelBins.make(l=5, bin_width=18.0), pool, k=2, budget=None)
        assert [p.pair_id for p in a] == [f"p{i:04d}" for i in range(len(a))]
        assert [(p.pair_id, p.x, p.y) for p in a] == [(p.pair_id, p.x, p.y) for p in b]
