"""The gMAD competition engine.

All competing models are first mapped onto a common perceptual scale. For a
(defender, attacker) comparison at a fixed quality level, the candidate set
is every pair of pool images the defender scores inside that level's bin,
and pairs are picked greedily by descending attacker score difference under
the shared diversity budget. A brute-force oracle replicating the same scan
order lives alongside the production miner for property testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .pool import ImagePool
from .scaling import FitError, FourParamMap, fit_four_param

ROLE_DEFENDER = "model-as-defender"
ROLE_ATTACKER = "model-as-attacker"


class DegenerateInputError(ValueError):
    pass


@dataclass
class ScoreTable:
    """Per-model scores over a set of images, optionally on the common scale."""

    model_id: str
    raw: dict
    mapped: Optional[dict] = None

    def ids(self) -> list[str]:
        return list(self.raw)

    def require_mapped(self) -> dict:
        if self.mapped is None:
            raise ValueError(f"score table for {self.model_id!r} has no mapped column")
        return self.mapped

    def with_identity_map(self) -> "ScoreTable":
        return ScoreTable(self.model_id, dict(self.raw), dict(self.raw))

    def restricted(self, image_ids: Iterable[str]) -> "ScoreTable":
        keep = set(image_ids)
        raw = {i: v for i, v in self.raw.items() if i in keep}
        mapped = None
        if self.mapped is not None:
            mapped = {i: v for i, v in self.mapped.items() if i in keep}
        return ScoreTable(self.model_id, raw, mapped)


def fit_scale_map(table: ScoreTable, anchors: dict, min_anchors: int = 10) -> tuple[FourParamMap, ScoreTable]:
    """Fit the four-parameter logistic against anchor MOS values and map the table.

    The fitted map must come out increasing (higher raw score, higher mapped
    quality); a decreasing fit means the model is negatively oriented
    against the anchors and is reported as degenerate input.
    """
    overlap = sorted(i for i in table.raw if i in anchors)
    if len(overlap) < min_anchors:
        raise DegenerateInputError(
            f"only {len(overlap)} anchor images overlap the table; need >= {min_anchors}"
        )
    f = np.array([table.raw[i] for i in overlap])
    y = np.array([anchors[i] for i in overlap])
    if f.max() == f.min():
        raise DegenerateInputError("constant raw scores cannot be mapped")
    try:
        mapping = fit_four_param(f, y)
    except FitError as exc:
        raise DegenerateInputError(str(exc)) from exc
    if not mapping.increasing:
        raise DegenerateInputError(
            f"fitted map for {table.model_id!r} is decreasing; raw scores are negatively oriented"
        )
    ids = table.ids()
    mapped_values = mapping.apply(np.array([table.raw[i] for i in ids]))
    return mapping, ScoreTable(table.model_id, dict(table.raw), dict(zip(ids, mapped_values)))


@dataclass
class LevelBins:
    """Evenly spaced quality-level anchors with a shared bin width."""

    anchors: list
    bin_width: float

    def __post_init__(self):
        self.anchors = [float(a) for a in self.anchors]
        if sorted(self.anchors) != self.anchors:
            raise ValueError("anchors must be sorted ascending")
        if len(self.anchors) > 1:
            spacing = min(b - a for a, b in zip(self.anchors, self.anchors[1:]))
            if self.bin_width > spacing:
                raise ValueError(
                    f"bin width {self.bin_width} exceeds anchor spacing {spacing}"
                )
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")

    @classmethod
    def make(cls, l: int = 5, bin_width: float = 10.0, span: tuple = (0.0, 100.0)) -> "LevelBins":
        lo, hi = span
        anchors = [lo + (2 * i - 1) * (hi - lo) / (2 * l) for i in range(1, l + 1)]
        return cls(anchors, bin_width)

    def intervals(self) -> list[tuple[float, float]]:
        half = self.bin_width / 2.0
        return [(a - half, a + half) for a in self.anchors]

    def to_doc(self) -> dict:
        return {"anchors": self.anchors, "bin_width": self.bin_width}

    @classmethod
    def from_doc(cls, doc: dict) -> "LevelBins":
        return cls(doc["anchors"], doc["bin_width"])


def build_level_bins(defender_mapped: ScoreTable, bins: LevelBins) -> tuple[LevelBins, dict]:
    """Membership lists per level: which images the defender scores inside each bin.

    Bins are half-open [lo, hi) so a boundary score lands in exactly one
    bin; the top edge of the last bin is closed.
    """
    mapped = defender_mapped.require_mapped()
    intervals = bins.intervals()
    members = {level: [] for level in range(len(intervals))}
    last = len(intervals) - 1
    for image_id in sorted(mapped):
        v = mapped[image_id]
        for level, (lo, hi) in enumerate(intervals):
            if lo <= v < hi or (level == last and v == hi):
                members[level].append(image_id)
                break
    return bins, members


@dataclass
class DiversityBudget:
    """Per-comparison caps: content twice, distortion type three times, each
    unordered type combination once."""

    content_cap: int = 2
    type_cap: int = 3
    type_pair_cap: int = 1


class BudgetLedger:
    """Mutable counters for one (defender, attacker, role) comparison."""

    def __init__(self, budget: Optional[DiversityBudget]):
        self.budget = budget
        self.content = {}
        self.types = {}
        self.type_pairs = {}

    def _increments(self, rx, ry):
        contents = [rx.content_id, ry.content_id]
        types = [rx.distortion_type, ry.distortion_type]
        type_pair = tuple(sorted(types))
        return contents, types, type_pair

    def admits(self, rx, ry) -> bool:
        if self.budget is None:
            return True
        contents, types, type_pair = self._increments(rx, ry)
        for c in set(contents):
            if self.content.get(c, 0) + contents.count(c) > self.budget.content_cap:
                return False
        for t in set(types):
            if self.types.get(t, 0) + types.count(t) > self.budget.type_cap:
                return False
        if self.type_pairs.get(type_pair, 0) + 1 > self.budget.type_pair_cap:
            return False
        return True

    def commit(self, rx, ry) -> None:
        if self.budget is None:
            return
        contents, types, type_pair = self._increments(rx, ry)
        for c in contents:
            self.content[c] = self.content.get(c, 0) + 1
        for t in types:
            self.types[t] = self.types.get(t, 0) + 1
        self.type_pairs[type_pair] = self.type_pairs.get(type_pair, 0) + 1


@dataclass
class GmadPair:
    """One selected pair: x is the attacker-preferred end, both images sit in
    the defender's level bin."""

    pair_id: str
    defender_id: str
    attacker_id: str
    level: int
    x: str
    y: str
    objective_value: float
    role: str = ""

    def unordered(self) -> tuple[str, str]:
        return (self.x, self.y) if self.x <= self.y else (self.y, self.x)


def _validate_tables(pool: ImagePool, *tables: ScoreTable) -> None:
    for table in tables:
        unknown = [i for i in table.require_mapped() if i not in pool]
        if unknown:
            raise KeyError(
                f"table {table.model_id!r} scores unknown image(s), e.g. {unknown[0]!r}"
            )


def mine_pairs(
    defender: ScoreTable,
    attacker: ScoreTable,
    bins: LevelBins,
    pool: ImagePool,
    k: int,
    budget: Optional[DiversityBudget] = None,
    exclude_pairs: Optional[set] = None,
    role: str = "",
) -> list[GmadPair]:
    """Greedy top-k selection per level under the shared diversity budget.

    Candidates within a level are all pairs of bin members ordered by
    descending attacker score difference, ties broken lexicographically on
    (x, y). Pairs already in ``exclude_pairs`` (unordered) are skipped, and
    accepted pairs are added to that set in place, which is how a round
    shares its no-duplicate constraint across comparisons. The budget is
    shared across this call's levels.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _validate_tables(pool, defender, attacker)
    exclude = exclude_pairs if exclude_pairs is not None else set()
    att = attacker.require_mapped()
    _, members = build_level_bins(defender, bins)
    ledger = BudgetLedger(budget)
    selected: list[GmadPair] = []

    for level in sorted(members):
        ids = members[level]
        if len(ids) < 2:
            continue
        ids_arr = np.array(ids)
        scores = np.array([att[i] for i in ids])
        ai, bi = np.triu_indices(len(ids), k=1)
        diff = scores[ai] - scores[bi]
        swap = diff < 0
        xi = np.where(swap, bi, ai)
        yi = np.where(swap, ai, bi)
        objective = np.abs(diff)
        order = np.lexsort((ids_arr[yi], ids_arr[xi], -objective))

        taken = 0
        for idx in order:
            if taken >= k:
                break
            x, y = ids_arr[xi[idx]], ids_arr[yi[idx]]
            key = (x, y) if x <= y else (y, x)
            if key in exclude:
                continue
            rx, ry = pool[x], pool[y]
            if not ledger.admits(rx, ry):
                continue
            ledger.commit(rx, ry)
            exclude.add(key)
            selected.append(
                GmadPair(
                    pair_id="",
                    defender_id=defender.model_id,
                    attacker_id=attacker.model_id,
                    level=level,
                    x=str(x),
                    y=str(y),
                    objective_value=float(objective[idx]),
                    role=role,
                )
            )
            taken += 1
    return selected


def mine_pairs_oracle(
    defender: ScoreTable,
    attacker: ScoreTable,
    bins: LevelBins,
    pool: ImagePool,
    k: int,
    budget: Optional[DiversityBudget] = None,
    exclude_pairs: Optional[set] = None,
    role: str = "",
) -> list[GmadPair]:
    """Exhaustive-enumeration reference miner.

    Scans candidates in the same order as the greedy miner but keeps no
    incremental state: every admission decision recounts the constraint
    usage from the accepted list, and the caller's exclude set is copied
    rather than mutated. Intended for pools small enough that the O(n^2)
    enumeration per level is cheap.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _validate_tables(pool, defender, attacker)
    exclude = set(exclude_pairs) if exclude_pairs is not None else set()
    att = attacker.require_mapped()
    mapped = defender.require_mapped()
    intervals = bins.intervals()
    last = len(intervals) - 1

    def member_of(level, v):
        lo, hi = intervals[level]
        return lo <= v < hi or (level == last and v == hi)

    def violates(accepted, x, y):
        if budget is None:
            return False
        images = [img for pair in accepted for img in (pair.x, pair.y)] + [x, y]
        contents = [pool[i].content_id for i in images]
        types = [pool[i].distortion_type for i in images]
        if any(contents.count(c) > budget.content_cap for c in contents):
            return True
        if any(types.count(t) > budget.type_cap for t in types):
            return True
        combos = [
            tuple(sorted((pool[p.x].distortion_type, pool[p.y].distortion_type)))
            for p in accepted
        ] + [tuple(sorted((pool[x].distortion_type, pool[y].distortion_type)))]
        if any(combos.count(c) > budget.type_pair_cap for c in combos):
            return True
        return False

    accepted_all: list[GmadPair] = []
    for level in range(len(intervals)):
        ids = sorted(i for i in mapped if member_of(level, mapped[i]))
        candidates = []
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = ids[i], ids[j]
                if att[a] >= att[b]:
                    x, y, obj = a, b, att[a] - att[b]
                else:
                    x, y, obj = b, a, att[b] - att[a]
                candidates.append((obj, x, y))
        candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
        taken = []
        for obj, x, y in candidates:
            if len(taken) >= k:
                break
            key = (x, y) if x <= y else (y, x)
            if key in exclude:
                continue
            if violates(accepted_all, x, y):
                continue
            pair = GmadPair("", defender.model_id, attacker.model_id, level, x, y, obj, role)
            taken.append(pair)
            accepted_all.append(pair)
            exclude.add(key)
    return accepted_all


def run_competition(
    our_model: ScoreTable,
    references: Sequence[ScoreTable],
    bins: LevelBins,
    pool: ImagePool,
    k: int,
    budget: Optional[DiversityBudget] = None,
) -> list[GmadPair]:
    """Mine both roles against every reference model.

    Each (reference, role) comparison gets a fresh diversity ledger; the
    no-duplicate-pair constraint is shared across the whole round, and a
    skipped duplicate is replaced by the next admissible candidate. Returns
    at most 2*k*l*n pairs with sequential pair ids.
    """
    references = list(references)
    if not references:
        raise ValueError("empty reference list")
    used: set = set()
    out: list[GmadPair] = []
    for ref in references:
        for role, (def_table, att_table) in (
            (ROLE_DEFENDER, (our_model, ref)),
            (ROLE_ATTACKER, (ref, our_model)),
        ):
            out.extend(
                mine_pairs(def_table, att_table, bins, pool, k, budget, exclude_pairs=used, role=role)
            )
    return [replace(pair, pair_id=f"p{i:04d}") for i, pair in enumerate(out)]
