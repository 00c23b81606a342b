"""Round state machine and the end-to-end active fine-tuning protocol.

A round advances through frozen, resumable stages:

    mined -> exported -> rated -> labeled -> finetuned -> evaluated

Every stage persists its artifact under rounds/<t>/ before the status moves
forward; re-running a completed stage is a no-op, and images mined in one
round never reappear in a later round's candidate pool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import storage
from .evaluation import fidelity_stats, role_fidelity_summary
from .mining import DiversityBudget, LevelBins, ScoreTable, fit_scale_map, run_competition
from .objectives import AnnotatorReliability
from .optim import TrainConfig, finetune, pretrain
from .scorer import Checkpoint, init_params, score_batch
from .simworld import SimWorld, build_sim_world, simulate_ratings
from .storage import Workspace
from .subjective import classify_case, compute_mos, augment_pairs, label_pairs, p_histogram, screen_outliers

logger = logging.getLogger(__name__)

STATUS_ORDER = ["new", "mined", "exported", "rated", "labeled", "finetuned", "evaluated"]


class StageError(RuntimeError):
    pass


@dataclass
class RoundState:
    round_index: int
    status: str = "new"
    checkpoint: str = ""
    manifest_id: str = ""
    bin_width: float = 0.0
    mined_images: list = field(default_factory=list)

    def reached(self, stage: str) -> bool:
        return STATUS_ORDER.index(self.status) >= STATUS_ORDER.index(stage)

    def advance(self, stage: str) -> None:
        if STATUS_ORDER.index(stage) <= STATUS_ORDER.index(self.status):
            raise StageError(f"round {self.round_index}: cannot move {self.status} -> {stage}")
        self.status = stage

    def to_doc(self) -> dict:
        return {
            "format_version": 1,
            "kind": "gmadloop-round-state",
            "round_index": self.round_index,
            "status": self.status,
            "checkpoint": self.checkpoint,
            "manifest_id": self.manifest_id,
            "bin_width": self.bin_width,
            "mined_images": list(self.mined_images),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RoundState":
        if doc.get("kind") != "gmadloop-round-state":
            raise ValueError("not a round-state document")
        return cls(
            round_index=doc["round_index"],
            status=doc["status"],
            checkpoint=doc["checkpoint"],
            manifest_id=doc["manifest_id"],
            bin_width=doc["bin_width"],
            mined_images=list(doc["mined_images"]),
        )


def load_round_state(ws: Workspace, t: int) -> RoundState:
    path = ws.round_path(t, "state.json")
    if path.exists():
        return RoundState.from_doc(storage.read_doc(path))
    return RoundState(round_index=t)


def save_round_state(ws: Workspace, state: RoundState) -> None:
    storage.write_doc(ws.round_path(state.round_index, "state.json"), state.to_doc())


def _merged_features(*pools) -> dict:
    out = {}
    for pool in pools:
        for r in pool.records:
            out[r.image_id] = r.features
    return out


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    tc = cfg["train"]
    return TrainConfig(
        batch_size=tc["batch_size"],
        lr_deep=tc["lr_deep"],
        lr_shallow=tc["lr_shallow"],
        lr_annotator=tc["lr_annotator"],
        max_epochs=tc["max_epochs"],
        seed=seed,
    )


def _removed_before(ws: Workspace, t: int) -> set:
    removed: set = set()
    for r in range(1, t):
        state = load_round_state(ws, r)
        removed.update(state.mined_images)
    return removed


class RoundRunner:
    """Executes the stages of one round against a workspace."""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.cfg = storage.read_doc(ws.config_path)

    # -- stage: mine -----------------------------------------------------

    def mine(self, t: int) -> RoundState:
        state = load_round_state(self.ws, t)
        if state.reached("mined"):
            return state
        if t > 1:
            prev = load_round_state(self.ws, t - 1)
            if not prev.reached("evaluated"):
                raise StageError(f"round {t - 1} not evaluated; cannot start round {t}")

        checkpoint_name = "baseline" if t == 1 else f"round{t - 1}"
        ck = Checkpoint.load(self.ws.checkpoint_path(checkpoint_name))
        pool = storage.read_pool_csv(self.ws.pool_path)
        calib = storage.read_pool_csv(self.ws.calib_path)
        removed = _removed_before(self.ws, t)
        remaining = pool.without(removed)

        calib_mos = storage.read_mos_csv(self.ws.dataset_path("calib_mos"))
        anchors = {image_id: m.mos for image_id, m in calib_mos.items()}

        ids = remaining.image_ids() + calib.image_ids()
        feats = np.vstack([remaining.matrix(remaining.image_ids()), calib.matrix(calib.image_ids())])
        raw = dict(zip(ids, score_batch(ck.params, feats)))
        ours = ScoreTable("ours", raw)
        mapping, ours_mapped = fit_scale_map(ours, anchors)
        storage.write_scores_csv(self.ws.scores_path(f"ours-round{t}"), ours_mapped)

        maps_doc = storage.read_doc(self.ws.scale_maps_path)
        maps_doc[f"ours-round{t}"] = mapping.to_doc()
        storage.write_doc(self.ws.scale_maps_path, maps_doc)

        remaining_ids = set(remaining.image_ids())
        our_table = ours_mapped.restricted(remaining_ids)
        references = [
            storage.read_scores_csv(self.ws.scores_path(rid)).restricted(remaining_ids)
            for rid in self.cfg["references"]
        ]
        bins = LevelBins.make(self.cfg["levels"], self.cfg["bin_width"])
        budget = DiversityBudget(**self.cfg["budget"]) if self.cfg["budget"] else None
        pairs = run_competition(our_table, references, bins, remaining, self.cfg["k"], budget)
        pairs = [replace(p, pair_id=f"r{t}-{p.pair_id}") for p in pairs]
        if not pairs:
            raise StageError(f"round {t}: mining produced no pairs")
        storage.write_manifest_csv(self.ws.round_path(t, "pairs.csv"), t, pairs)

        state.checkpoint = checkpoint_name
        state.bin_width = self.cfg["bin_width"]
        state.mined_images = sorted({img for p in pairs for img in (p.x, p.y)})
        state.advance("mined")
        save_round_state(self.ws, state)
        return state

    # -- stage: export -----------------------------------------------------

    def export_manifest(self, t: int) -> RoundState:
        state = self.mine(t)
        if state.reached("exported"):
            return state
        _, pairs = storage.read_manifest_csv(self.ws.round_path(t, "pairs.csv"))
        storage.write_manifest_csv(self.ws.round_path(t, "manifest.csv"), t, pairs)
        state.manifest_id = f"r{t}"
        state.advance("exported")
        save_round_state(self.ws, state)
        return state

    # -- stage: ratings -----------------------------------------------------

    def collect_ratings(self, t: int, auto: Optional[str] = "sim") -> RoundState:
        state = self.export_manifest(t)
        if state.reached("rated"):
            return state
        path = self.ws.round_path(t, "ratings.csv")
        if not path.exists():
            if auto != "sim":
                raise StageError(
                    f"round {t}: no ratings at {path}; ingest service ratings or use the simulator"
                )
            world = SimWorld.from_doc(storage.read_doc(self.ws.world_path))
            pool = storage.read_pool_csv(self.ws.pool_path)
            ratings = simulate_ratings(world, pool, state.mined_images, f"r{t}")
            storage.write_ratings_csv(path, ratings)
        state.advance("rated")
        save_round_state(self.ws, state)
        return state

    def ingest_ratings(self, t: int, source_path) -> None:
        """Copy externally collected ratings (e.g. the rating service log)
        into the round, dropping training-session records."""
        ratings = storage.read_ratings_csv(source_path)
        main = [r for r in ratings if not r.session_id.endswith(".train")]
        if not main:
            raise StageError(f"{source_path} holds no non-training ratings")
        storage.write_ratings_csv(self.ws.round_path(t, "ratings.csv"), main)

    # -- stage: label -----------------------------------------------------

    def label(self, t: int, auto_ratings: Optional[str] = "sim") -> RoundState:
        state = self.collect_ratings(t, auto_ratings)
        if state.reached("labeled"):
            return state
        ratings = storage.read_ratings_csv(self.ws.round_path(t, "ratings.csv"))
        screening = screen_outliers(ratings)
        removed = screening.outliers + screening.rejected_subject_ratings
        mos_records, exclusions = compute_mos(
            screening.kept, removed, expected_images=state.mined_images
        )
        storage.write_mos_csv(self.ws.round_path(t, "mos.csv"), mos_records)
        storage.write_doc(
            self.ws.round_path(t, "screening.json"),
            {
                "format_version": 1,
                "kind": "gmadloop-screening-report",
                "outlier_fraction": screening.outlier_fraction,
                "rejected_fraction": screening.rejected_fraction,
                "rejected_subjects": sorted(
                    s for s, v in screening.verdicts.items() if v.rejected
                ),
                "excluded_images": exclusions,
            },
        )

        mos = {m.image_id: m for m in mos_records}
        _, pairs = storage.read_manifest_csv(self.ws.round_path(t, "manifest.csv"))
        usable = [p for p in pairs if p.x in mos and p.y in mos]
        if len(usable) < len(pairs):
            logger.warning(
                "round %d: %d pair(s) dropped for missing MOS", t, len(pairs) - len(usable)
            )
        labels = label_pairs(usable, mos, source=f"gmad-round-{t}")
        for label in labels:
            label.case = classify_case(label, label.role).tag
        storage.write_labels_csv(self.ws.round_path(t, "labels.csv"), labels)
        for role in ("defender", "attacker"):
            bucket = [l for l in labels if l.role.endswith(role)]
            if bucket:
                storage.write_histogram_csv(
                    self.ws.round_path(t, f"hist_{role}.csv"), p_histogram(bucket)
                )
        state.advance("labeled")
        save_round_state(self.ws, state)
        return state

    # -- stage: finetune -----------------------------------------------------

    def finetune_round(self, t: int, auto_ratings: Optional[str] = "sim") -> RoundState:
        state = self.label(t, auto_ratings)
        if state.reached("finetuned"):
            return state
        d2 = storage.read_labels_csv(self.ws.dataset_path("d2_train"))
        mos: dict = {}
        images: set = set()
        for r in range(1, t + 1):
            mos.update(storage.read_mos_csv(self.ws.round_path(r, "mos.csv")))
            images.update(
                img
                for label in storage.read_labels_csv(self.ws.round_path(r, "labels.csv"))
                for img in (label.x, label.y)
            )
        d3_aug = augment_pairs(sorted(images), mos, source=f"gmad-round-{t}")
        storage.write_labels_csv(self.ws.round_path(t, "d3_aug.csv"), d3_aug)

        ck = Checkpoint.load(self.ws.checkpoint_path(state.checkpoint))
        params = ck.params
        pool = storage.read_pool_csv(self.ws.pool_path)
        calib = storage.read_pool_csv(self.ws.calib_path)
        tc = _train_config(self.cfg, seed=self.cfg["seed"] + 1000 * t)
        result = finetune(params, d2, d3_aug, _merged_features(pool, calib), tc)
        storage.write_trace_csv(self.ws.trace_path(f"round{t}_finetune"), result.step_trace)
        Checkpoint(
            params,
            round_index=t,
            step_count=ck.step_count + len(result.step_trace),
            seed=tc.seed,
            created=f"round-{t}",
        ).save(self.ws.checkpoint_path(f"round{t}"))
        state.advance("finetuned")
        save_round_state(self.ws, state)
        return state

    # -- stage: evaluate -----------------------------------------------------

    def evaluate_round(self, t: int, auto_ratings: Optional[str] = "sim") -> RoundState:
        state = self.finetune_round(t, auto_ratings)
        if state.reached("evaluated"):
            return state
        labels = storage.read_labels_csv(self.ws.round_path(t, "labels.csv"))
        pool = storage.read_pool_csv(self.ws.pool_path)
        calib = storage.read_pool_csv(self.ws.calib_path)
        feats = _merged_features(pool, calib)
        before = Checkpoint.load(self.ws.checkpoint_path(state.checkpoint)).params
        after = Checkpoint.load(self.ws.checkpoint_path(f"round{t}")).params
        held = storage.read_labels_csv(self.ws.dataset_path("d2_holdout"))

        def _roles(params):
            return {
                role: {"mean": rf.mean, "stderr": rf.stderr, "n": rf.n}
                for role, rf in sorted(role_fidelity_summary(labels, params, feats).items())
            }

        report = {
            "format_version": 1,
            "kind": "gmadloop-round-report",
            "round": t,
            "gmad_fidelity_before": _roles(before),
            "gmad_fidelity_after": _roles(after),
            "holdout_fidelity_before": fidelity_stats(held, before, feats).mean,
            "holdout_fidelity_after": fidelity_stats(held, after, feats).mean,
            "case_counts": _case_counts(labels),
            "n_pairs": len(labels),
            "n_images": len(state.mined_images),
        }
        storage.write_doc(self.ws.round_path(t, "report.json"), report)
        state.advance("evaluated")
        save_round_state(self.ws, state)
        return state

    def run(self, t: int, auto_ratings: Optional[str] = "sim", stop_after: Optional[str] = None) -> RoundState:
        """Advance round ``t`` to the end (or to ``stop_after``), resuming
        from whatever stage was already persisted."""
        stages = [
            ("mined", lambda: self.mine(t)),
            ("exported", lambda: self.export_manifest(t)),
            ("rated", lambda: self.collect_ratings(t, auto_ratings)),
            ("labeled", lambda: self.label(t, auto_ratings)),
            ("finetuned", lambda: self.finetune_round(t, auto_ratings)),
            ("evaluated", lambda: self.evaluate_round(t, auto_ratings)),
        ]
        state = load_round_state(self.ws, t)
        for stage, fn in stages:
            state = fn()
            if stop_after == stage:
                break
        return state


def _case_counts(labels) -> dict:
    counts: dict = {}
    for label in labels:
        counts[label.case] = counts.get(label.case, 0) + 1
    return dict(sorted(counts.items()))


# --- protocol ---------------------------------------------------------------


@dataclass
class ProtocolConfig:
    seed: int = 0
    rounds: int = 3               # total rounds T; the last is test-only
    pool_size: int = 2000
    calib_size: int = 600
    n_references: int = 3
    n_d1_pairs: int = 10000
    n_d2_pairs: int = 5000
    d2_holdout: int = 1000
    k: int = 2
    levels: int = 5
    hidden: int = 8
    feature_dim: int = 16
    use_budget: bool = True
    weakened_type: Optional[str] = "banding"
    batch_size: int = 16
    lr_deep: float = 1e-4
    lr_shallow: float = 1e-5
    lr_annotator: float = 1e-2
    max_epochs: int = 8

    def to_doc(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "k": self.k,
            "levels": self.levels,
            "references": [f"ref{j:02d}" for j in range(self.n_references)],
            "budget": DiversityBudget().__dict__ if self.use_budget else None,
            "dims": [self.feature_dim, self.hidden, self.hidden, 1],
            "weakened_type": self.weakened_type,
            "train": {
                "batch_size": self.batch_size,
                "lr_deep": self.lr_deep,
                "lr_shallow": self.lr_shallow,
                "lr_annotator": self.lr_annotator,
                "max_epochs": self.max_epochs,
            },
        }


def sim_init(ws: Workspace, cfg: ProtocolConfig) -> None:
    """Generate the world and write every starting artifact."""
    if ws.config_path.exists():
        return
    bundle = build_sim_world(
        cfg.seed,
        pool_size=cfg.pool_size,
        n_references=cfg.n_references,
        feature_dim=cfg.feature_dim,
        calib_size=cfg.calib_size,
        n_d1_pairs=cfg.n_d1_pairs,
        n_d2_pairs=cfg.n_d2_pairs + cfg.d2_holdout,
        weakened_type=cfg.weakened_type,
    )
    storage.write_doc(ws.world_path, bundle.world.to_doc())
    storage.write_pool_csv(ws.pool_path, bundle.pool.records)
    storage.write_pool_csv(ws.calib_path, bundle.calib.records)
    storage.write_ratings_csv(ws.dataset_path("calib_ratings"), bundle.calib_ratings)
    storage.write_mos_csv(ws.dataset_path("calib_mos"), list(bundle.calib_mos.values()))
    storage.write_noisy_pairs_csv(ws.dataset_path("d1"), bundle.d1)
    storage.write_labels_csv(ws.dataset_path("d2_train"), bundle.d2[: cfg.n_d2_pairs])
    storage.write_labels_csv(ws.dataset_path("d2_holdout"), bundle.d2[cfg.n_d2_pairs :])

    anchors = {image_id: m.mos for image_id, m in bundle.calib_mos.items()}
    maps_doc: dict = {}
    for table in bundle.reference_tables:
        mapping, mapped = fit_scale_map(table, anchors)
        storage.write_scores_csv(ws.scores_path(table.model_id), mapped)
        maps_doc[table.model_id] = mapping.to_doc()
    storage.write_doc(ws.scale_maps_path, maps_doc)

    doc = cfg.to_doc()
    doc["format_version"] = 1
    doc["kind"] = "gmadloop-config"
    doc["bin_width"] = 0.5 * bundle.mean_rating_std
    storage.write_doc(ws.config_path, doc)


def pretrain_baseline(ws: Workspace) -> None:
    if ws.checkpoint_path("pretrained").exists():
        return
    cfg = storage.read_doc(ws.config_path)
    d1 = storage.read_noisy_pairs_csv(ws.dataset_path("d1"))
    pool = storage.read_pool_csv(ws.pool_path)
    params = init_params(cfg["seed"], cfg["dims"])
    rel = AnnotatorReliability.uniform(len(d1[0].votes), 0.8)
    tc = _train_config(cfg, seed=cfg["seed"] + 1)
    result = pretrain(params, rel, d1, pool, tc)
    storage.write_trace_csv(ws.trace_path("pretrain"), result.step_trace)
    Checkpoint(params, round_index=0, step_count=len(result.step_trace), seed=tc.seed, created="pretrain").save(
        ws.checkpoint_path("pretrained")
    )


def finetune_baseline(ws: Workspace) -> None:
    if ws.checkpoint_path("baseline").exists():
        return
    cfg = storage.read_doc(ws.config_path)
    ck = Checkpoint.load(ws.checkpoint_path("pretrained"))
    d2 = storage.read_labels_csv(ws.dataset_path("d2_train"))
    calib = storage.read_pool_csv(ws.calib_path)
    tc = _train_config(cfg, seed=cfg["seed"] + 2)
    result = finetune(ck.params, d2, None, calib, tc)
    storage.write_trace_csv(ws.trace_path("finetune_base"), result.step_trace)
    Checkpoint(
        ck.params,
        round_index=0,
        step_count=ck.step_count + len(result.step_trace),
        seed=tc.seed,
        created="baseline",
    ).save(ws.checkpoint_path("baseline"))


def final_report(ws: Workspace) -> dict:
    """Cross-round summary: held-out test round plus the per-round progress."""
    cfg = storage.read_doc(ws.config_path)
    T = cfg["rounds"]
    pool = storage.read_pool_csv(ws.pool_path)
    calib = storage.read_pool_csv(ws.calib_path)
    feats = _merged_features(pool, calib)
    baseline = Checkpoint.load(ws.checkpoint_path("baseline")).params
    final = Checkpoint.load(ws.checkpoint_path(f"round{T - 1}")).params
    test_labels = storage.read_labels_csv(ws.round_path(T, "labels.csv"))

    def _roles(params, labels):
        return {
            role: {"mean": rf.mean, "stderr": rf.stderr, "n": rf.n}
            for role, rf in sorted(role_fidelity_summary(labels, params, feats).items())
        }

    rounds_summary = []
    for t in range(1, T):
        rounds_summary.append(storage.read_doc(ws.round_path(t, "report.json")))

    held = storage.read_labels_csv(ws.dataset_path("d2_holdout"))
    report = {
        "format_version": 1,
        "kind": "gmadloop-final-report",
        "rounds": rounds_summary,
        "test_round": {
            "round": T,
            "baseline_fidelity": _roles(baseline, test_labels),
            "final_fidelity": _roles(final, test_labels),
            "case_counts": _case_counts(test_labels),
        },
        "holdout_fidelity_baseline": fidelity_stats(held, baseline, feats).mean,
        "holdout_fidelity_final": fidelity_stats(held, final, feats).mean,
    }
    storage.write_doc(ws.report_path("final"), report)
    return report


@dataclass
class ProtocolResult:
    workspace: Workspace
    report: dict


def run_protocol(root, cfg: ProtocolConfig) -> ProtocolResult:
    """Algorithm-1 end to end under simulated subjects: baseline construction,
    T-1 active rounds, and a held-out test round."""
    ws = Workspace(root)
    sim_init(ws, cfg)
    pretrain_baseline(ws)
    finetune_baseline(ws)
    runner = RoundRunner(ws)
    for t in range(1, cfg.rounds):
        runner.run(t, auto_ratings="sim")
    runner.run(cfg.rounds, auto_ratings="sim", stop_after="labeled")
    return ProtocolResult(ws, final_report(ws))
