"""Command-line entry point.

Every subcommand reads and writes only the documented workspace formats.
Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import storage
from .evaluation import evaluate_labels, evaluate_scores
from .mining import ScoreTable, fit_scale_map
from .rounds import (
    ProtocolConfig,
    RoundRunner,
    final_report,
    finetune_baseline,
    load_round_state,
    pretrain_baseline,
    sim_init,
)
from .scorer import Checkpoint, score_batch
from .simworld import SimWorld, simulate_ratings
from .storage import Workspace


def _ws(args) -> Workspace:
    return Workspace(args.workdir)


def cmd_sim_init(args):
    cfg = ProtocolConfig(
        seed=args.seed,
        rounds=args.rounds,
        pool_size=args.pool_size,
        calib_size=args.calib_size,
        n_references=args.references,
        n_d1_pairs=args.d1_pairs,
        n_d2_pairs=args.d2_pairs,
        d2_holdout=args.d2_holdout,
        k=args.k,
        levels=args.levels,
        weakened_type=args.weakened_type,
    )
    sim_init(_ws(args), cfg)
    print(f"workspace initialized at {args.workdir}")


def cmd_pretrain(args):
    ws = _ws(args)
    if args.seed is not None:
        doc = storage.read_doc(ws.config_path)
        doc["seed"] = args.seed
        storage.write_doc(ws.config_path, doc)
    pretrain_baseline(ws)
    print("pretrained checkpoint written")


def cmd_finetune(args):
    finetune_baseline(_ws(args))
    print("baseline checkpoint written")


def cmd_map_scores(args):
    ws = _ws(args)
    ck = Checkpoint.load(ws.checkpoint_path(args.checkpoint))
    pool = storage.read_pool_csv(ws.pool_path)
    calib = storage.read_pool_csv(ws.calib_path)
    ids = pool.image_ids() + calib.image_ids()
    feats = np.vstack([pool.matrix(pool.image_ids()), calib.matrix(calib.image_ids())])
    raw = dict(zip(ids, score_batch(ck.params, feats)))
    calib_mos = storage.read_mos_csv(ws.dataset_path("calib_mos"))
    anchors = {i: m.mos for i, m in calib_mos.items()}
    mapping, mapped = fit_scale_map(ScoreTable(args.table_id, raw), anchors)
    storage.write_scores_csv(ws.scores_path(args.table_id), mapped)
    print(f"mapped scores written to {ws.scores_path(args.table_id)}")


def cmd_mine(args):
    state = RoundRunner(_ws(args)).mine(args.round)
    print(f"round {args.round}: {len(state.mined_images)} images mined, status={state.status}")


def cmd_export_manifest(args):
    state = RoundRunner(_ws(args)).export_manifest(args.round)
    print(f"round {args.round}: manifest {state.manifest_id} exported")


def cmd_simulate_ratings(args):
    ws = _ws(args)
    runner = RoundRunner(ws)
    state = runner.export_manifest(args.round)
    path = ws.round_path(args.round, "ratings.csv")
    if not path.exists():
        world = SimWorld.from_doc(storage.read_doc(ws.world_path))
        pool = storage.read_pool_csv(ws.pool_path)
        session = f"r{args.round}" if args.seed is None else f"r{args.round}-seed{args.seed}"
        ratings = simulate_ratings(world, pool, state.mined_images, session)
        storage.write_ratings_csv(path, ratings)
    runner.collect_ratings(args.round, auto="sim")
    print(f"round {args.round}: simulated ratings at {path}")


def cmd_ingest_ratings(args):
    ws = _ws(args)
    runner = RoundRunner(ws)
    runner.export_manifest(args.round)
    source = args.source or ws.round_path(args.round, "service_ratings.csv")
    runner.ingest_ratings(args.round, source)
    runner.collect_ratings(args.round, auto=None)
    print(f"round {args.round}: ratings ingested from {source}")


def cmd_label(args):
    state = RoundRunner(_ws(args)).label(args.round, auto_ratings=None)
    print(f"round {args.round}: labels written, status={state.status}")


def cmd_round(args):
    auto = "sim" if args.auto_ratings == "sim" else None
    state = RoundRunner(_ws(args)).run(args.round, auto_ratings=auto, stop_after=args.stop_after)
    print(f"round {args.round}: status={state.status}")


def cmd_evaluate(args):
    ws = _ws(args)
    ck = Checkpoint.load(ws.checkpoint_path(args.checkpoint))
    pool = storage.read_pool_csv(ws.pool_path)
    calib = storage.read_pool_csv(ws.calib_path)
    feats = {r.image_id: r.features for r in pool.records}
    feats.update({r.image_id: r.features for r in calib.records})

    if args.set == "held-out":
        labels = storage.read_labels_csv(ws.dataset_path("d2_holdout"))
        mos = storage.read_mos_csv(ws.dataset_path("calib_mos"))
        name = f"held-out:{args.checkpoint}"
    else:
        t = int(args.set.removeprefix("round-"))
        labels = storage.read_labels_csv(ws.round_path(t, "labels.csv"))
        mos = storage.read_mos_csv(ws.round_path(t, "mos.csv"))
        name = f"round-{t}:{args.checkpoint}"

    report = evaluate_labels(name, labels, ck.params, feats)
    rated = sorted(i for i in mos if i in feats)
    pred = score_batch(ck.params, np.stack([feats[i] for i in rated]))
    corr = evaluate_scores(name, pred, [mos[i].mos for i in rated], linearize=True)
    report.srcc, report.plcc, report.plcc_fallback = corr.srcc, corr.plcc, corr.plcc_fallback
    out = ws.report_path(name.replace(":", "-"))
    storage.write_doc(out, report.to_doc())
    print(json.dumps(report.to_doc(), indent=1))
    print(f"report written to {out}", file=sys.stderr)


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.workdir, training_pairs=args.training_pairs), host=args.host, port=args.port)


def cmd_report(args):
    ws = _ws(args)
    cfg = storage.read_doc(ws.config_path)
    rounds = []
    for t in range(1, cfg["rounds"]):
        path = ws.round_path(t, "report.json")
        if path.exists():
            rounds.append(storage.read_doc(path))
    if not rounds:
        raise SystemExit("no completed rounds to report")

    header = f"{'round':>5} {'pairs':>5} {'def before':>10} {'def after':>9} {'att before':>10} {'att after':>9} {'holdout +':>9}"
    print(header)
    for r in rounds:
        gb, ga = r["gmad_fidelity_before"], r["gmad_fidelity_after"]
        drift = r["holdout_fidelity_after"] - r["holdout_fidelity_before"]
        print(
            f"{r['round']:>5} {r['n_pairs']:>5} "
            f"{gb.get('defender', {}).get('mean', float('nan')):>10.4f} "
            f"{ga.get('defender', {}).get('mean', float('nan')):>9.4f} "
            f"{gb.get('attacker', {}).get('mean', float('nan')):>10.4f} "
            f"{ga.get('attacker', {}).get('mean', float('nan')):>9.4f} "
            f"{drift:>+9.4f}"
        )
        print(f"      cases: {r['case_counts']}")
    test_state = load_round_state(ws, cfg["rounds"])
    if test_state.reached("labeled"):
        report = final_report(ws)
        print(f"test round {cfg['rounds']}: cases {report['test_round']['case_counts']}")
        for role in ("defender", "attacker"):
            b = report["test_round"]["baseline_fidelity"].get(role)
            f = report["test_round"]["final_fidelity"].get(role)
            if b and f:
                print(f"  {role}: baseline {b['mean']:.4f} -> final {f['mean']:.4f}")
        print(
            f"  holdout: baseline {report['holdout_fidelity_baseline']:.4f} "
            f"-> final {report['holdout_fidelity_final']:.4f}"
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmadloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--workdir", required=True)
        p.set_defaults(fn=fn)
        return p

    p = add("sim-init", cmd_sim_init, help="generate the simulation world and starting datasets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=int, default=3)
    p.add_argument("--pool-size", type=int, default=2000)
    p.add_argument("--calib-size", type=int, default=600)
    p.add_argument("--references", type=int, default=4)
    p.add_argument("--d1-pairs", type=int, default=10000)
    p.add_argument("--d2-pairs", type=int, default=5000)
    p.add_argument("--d2-holdout", type=int, default=1000)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--weakened-type", default="banding")

    p = add("pretrain", cmd_pretrain, help="pre-train the scorer on annotator votes")
    p.add_argument("--seed", type=int, default=None)

    add("finetune", cmd_finetune, help="fine-tune the pretrained scorer on the base pair set")

    p = add("map-scores", cmd_map_scores, help="score the pool with a checkpoint and map to the common scale")
    p.add_argument("--checkpoint", default="baseline")
    p.add_argument("--table-id", default="ours")

    for name, fn in (
        ("mine", cmd_mine),
        ("export-manifest", cmd_export_manifest),
        ("label", cmd_label),
    ):
        p = add(name, fn, help=f"run the {name} stage of a round")
        p.add_argument("--round", type=int, required=True)

    p = add("simulate-ratings", cmd_simulate_ratings, help="rate a round's manifest with virtual subjects")
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)

    p = add("ingest-ratings", cmd_ingest_ratings, help="ingest service-collected ratings into a round")
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--source", dest="source", default=None)

    p = add("round", cmd_round, help="run one full round (all stages, resumable)")
    p.add_argument("--round", type=int, required=True)
    p.add_argument("--auto-ratings", choices=["sim", "service"], default="sim")
    p.add_argument("--stop-after", choices=["mined", "exported", "rated", "labeled", "finetuned", "evaluated"], default=None)

    p = add("evaluate", cmd_evaluate, help="evaluate a checkpoint on a labeled set")
    p.add_argument("--set", required=True, help="held-out or round-N")
    p.add_argument("--checkpoint", default="baseline")

    p = add("serve", cmd_serve, help="serve the rating API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8600)
    p.add_argument("--training-pairs", type=int, default=5)

    add("report", cmd_report, help="print the cross-round progress tables")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except SystemExit:
        raise
    except Exception as exc:  # surface a machine-readable failure
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
