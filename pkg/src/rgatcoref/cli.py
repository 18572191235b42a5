"""Command-line entry point ``rgatcoref``.

Exit codes: 0 success, 1 invalid input, 2 training or numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .corefmetrics import MetricMode, score_cluster_files
from .depgraph import read_conllu, stats_json
from .embedstore import SignalSpec, synth_embeddings, write_table
from .errors import RgatError, TrainingError, UsageError, ValidationError
from .model import gradient_check
from .pipeline import TrainConfig

log = logging.getLogger("rgatcoref")


def _config(path: str | None) -> TrainConfig:
    return TrainConfig.load(path) if path else TrainConfig()


def cmd_ingest_gap(args) -> int:
    dataset = pipeline.ingest_gap(args.tsv, args.conllu, args.embeddings)
    pipeline.save_dataset(dataset, args.out, args.conllu)
    print(f"ingested {len(dataset)} instances into {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = pipeline.load_dataset(args.data)
    config = _config(args.config)
    test = pipeline.load_dataset(args.test) if args.test else None
    cv = pipeline.cross_validate(dataset, config, test)
    pipeline.save_models(cv, args.out, dataset.embeddings.dim)
    for f in cv.folds:
        print(f"fold {f.fold}: best epoch {f.best_epoch}, val micro-F1 {f.val_f1:.4f}, train micro-F1 {f.train_f1:.4f}")
    print(f"out-of-fold micro-F1 {cv.oof_f1:.4f}")
    return 0


def cmd_predict(args) -> int:
    dataset = pipeline.load_dataset(args.data)
    config, models = pipeline.load_models(args.models)
    labels, probs = pipeline.predict(dataset, config, models)
    pipeline.write_predictions(args.out, [x.doc_id for x in dataset.instances], probs, labels)
    print(f"wrote {len(labels)} predictions to {args.out}")
    return 0


def cmd_score(args) -> int:
    p, r, f = pipeline.score_predictions(pipeline.read_gap_tsv(args.gold), pipeline.read_predictions(args.pred))
    print(f"precision {p:.4f}\nrecall    {r:.4f}\nmicro-F1  {f:.4f}")
    return 0


def cmd_score_clusters(args) -> int:
    print(score_cluster_files(args.key, args.response, MetricMode.parse(args.mode)).table())
    return 0


def cmd_ablate(args) -> int:
    dataset = pipeline.load_dataset(args.data)
    config = _config(args.config)
    test = pipeline.load_dataset(args.test) if args.test else None
    links = [s.strip() for s in args.links.split(",")] if args.links else pipeline.ABLATION_LINKS
    rows = pipeline.run_ablation(dataset, config, pipeline.ABLATION_DIMS, links, test)
    table = pipeline.format_ablation(rows, with_timing=args.timing)
    Path(args.out).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_synth(args) -> int:
    graphs = read_conllu(args.conllu)
    signal = None
    if args.signal:
        if not args.tsv:
            raise UsageError("--signal needs --tsv to locate the mentions")
        instances = pipeline.read_gap_tsv(args.tsv)
        by_id = {g.doc_id: g for g in graphs}
        missing = [x.doc_id for x in instances if x.doc_id not in by_id]
        if missing:
            raise UsageError(f"no graph for ID(s): {', '.join(missing)}")
        from .corefhead import locate_mentions

        mentions = {}
        for x in instances:
            m = locate_mentions(x, by_id[x.doc_id])
            mentions[x.doc_id] = (x.label, {"A": m.a, "B": m.b, "P": m.p})
        signal = SignalSpec(SignalSpec.parse_rules(args.signal), mentions)
    write_table(synth_embeddings(graphs, args.dim, args.seed, signal), args.out)
    print(f"wrote {sum(len(g) for g in graphs)} vectors of dim {args.dim} to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradient_check(args.seed, args.final, args.inner)
    print(report)
    if not report.passed:
        print(f"gradient check failed for: {', '.join(report.failures)}")
        return 2
    return 0


def cmd_stats(args) -> int:
    print(stats_json(read_conllu(args.conllu)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgatcoref", description="Relation graph attention for pronoun resolution.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-gap", help="validate GAP TSV, CoNLL-U and embeddings into a dataset directory")
    p.add_argument("--tsv", required=True)
    p.add_argument("--conllu", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest_gap)

    p = sub.add_parser("train", help="k-fold training; writes one checkpoint per fold")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--test", help="optional dataset directory scored with the fold-averaged prediction")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="fold-averaged predictions as TSV")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="micro-F1 of a prediction TSV against a GAP TSV")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("score-clusters", help="MUC, B-cubed and CEAF-phi4 over JSON cluster files")
    p.add_argument("--key", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--mode", default="standard", choices=("standard", "paper"))
    p.set_defaults(func=cmd_score_clusters)

    p = sub.add_parser("ablate", help="(m, n) x link-mode grid")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--test")
    p.add_argument("--links", help="comma-separated subset of Mean/Sum, Mean, Sum, Concat")
    p.add_argument("--timing", action="store_true", help="append a wall-clock column")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="seeded synthetic token embeddings for a CoNLL-U file")
    p.add_argument("--conllu", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", help="LABEL:ROLE:COORD:AMP,... (needs --tsv)")
    p.add_argument("--tsv", help="GAP TSV locating the mentions that receive the signal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of all model gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--final", default="concat", choices=("sum", "mean", "concat"))
    p.add_argument("--inner", default="sum", choices=("sum", "mean", "max"))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("stats", help="per-document graph statistics as JSON")
    p.add_argument("--conllu", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RgatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
