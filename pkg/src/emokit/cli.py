"""Command-line entry point.

Every subcommand reads and writes only the files named by its flags, emits a
run manifest (resolved config plus input/output hashes) next to its primary
output, and reports failures as structured JSON on stderr so callers can
machine-parse them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from . import aggregation, evaluation, partitioning, relabel, trainer
from .corpus import (builtin_taxonomy, dump_jsonl, load_annotations,
                     load_predictions, load_taxonomy)
from .errors import EmokitError

DEFAULT_SEED = 7


def _resolve_taxonomy(ref: str):
    if ref.endswith(".json") or "/" in ref:
        return load_taxonomy(ref)
    return builtin_taxonomy(ref)


def _resolve_scheme(ref: str):
    if ref.endswith(".json") or "/" in ref:
        return partitioning.load_scheme(ref)
    return partitioning.builtin_scheme(ref)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(subcommand: str, args: argparse.Namespace,
              inputs: list[str | Path], outputs: list[str | Path]) -> dict:
    config = {k: v for k, v in vars(args).items()
              if k not in ("func",) and not k.startswith("_")}
    return {
        "subcommand": subcommand,
        "config": {k: str(v) if isinstance(v, Path) else v for k, v in config.items()},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs if Path(p).is_file()},
        "tool_version": __version__,
        "seed": getattr(args, "seed", DEFAULT_SEED),
    }


def _write_manifest(subcommand: str, args: argparse.Namespace,
                    inputs: list[str | Path], outputs: list[str | Path],
                    manifest_path: Path) -> None:
    manifest = _manifest(subcommand, args, inputs, outputs)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_aggregate(args: argparse.Namespace) -> int:
    taxonomy = _resolve_taxonomy(args.taxonomy)
    utterances = load_annotations(args.input, taxonomy)
    smoothing = aggregation.SmoothingConfig(args.smoothing)
    result = aggregation.aggregate_dataset(
        utterances, args.rule, taxonomy,
        smoothing=smoothing, smooth_singles=args.smooth_singles)
    dump_jsonl(result.labels, args.output)
    report = aggregation.data_loss_report(utterances, taxonomy) if utterances else None
    print(json.dumps({
        "rule": args.rule,
        "n_utterances": len(utterances),
        "n_labels": len(result.labels),
        "n_dropped": len(result.dropped),
        "n_unscorable": len(result.unscorable),
        "data_loss": report,
    }, indent=2))
    _write_manifest("aggregate", args, [args.input], [args.output],
                    Path(args.output).with_suffix(".manifest.json"))
    return 0


def cmd_partition(args: argparse.Namespace) -> int:
    scheme = _resolve_scheme(args.scheme)
    taxonomy = _resolve_taxonomy(args.taxonomy)
    corpus = load_annotations(args.input, taxonomy)
    plan = partitioning.assign(scheme, corpus)
    leakage = partitioning.check_leakage(plan, corpus)
    partitioning.save_plan(plan, args.output)
    print(json.dumps({
        "scheme": scheme.name,
        "n_folds": len(plan.folds),
        "leakage": leakage.to_json(),
    }, indent=2))
    _write_manifest("partition", args, [args.input], [args.output],
                    Path(args.output).with_suffix(".manifest.json"))
    return 0 if leakage.ok else 1


def cmd_evaluate(args: argparse.Namespace) -> int:
    taxonomy = _resolve_taxonomy(args.taxonomy)
    preds = load_predictions(args.pred, taxonomy)
    golds = _load_labels(args.gold)
    restrict = None
    if args.plan:
        plan = partitioning.load_plan(args.plan)
        if args.fold is None or not 1 <= args.fold <= len(plan.folds):
            raise EmokitError(f"--fold must be in 1..{len(plan.folds)} when --plan is given")
        restrict = plan.folds[args.fold - 1]["test"]
    result = evaluation.evaluate_predictions(preds, golds, taxonomy,
                                             restrict_ids=restrict)
    report = result.to_json(taxonomy, dataset=args.dataset, fold=args.fold)
    inputs = [args.pred, args.gold] + ([args.plan] if args.plan else [])
    if args.report:
        print(json.dumps(report, indent=2))
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n",
                                     encoding="utf-8")
        _write_manifest("evaluate", args, inputs, [args.report],
                        Path(args.report).with_suffix(".manifest.json"))
    else:
        # no file output: the manifest rides along in the printed payload
        report["manifest"] = _manifest("evaluate", args, inputs, [])
        print(json.dumps(report, indent=2))
    return 0


def _load_labels(path: str) -> list[aggregation.LabelRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(aggregation.LabelRecord.from_json(json.loads(line)))
    return records


def cmd_relabel(args: argparse.Namespace) -> int:
    taxonomy = _resolve_taxonomy(args.taxonomy)
    utterances = load_annotations(args.input, taxonomy)
    labels = _load_labels(args.labels)
    config = relabel.ClientConfig(batch_size=args.batch_size, seed=args.seed)
    if args.mock:
        transport: relabel.ChatTransport = relabel.MockTransport(args.mock)
    elif args.live:
        transport = relabel.HttpChatTransport(config)
    else:
        raise EmokitError("choose a transport: --mock FIXTURES_DIR or --live")

    existing: list[relabel.RelabelRecord] = []
    if args.resume and Path(args.output).is_file():
        with open(args.output, encoding="utf-8") as fh:
            existing = [relabel.RelabelRecord.from_json(json.loads(line))
                        for line in fh if line.strip()]

    records, stats = relabel.relabel_dataset(utterances, labels, transport,
                                             config, existing=existing)
    dump_jsonl(records, args.output)
    outputs: list[str | Path] = [args.output]
    if args.merged_labels:
        merged, _ = relabel.merge(records, labels)
        dump_jsonl(merged, args.merged_labels)
        outputs.append(args.merged_labels)
    print(json.dumps({
        "stats": stats.to_json(),
        "estimated_cost_usd": relabel.estimate_cost(stats.total, config),
    }, indent=2))
    _write_manifest("relabel", args, [args.input, args.labels], outputs,
                    Path(args.output).with_suffix(".manifest.json"))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    taxonomy = _resolve_taxonomy(args.taxonomy)
    stacks = trainer.load_feature_dir(args.features)
    labels = {rec.utterance_id: rec for rec in _load_labels(args.labels)}
    dataset = []
    for stack in stacks:
        label = labels.get(stack.utterance_id)
        if label is None:
            raise EmokitError(f"no label for feature stack '{stack.utterance_id}'")
        dataset.append((stack, label))

    if args.plan:
        plan = partitioning.load_plan(args.plan)
        if args.fold is None or not 1 <= args.fold <= len(plan.folds):
            raise EmokitError(f"--fold must be in 1..{len(plan.folds)} when --plan is given")
        fold = plan.folds[args.fold - 1]
        by_id = {s.utterance_id: (s, l) for s, l in dataset}
        train_set = [by_id[i] for i in fold["train"] if i in by_id]
        dev_set = [by_id[i] for i in fold["dev"] if i in by_id]
    else:
        # deterministic 80/20 split from the run seed
        import numpy as np
        order = np.random.default_rng(args.seed).permutation(len(dataset))
        n_dev = max(1, len(dataset) // 5)
        dev_idx = set(int(i) for i in order[:n_dev])
        train_set = [dataset[i] for i in range(len(dataset)) if i not in dev_idx]
        dev_set = [dataset[i] for i in sorted(dev_idx)]

    config = trainer.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        beta=args.beta, seed=args.seed)
    result = trainer.train(train_set, dev_set, taxonomy, config)
    trainer.save_checkpoint(result.params, config, args.checkpoint)
    outputs: list[str | Path] = [args.checkpoint]
    if args.history:
        Path(args.history).write_text(json.dumps(result.history, indent=2) + "\n",
                                      encoding="utf-8")
        outputs.append(args.history)
    print(json.dumps({
        "best_epoch": result.best_epoch,
        "best_dev_loss": result.best_dev_loss,
        "dev_macro_f1": result.history[result.best_epoch - 1]["dev_macro_f1"],
        "n_train": len(train_set),
        "n_dev": len(dev_set),
    }, indent=2))
    _write_manifest("train", args, [args.labels], outputs,
                    Path(args.checkpoint).with_suffix(".manifest.json"))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    paths = sorted(Path(args.checkpoints).glob("*.json"))
    paths = [p for p in paths if not p.name.endswith(".manifest.json")]
    if not paths:
        raise EmokitError(f"no checkpoint files in {args.checkpoints}")
    checkpoints = [trainer.load_checkpoint(p)[0] for p in paths]
    weights = trainer.layer_weight_report(checkpoints)
    payload = {"n_checkpoints": len(checkpoints),
               "layer_weights": [float(w) for w in weights]}
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(payload, indent=2))
    _write_manifest("report", args, paths, [args.out],
                    Path(args.out).with_suffix(".manifest.json"))
    return 0


def cmd_cbce_factors(args: argparse.Namespace) -> int:
    counts = tuple(int(v) for v in args.counts.split(","))
    cfg = trainer.CbceConfig(beta=args.beta, class_counts=counts)
    factors = trainer.cbce_factors(cfg)
    print(json.dumps([float(f) for f in factors]))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .leaderboard import SubmissionStore, create_app

    store = SubmissionStore(args.data_dir)
    app = create_app(store, token=args.token)
    _write_manifest("serve", args, [], [],
                    Path(args.data_dir) / "serve.manifest.json")
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emokit",
        description="Multi-label speech emotion benchmark toolkit.")
    parser.add_argument("--version", action="version", version=f"emokit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("aggregate", help="turn per-rater votes into training labels")
    p.add_argument("--rule", choices=list(aggregation.RULES), required=True)
    p.add_argument("--taxonomy", default="pod-primary",
                   help="builtin taxonomy name or config path")
    p.add_argument("--smoothing", type=float, default=0.05,
                   help="label smoothing epsilon (0 disables)")
    p.add_argument("--smooth-singles", action="store_true",
                   help="also smooth MR/PR one-hot targets into distributions")
    p.add_argument("--input", required=True, help="annotation JSONL")
    p.add_argument("--output", required=True, help="label JSONL to write")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("partition", help="build a speaker-independent partition plan")
    p.add_argument("--scheme", required=True, help="builtin scheme name or config path")
    p.add_argument("--taxonomy", default="pod-primary")
    p.add_argument("--input", required=True, help="annotation JSONL")
    p.add_argument("--output", required=True, help="plan JSON to write")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("evaluate", help="score predictions with 1/C-threshold macro-F1")
    p.add_argument("--pred", required=True, help="prediction JSONL")
    p.add_argument("--gold", required=True, help="gold label JSONL")
    p.add_argument("--plan", help="partition plan JSON (restricts to a fold's test set)")
    p.add_argument("--fold", type=int, help="1-based fold index into --plan")
    p.add_argument("--taxonomy", default="pod-primary")
    p.add_argument("--dataset", default="", help="dataset name stamped into the report")
    p.add_argument("--report", help="write the evaluation report JSON here")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("relabel", help="adjust labels from typed descriptions via LLM")
    p.add_argument("--input", required=True, help="annotation JSONL")
    p.add_argument("--labels", required=True, help="label JSONL (AR references)")
    p.add_argument("--output", required=True, help="relabel artifact JSONL")
    p.add_argument("--merged-labels", help="also write labels with adjustments merged")
    p.add_argument("--taxonomy", default="pod-primary")
    p.add_argument("--batch-size", type=int, default=relabel.MAX_BATCH)
    p.add_argument("--mock", help="fixtures directory for the offline transport")
    p.add_argument("--live", action="store_true",
                   help="use the live chat-completion API (needs EMOKIT_API_KEY)")
    p.add_argument("--resume", action="store_true",
                   help="reuse answers already present in --output")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_relabel)

    p = sub.add_parser("train", help="train the desk-scale head on exported features")
    p.add_argument("--features", required=True, help="directory of .bin/.json stacks")
    p.add_argument("--labels", required=True, help="label JSONL (distribution targets)")
    p.add_argument("--taxonomy", default="pod-primary")
    p.add_argument("--plan", help="partition plan JSON providing train/dev splits")
    p.add_argument("--fold", type=int, help="1-based fold index into --plan")
    p.add_argument("--checkpoint", required=True, help="checkpoint JSON to write")
    p.add_argument("--history", help="write per-epoch loss history JSON here")
    p.add_argument("--beta", type=float, default=0.9999,
                   help="class-balance hyperparameter")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="average softmax layer weights over checkpoints")
    p.add_argument("--checkpoints", required=True, help="directory of checkpoint JSONs")
    p.add_argument("--out", required=True, help="layer-weight report JSON to write")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("cbce-factors", help="print class-balanced loss factors")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--counts", required=True,
                   help="comma-separated per-class positive counts")
    p.set_defaults(func=cmd_cbce_factors)

    p = sub.add_parser("serve", help="run the leaderboard service")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--token", help="static API token required in X-API-Token")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmokitError as exc:
        print(json.dumps(exc.to_json(), default=str), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
