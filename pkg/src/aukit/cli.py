"""Command-line entry point: one executable with per-task subcommands.

Exit codes: 0 success, 1 usage/contract error, 2 numeric failure, 3 I/O error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import harness, ingest, knowledge, labeling, model, synth
from .domain import ContractError, EXPRESSIONS, NumericFailure, expression_index
from .losses import expression_loss, finite_difference_check

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


def _load_config(args):
    """Build a TrainConfig from --config JSON overridden by CLI flags."""
    values = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            values.update(json.load(fh))
    known = {f.name for f in fields(harness.TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    for name in ("seed", "lam", "strategy", "epochs"):
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    if "hidden" in values:
        values["hidden"] = tuple(values["hidden"])
    return harness.TrainConfig(**values)


def _load_frames_dir(frames_dir):
    records = []
    for name in sorted(os.listdir(frames_dir)):
        if name.endswith(".ndjson"):
            records.extend(ingest.read_frame_store(os.path.join(frames_dir, name)))
    if not records:
        raise ContractError(f"no frame stores (*.ndjson) found in {frames_dir}")
    return records


def _group_by_video(records):
    groups = {}
    for r in records:
        groups.setdefault(r.video_id, []).append(r)
    for video_records in groups.values():
        video_records.sort(key=lambda r: r.frame_index)
    return groups


def cmd_ingest(args):
    os.makedirs(args.out, exist_ok=True)
    for path in args.inputs:
        video_id = os.path.splitext(os.path.basename(path))[0]
        with open(path, "r", encoding="utf-8") as fh:
            records = ingest.parse_openface_csv(fh, video_id)
        repaired, flags = ingest.interpolate_zero_intensities(records)
        for flag in flags:
            print(f"warning: {flag}", file=sys.stderr)
        out_path = os.path.join(args.out, video_id + ".ndjson")
        ingest.write_frame_store(repaired, out_path)
        print(f"{video_id}: {len(repaired)} frames -> {out_path}")
    return EXIT_OK


def cmd_extract_knowledge(args):
    records = _load_frames_dir(args.frames)
    records = ingest.reliable_detections(records, min_confidence=args.min_confidence)
    with open(args.preds, "r", encoding="utf-8") as fh:
        predictions = ingest.load_frame_predictions(fh)
    reliable = knowledge.filter_reliable_frames(predictions, args.theta)
    matrix = knowledge.compute_dataset_knowledge(records, reliable)
    knowledge.export_knowledge(matrix, args.out)
    print(f"knowledge matrix (per-dataset) -> {args.out}")
    return EXIT_OK


def cmd_aggregate_knowledge(args):
    matrices = [knowledge.import_knowledge(path) for path in args.inputs]
    policy = "compat" if args.midpoint == "compat" else "general"
    aggregate = knowledge.aggregate_knowledge(matrices, midpoint_policy=policy)
    if args.scale:
        aggregate = knowledge.scale_for_loss(aggregate)
    knowledge.export_knowledge(aggregate, args.out)
    print(f"knowledge matrix ({aggregate.stage}) -> {args.out}")
    return EXIT_OK


def cmd_pseudo_label(args):
    groups = _group_by_video(_load_frames_dir(args.frames))
    expr_by_video = {}
    if args.video_labels:
        with open(args.video_labels, "r", encoding="utf-8") as fh:
            for line in fh.read().splitlines()[1:]:
                if line.strip():
                    video_id, label = line.split(",")[:2]
                    expr_by_video[video_id] = expression_index(label)
    labels = [
        labeling.derive_video_au_labels(records, expr_by_video.get(video_id, 0))
        for video_id, records in sorted(groups.items())
    ]
    labeling.write_labels_csv(labels, args.out)
    print(f"{len(labels)} video AU labels -> {args.out}")
    return EXIT_OK


def cmd_pos_weights(args):
    labels = labeling.read_labels_csv(args.labels)
    spec = labeling.compute_pos_weights(labels, args.strategy)
    os.makedirs(args.out, exist_ok=True)
    labeling.write_pos_weights_csv(spec, os.path.join(args.out, "pos_weights.csv"))
    print(f"pos-weights ({args.strategy}) -> {args.out}")
    return EXIT_OK


def cmd_synth_gen(args):
    spec_kwargs = {"total": args.n, "seed": args.seed if args.seed is not None else 0}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if "class_proportions" in loaded:
            loaded["class_proportions"] = np.array(loaded["class_proportions"])
        spec_kwargs.update(loaded)
    spec = synth.SynthSpec(**spec_kwargs)
    dataset = synth.generate_dataset(spec)
    os.makedirs(args.out, exist_ok=True)
    model.save_features(dataset.features, os.path.join(args.out, "features.bin"))
    np.savetxt(
        os.path.join(args.out, "expression_labels.csv"),
        dataset.expr_labels,
        fmt="%d",
        header="expression_index",
        comments="# ",
    )
    labeling.write_labels_csv(
        dataset.au_labels(), os.path.join(args.out, "au_labels.csv")
    )
    knowledge.export_knowledge(
        dataset.knowledge, os.path.join(args.out, "knowledge.csv")
    )
    print(f"synthetic dataset (N={spec.total}) -> {args.out}")
    return EXIT_OK


def _load_dataset_dir(path):
    features = model.load_features(os.path.join(path, "features.bin"))
    expr_labels = np.loadtxt(
        os.path.join(path, "expression_labels.csv"), dtype=np.int64, comments="#"
    )
    au_label_list = labeling.read_labels_csv(os.path.join(path, "au_labels.csv"))
    au_labels = np.stack([lab.y for lab in au_label_list])
    return features, np.atleast_1d(expr_labels), au_labels, au_label_list


def _build_train_data(args, config):
    features, expr_labels, au_labels, au_label_list = _load_dataset_dir(args.data)
    kn = knowledge.import_knowledge(
        args.knowledge or os.path.join(args.data, "knowledge.csv")
    )
    if args.pos_weights_file:
        spec = labeling.read_pos_weights_csv(args.pos_weights_file)
    else:
        spec = labeling.compute_pos_weights(au_label_list, config.strategy)
    data = harness.TrainData(
        features=features,
        expr_labels=expr_labels,
        au_labels=au_labels,
        knowledge=kn,
        pos_weights=spec,
    )
    if args.test_data:
        test_features, test_labels, _, _ = _load_dataset_dir(args.test_data)
        data.test_features = test_features
        data.test_expr_labels = test_labels
    return data, au_label_list


def cmd_train(args):
    config = _load_config(args)
    data, _ = _build_train_data(args, config)
    params, state, logs = harness.train(config, data)
    os.makedirs(args.out, exist_ok=True)
    model.save_checkpoint(params, state, os.path.join(args.out, "checkpoint.bin"))
    with open(os.path.join(args.out, "epochs.csv"), "w", encoding="utf-8") as fh:
        fh.write("# aukit epochs v1\n")
        fh.write("epoch,loss_e,loss_au,loss,train_war,train_uar,test_war,test_uar\n")
        for entry in logs:
            fh.write(
                f"{entry.epoch},{entry.loss_expression!r},{entry.loss_au!r},"
                f"{entry.loss_total!r},{entry.train_war!r},{entry.train_uar!r},"
                f"{entry.test_war!r},{entry.test_uar!r}\n"
            )
    print(f"trained {len(logs)} epochs -> {args.out}")
    return EXIT_OK


def cmd_eval(args):
    params, _ = model.load_checkpoint(args.checkpoint)
    features, expr_labels, _, _ = _load_dataset_dir(args.data)
    report = harness.evaluate(params, features, expr_labels)
    os.makedirs(args.out, exist_ok=True)
    harness.export_confusion(
        report,
        os.path.join(args.out, "confusion.csv"),
        os.path.join(args.out, "confusion.svg"),
    )
    recalls = ",".join(repr(float(v)) for v in report.per_class_recall)
    with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("# aukit metrics v1\n")
        fh.write(
            "war,uar," + ",".join(f"recall_{n}" for n in EXPRESSIONS) + "\n"
        )
        fh.write(f"{report.war!r},{report.uar!r},{recalls}\n")
    print(f"WAR={report.war:.4f} UAR={report.uar:.4f} -> {args.out}")
    return EXIT_OK


def cmd_sweep(args):
    config = _load_config(args)
    data, _ = _build_train_data(args, config)
    grid = [float(v) for v in args.grid.split(",")] if args.grid else list(
        harness.DEFAULT_LAMBDA_GRID
    )
    rows = harness.lambda_sweep(config, data, grid=grid)
    os.makedirs(args.out, exist_ok=True)
    harness.write_metric_rows(rows, os.path.join(args.out, "sweep.csv"), "lambda")
    print(f"{len(rows)} sweep rows -> {args.out}")
    return EXIT_OK


def cmd_compare_strategies(args):
    config = _load_config(args)
    data, au_label_list = _build_train_data(args, config)
    strategies = args.strategies.split(",") if args.strategies else list(
        labeling.STRATEGIES
    )
    rows = harness.strategy_compare(config, data, au_label_list, strategies)
    os.makedirs(args.out, exist_ok=True)
    harness.write_metric_rows(
        rows, os.path.join(args.out, "strategies.csv"), "strategy"
    )
    print(f"{len(rows)} strategy rows -> {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    logits = rng.normal(size=(args.batch, 7))
    labels = rng.integers(0, 7, size=args.batch)

    def evaluator(x):
        return expression_loss(x, labels)

    report = finite_difference_check(evaluator, logits, epsilon=args.eps)
    print(
        json.dumps(
            {
                "max_relative_error": report.max_relative_error,
                "parameters_checked": report.parameters_checked,
                "epsilon": report.epsilon,
            }
        )
    )
    if report.max_relative_error > 1e-5:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_export_confusion(args):
    confusion = harness.read_confusion_csv(args.confusion)
    report = harness.evaluate_predictions(
        np.repeat(np.arange(7), confusion.sum(axis=1)),
        np.concatenate([np.repeat(np.arange(7), confusion[i]) for i in range(7)]),
    )
    os.makedirs(args.out, exist_ok=True)
    harness.export_confusion(
        report,
        os.path.join(args.out, "confusion.csv"),
        os.path.join(args.out, "confusion.svg"),
    )
    print(f"confusion artifacts -> {args.out}")
    return EXIT_OK


def cmd_export_embeddings(args):
    params, _ = model.load_checkpoint(args.checkpoint)
    features, expr_labels, _, _ = _load_dataset_dir(args.data)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "embeddings.csv")
    harness.export_embeddings(params, features, expr_labels, out_path)
    print(f"embeddings -> {out_path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="aukit",
        description="AU-expression knowledge extraction and auxiliary-loss training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
        return p

    p = add("ingest", cmd_ingest, help="parse OpenFace CSV files into frame stores")
    p.add_argument("inputs", nargs="+")

    p = add("extract-knowledge", cmd_extract_knowledge)
    p.add_argument("--frames", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--min-confidence", type=float, default=0.8)

    p = add("aggregate-knowledge", cmd_aggregate_knowledge)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--midpoint", choices=["compat", "general"], default="general")
    p.add_argument("--scale", action="store_true", help="also apply the x5 rescale")

    p = add("pseudo-label", cmd_pseudo_label)
    p.add_argument("--frames", required=True)
    p.add_argument("--video-labels", default=None)

    p = add("pos-weights", cmd_pos_weights)
    p.add_argument("--labels", required=True)
    p.add_argument(
        "--strategy", choices=list(labeling.STRATEGIES), default="distinct"
    )

    p = add("synth-gen", cmd_synth_gen)
    p.add_argument("--spec", default=None)
    p.add_argument("--n", type=int, default=2000)

    for name, fn in (
        ("train", cmd_train),
        ("sweep", cmd_sweep),
        ("compare-strategies", cmd_compare_strategies),
    ):
        p = add(name, fn)
        p.add_argument("--data", required=True)
        p.add_argument("--test-data", default=None)
        p.add_argument("--knowledge", default=None)
        p.add_argument("--pos-weights-file", default=None)
        p.add_argument("--config", default=None)
        p.add_argument("--lam", type=float, default=None)
        p.add_argument("--strategy", default=None)
        p.add_argument("--epochs", type=int, default=None)
        if name == "sweep":
            p.add_argument("--grid", default=None)
        if name == "compare-strategies":
            p.add_argument("--strategies", default=None)

    p = add("eval", cmd_eval)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = add("gradcheck", cmd_gradcheck)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-5)

    p = add("export-confusion", cmd_export_confusion)
    p.add_argument("--confusion", required=True)

    p = add("export-embeddings", cmd_export_embeddings)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
