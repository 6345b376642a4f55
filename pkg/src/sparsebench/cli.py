"""Command-line entry point: ``sparsebench <subcommand> --config run.json``."""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__, bench, dataflow, formats, kernels, nn, sparse, training
from .pipeline import open_run

log = logging.getLogger("sparsebench")


def _common(p, out_help=None, fmt=False):
    p.add_argument("--config", required=True, help="run config (JSON)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--fast", action="store_true", help="reduced epochs / attribution budget")
    p.add_argument("--label-col", help="label column in input CSVs (overrides config)")
    if out_help:
        p.add_argument("--out", help=out_help)
    if fmt:
        p.add_argument("--format", choices=("csv", "markdown"), default="csv")


def build_parser():
    ap = argparse.ArgumentParser(prog="sparsebench", description="Pruning, sparse inference and SHAP feature "
                                 "selection benchmark for flow-based intrusion detection models.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    _common(sub.add_parser("synth", help="generate the synthetic flow table"))
    _common(sub.add_parser("preprocess", help="clean, map labels and split train/test CSVs"))
    _common(sub.add_parser("tune", help="random search over layer counts and widths"),
            out_help="best-config JSON fragment (default: reports/best_config.json)")
    _common(sub.add_parser("train", help="train the dense baseline"))
    _common(sub.add_parser("prune", help="gradual magnitude pruning with fine-tuning"))
    p = sub.add_parser("select-features", help="SHAP top-k inputs, retrain and prune")
    _common(p)
    p.add_argument("--attributions", help="reuse an attribution CSV instead of running KernelSHAP")
    _common(sub.add_parser("convert-sparse", help="write SPIF files for the pruned models"))
    p = sub.add_parser("infer", help="class probabilities from a dense or SPIF model")
    _common(p, out_help="predictions CSV (default: reports/predictions.csv)")
    p.add_argument("--model", help="model file (default: models/pruned.spif)")
    p.add_argument("--input", help="input CSV (default: the run's test split)")
    _common(sub.add_parser("bench", help="three-stage benchmark; runs missing stages"),
            out_help="report file (default: reports/report.csv or .md)", fmt=True)
    p = sub.add_parser("report", help="merge benchmark reports from one or more runs")
    _common(p, out_help="report file (default: reports/report.csv or .md)", fmt=True)
    p.add_argument("inputs", nargs="*", help="report CSVs or run directories to merge (default: this run)")
    return ap


def _load_rows(run, path):
    """Feature rows of ``path`` aligned to the run's preprocessed columns."""
    run.ensure_data()
    with open(run.features_json) as fh:
        info = json.load(fh)
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    label = info["label_col"] if info["label_col"] in header else None
    t = dataflow.load_csv(path, label)
    kept = info["kept"]
    if all(c in t.columns for c in kept):
        t = t.select_columns(kept)
    labels = None
    if label is not None:
        labels = dataflow.map_labels(t, info["label_mapping"]).labels
    return t.values, labels


def cmd_infer(run, args):
    path = args.model or run.pruned_spif
    if not args.model and not os.path.isfile(path):
        run.convert_sparse()
    if formats.sniff(path) == "spif":
        model = formats.deserialize_sparse(path)
        fn = lambda x: sparse.sparse_infer(model, x)
        kind, window = model.kind, model.window
    else:
        params, manifest = formats.load_dense(path)
        model = sparse.NaiveDenseModel(params, manifest["feature_mask"], manifest["input_width"])
        fn = model
        kind, window = params.kind, getattr(params, "window", 1)
    rows, labels = _load_rows(run, args.input or run.test_csv)
    if kind == "lstm":
        X, labels = training.make_windows(rows, labels, window)
        first = window - 1
    else:
        X, first = rows, 0
    proba = sparse.predict_many(fn, X)
    pred = np.argmax(proba, axis=1)
    out = args.out or run.path("reports", "predictions.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "prediction", *[f"p_{c}" for c in dataflow.CLASS_NAMES]])
        for i, (k, p) in enumerate(zip(pred, proba)):
            w.writerow([first + i, dataflow.CLASS_NAMES[k], *[repr(float(v)) for v in p]])
    msg = f"{len(pred)} predictions -> {out}"
    if labels is not None:
        msg += f" (accuracy {bench.compute_metrics(pred, labels).accuracy:.4f})"
    print(msg)


def cmd_report(run, args):
    merged = bench.BenchReport()
    sources = args.inputs or [run.dir]
    for src in sources:
        path = os.path.join(src, "reports", "report.csv") if os.path.isdir(src) else src
        if not os.path.isfile(path):
            raise FileNotFoundError(f"no report at {path}; run 'bench' first")
        merged.rows.extend(bench.read_report_csv(path).rows)
    out = args.out or run.path("reports", "merged." + ("md" if args.format == "markdown" else "csv"))
    bench.emit_report(merged, out, args.format)
    print(out)


def run_command(args):
    run = open_run(args.config, args.seed, args.fast, args.label_col)
    cmd = args.command
    if cmd == "synth":
        print(run.synth())
    elif cmd == "preprocess":
        res = run.preprocess()
        print(f"{len(res.kept)} features kept -> {run.train_csv}, {run.test_csv}")
    elif cmd == "tune":
        best, records = run.tune()
        if best is None:
            raise RuntimeError(f"all {len(records)} trials failed")
        if args.out:
            with open(run.path("reports", "best_config.json")) as src, open(args.out, "w") as dst:
                dst.write(src.read())
        print(f"best trial {best.trial}: accuracy {best.accuracy:.4f} {json.dumps(best.config, sort_keys=True)}")
    elif cmd == "train":
        params = run.train()
        print(f"{run.original_path} ({nn.n_parameters(params)} parameters)")
    elif cmd == "prune":
        run.prune()
        print(run.pruned_path)
    elif cmd == "select-features":
        res = run.select_features(args.attributions)
        print(f"top-{len(res.selected)} share {res.share:.4f} -> {run.fs_pruned_spif}")
    elif cmd == "convert-sparse":
        for p in run.convert_sparse():
            print(p)
    elif cmd == "infer":
        cmd_infer(run, args)
    elif cmd == "bench":
        report = run.bench()
        out = run.emit(report, args.out, args.format)
        if not args.out:
            other = "markdown" if args.format == "csv" else "csv"
            run.emit(report, None, other)
        print(out)
    elif cmd == "report":
        cmd_report(run, args)


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        run_command(args)
    except Exception as exc:
        if args.verbose > 1:
            raise
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2 if type(exc).__name__ == "ConfigError" else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
