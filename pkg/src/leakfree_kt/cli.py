"""Command-line front end: ``leakfree-kt <subcommand> ...``.

Errors print one line ``error: category=<name> message=<text>`` on stderr and
exit with 2 usage, 3 io, 4 data-validation, 5 training-divergence or
6 fairness-violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import data as kdata
from .errors import DataValidationError, IngestIOError, KTError, UsageError
from .evaluation import evaluate, leakage_probe, write_summary
from .expansion import DEFAULT_WINDOW, plan_windows

DATA_ENV = "LEAKFREE_KT_DATA"
METHOD_ALIASES = {
    "one-by-one": "one_by_one",
    "all-in-one": "all_in_one",
    "aggregated-one-by-one": "aggregated_one_by_one",
}


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _data_dir(arg):
    d = arg or os.environ.get(DATA_ENV)
    if not d:
        raise UsageError(f"--data is required (or set {DATA_ENV})")
    p = Path(d)
    if not p.exists():
        raise IngestIOError(f"data directory not found: {p}")
    return p


def _emit(obj):
    print(json.dumps(obj, indent=1, sort_keys=True))


def cmd_prepare(args):
    src = Path(args.input)
    if not src.exists():
        raise IngestIOError(f"input not found: {src}")
    ds = kdata.load_dataset(src, args.dataset)
    out = kdata.write_canonical(ds, args.output)
    stats = kdata.compute_stats(ds.logs, ds.mapping)
    write_summary(out / "stats.json", stats.as_row())
    result = {"output": str(out), "stats": stats.as_row(), "ingestion": ds.report.to_dict()}
    if args.corr_transform:
        corr = kdata.corr_transform(ds)
        corr_out = kdata.write_canonical(corr, args.corr_output or f"{args.output.rstrip('/')}_corr")
        cstats = kdata.compute_stats(corr.logs, corr.mapping)
        write_summary(corr_out / "stats.json", cstats.as_row())
        result["corr_output"] = str(corr_out)
        result["corr_stats"] = cstats.as_row()
    _emit(result)


def cmd_stats(args):
    ds = kdata.load_prepared(_data_dir(args.data))
    _emit(kdata.compute_stats(ds.logs, ds.mapping).as_row())


def cmd_split(args):
    d = _data_dir(args.data)
    ds = kdata.load_prepared(d)
    plan = kdata.split_dataset(ds.logs, args.test_fraction, args.folds, args.seed)
    plan.validate(ds.students)
    out = Path(args.output) if args.output else d / "split.json"
    plan.save(out)
    _emit({
        "output": str(out),
        "test_students": len(plan.test_students),
        "folds": [{"train": len(t), "validation": len(v)} for t, v in plan.folds],
    })


def cmd_train(args):
    from .harness import run_experiment

    out = run_experiment(args.config, args.output)
    print((out / "comparison.csv").read_text(), end="")
    print(f"fairness attested; records in {out}")


def _checkpoint_windows(args):
    from .models.checkpoint import load_checkpoint

    model, payload = load_checkpoint(args.checkpoint)
    ds = kdata.load_prepared(_data_dir(args.data))
    if payload.get("kc_ids") is not None and payload["kc_ids"] != ds.kc_ids.to_dense:
        raise DataValidationError("data directory KC ids differ from the checkpoint's")
    if payload.get("question_ids") is not None and payload["question_ids"] != ds.question_ids.to_dense:
        raise DataValidationError("data directory question ids differ from the checkpoint's")
    logs = ds.logs
    if args.split:
        logs = ds.subset(kdata.SplitPlan.load(args.split).test_students)
    W = payload.get("extra", {}).get("window_questions", DEFAULT_WINDOW)
    windows = plan_windows(logs, ds.mapping, model.labeling, W, model.model_id != "dkt-fuse").windows
    return model, windows


def cmd_evaluate(args):
    method = METHOD_ALIASES.get(args.method, args.method)
    model, windows = _checkpoint_windows(args)
    if method == "all_in_one" and model.leak_free:
        print(f"note: {model.model_id} cannot read sibling responses; "
              "aggregated_one_by_one gives the same result at a fraction of the cost", file=sys.stderr)
    trace, rep = evaluate(model, windows, method)
    if args.trace:
        trace.save(args.trace)
    _emit({"model_id": model.model_id, **rep.to_dict()})


def cmd_audit(args):
    model, windows = _checkpoint_windows(args)
    rep = leakage_probe(model, windows, args.samples, args.seed)
    print(f"verdict: {rep.verdict}")
    _emit({"model_id": model.model_id, **rep.to_dict()})


def cmd_report(args):
    from .reporting import render_report

    text = render_report(Path(args.runs), args.format, plot=not args.no_plot)
    print(text, end="" if text.endswith("\n") else "\n")


def build_parser():
    p = Parser(prog="leakfree-kt", description="Leakage-free knowledge tracing benchmark.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("prepare", help="load a raw export and write the canonical format")
    s.add_argument("--dataset", required=True, choices=["assistments2009", "canonical"], help="input kind")
    s.add_argument("--input", required=True, help="raw input file")
    s.add_argument("--output", required=True, help="output directory")
    s.add_argument("--corr-transform", action="store_true", help="also write the KC-duplicated dataset")
    s.add_argument("--corr-output", help="directory for the duplicated dataset (default <output>_corr)")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("stats", help="dataset attributes of a prepared directory")
    s.add_argument("--data", help=f"prepared data directory (default ${DATA_ENV})")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("split", help="student-level test hold-out and cross-validation folds")
    s.add_argument("--data", help=f"prepared data directory (default ${DATA_ENV})")
    s.add_argument("--test-fraction", type=float, default=0.2, help="held-out student fraction")
    s.add_argument("--folds", type=int, default=5, help="number of CV folds")
    s.add_argument("--seed", type=int, default=0, help="shuffle seed")
    s.add_argument("--output", help="split file (default <data>/split.json)")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="run an experiment config")
    s.add_argument("--config", required=True, help="experiment YAML file")
    s.add_argument("--output", help="run directory (overrides the config)")
    s.set_defaults(func=cmd_train)

    methods = sorted(set(METHOD_ALIASES) | set(METHOD_ALIASES.values()))
    s = sub.add_parser("evaluate", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--data", help=f"prepared data directory (default ${DATA_ENV})")
    s.add_argument("--method", required=True, choices=methods, help="evaluation method")
    s.add_argument("--split", help="restrict to the test students of this split file")
    s.add_argument("--trace", help="write the prediction trace (JSON lines) here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("audit", help="perturbation leakage probe of a checkpoint")
    s.add_argument("--checkpoint", required=True, help="checkpoint file")
    s.add_argument("--data", help=f"prepared data directory (default ${DATA_ENV})")
    s.add_argument("--split", help="restrict to the test students of this split file")
    s.add_argument("--samples", type=int, default=200, help="occurrences to perturb")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("report", help="cross-model comparison table and AUC bar plot")
    s.add_argument("--runs", required=True, help="experiment output directory")
    s.add_argument("--format", choices=["csv", "json", "markdown"], default="markdown", help="table format")
    s.add_argument("--no-plot", action="store_true", help="skip the bar plot")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        args.func(args)
    except KTError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: category={exc.category} message={msg}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: category=io message={exc}", file=sys.stderr)
        return IngestIOError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
