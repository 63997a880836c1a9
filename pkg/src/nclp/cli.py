"""Command-line entry point: ``nclp {split,train,eval,sweep,bench,export-hist}``.

Exit codes: 0 success, 1 usage or input error, 2 numeric abort (NaN/Inf).
``NCGL_THREADS`` caps the BLAS thread pool; ``--deterministic`` pins it to one.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from contextlib import ExitStack
from pathlib import Path

from threadpoolctl import threadpool_limits

from .autodiff import NumericError, save_checkpoint
from .graph import DatasetError, load_dataset
from .methods import METHODS, PAPER_EPOCHS, TrainConfig, train
from .pipeline import (
    RunConfig,
    bench_csv,
    benchmark,
    config_hash,
    evaluate,
    load_method,
    make_split,
    records_for,
    run_pipeline,
    similarity_histogram,
)
from .splits import SplitBundle

log = logging.getLogger("nclp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numeric aborts
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _train_config(args) -> TrainConfig:
    doc = _read_config(args.config)
    doc = {k: v for k, v in doc.items() if k not in {f.name for f in dataclasses.fields(RunConfig)} - {"method"}}
    cfg = TrainConfig.from_mapping(doc, method=args.method, epochs=getattr(args, "epochs", None))
    if getattr(args, "paper_epochs", False) and cfg.epochs is None and not cfg.supervised:
        cfg = dataclasses.replace(cfg, epochs=PAPER_EPOCHS)
    return cfg


def _load_split(path) -> SplitBundle:
    return SplitBundle.load(path)


def cmd_split(args) -> int:
    g, _ = load_dataset(args.dataset)
    bundle = make_split(g, args.setting, args.seed, args.frac)
    bundle.save(args.out)
    counts = {k: len(getattr(bundle, k)) for k in ("train", "valid_pos", "test_pos", "inference")}
    print(json.dumps({"setting": bundle.setting, "seed": bundle.seed, **counts}))
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    g, x = load_dataset(args.dataset)
    split = _load_split(args.split) if args.split else None
    res = train(g, x, split, cfg, args.seed,
                log=(lambda e, l: log.info("epoch %d loss %.6f", e, l)) if args.verbose else None)
    save_checkpoint(args.out, res.method.state_params())
    if args.loss_csv:
        Path(args.loss_csv).write_text(res.loss_curve_csv())
    summary = {"method": cfg.method, "seed": args.seed, "epochs_run": len(res.losses),
               "final_loss": res.losses[-1] if res.losses else None,
               "config_hash": config_hash(cfg), "checkpoint": str(args.out)}
    if res.best_valid is not None:
        summary.update(best_epoch=res.best_epoch, best_valid_hits=res.best_valid)
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    cfg = _train_config(args)
    g, x = load_dataset(args.dataset)
    split = _load_split(args.split)
    method = load_method(args.checkpoint, x.cols, cfg, args.seed)
    ev = evaluate(method, g, x, split, cfg, args.seed)
    recs = records_for(ev, method=cfg.method, dataset=Path(args.dataset).name, setting=split.setting,
                       seed=args.seed, chash=config_hash(cfg), checkpoint=str(args.checkpoint),
                       split_path=str(args.split))
    lines = "".join(r.to_json() + "\n" for r in recs)
    if args.out:
        with open(args.out, "a") as fh:
            fh.write(lines)
    sys.stdout.write(lines)
    return 0


def cmd_sweep(args) -> int:
    doc = _read_config(args.config)
    overrides = dict(dataset=args.dataset, method=args.method, out_dir=args.out_dir, split=args.split,
                     setting=args.setting)
    if args.seeds:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.paper_epochs:
        overrides["paper_epochs"] = True
    cfg = RunConfig.from_mapping(doc, **overrides)
    result = run_pipeline(cfg, log=log.info)
    print(json.dumps({"best_config_hash": result.best_hash, "best_cell": result.best_cell,
                      "metrics": str(result.metrics_path)}))
    sys.stdout.write(result.summary_csv)
    return 0


def cmd_bench(args) -> int:
    doc = _read_config(args.config)
    doc.pop("method", None)
    g, x = load_dataset(args.dataset)
    split = _load_split(args.split) if args.split else None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    rows = benchmark(g, x, split, methods, doc, epochs=args.epochs, runs=args.runs)
    text = bench_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_export_hist(args) -> int:
    cfg = _train_config(args)
    g, x = load_dataset(args.dataset)
    split = _load_split(args.split)
    method = load_method(args.checkpoint, x.cols, cfg, args.seed)
    hist = similarity_histogram(method, g, x, split, args.bins)
    Path(args.out).write_text(hist.to_csv())
    print(json.dumps({"mean_pos": hist.mean_pos, "mean_neg": hist.mean_neg,
                      "neg_mass_ge_0.5": hist.mass_at_or_above(0.5, "neg")}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded kernels for bitwise-reproducible runs")
    common.add_argument("-v", "--verbose", action="store_true")

    def method_args(p, required=True):
        p.add_argument("--method", choices=METHODS, required=required)
        p.add_argument("--config", help="JSON file of hyperparameters (dotted keys allowed)")
        p.add_argument("--seed", type=int, default=0)

    ap = _Parser(prog="nclp", description="Graph encoders for link prediction.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("split", parents=[common], help="generate a split file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--setting", choices=("transductive", "inductive"), default="transductive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frac", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train an encoder and write a checkpoint")
    method_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", help="split file; without one the whole graph is used")
    p.add_argument("--epochs", type=int)
    p.add_argument("--paper-epochs", action="store_true", help=f"{PAPER_EPOCHS} epochs for SSL methods")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="write epoch,loss,epoch_ms here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="decode and score a trained checkpoint")
    method_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="append JSON-lines metric records here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="grid sweep over seeds, with metrics log and summary")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--setting", choices=("transductive", "inductive"))
    p.add_argument("--split")
    p.add_argument("--seeds", help="comma-separated, default 0,1,2,3,4")
    p.add_argument("--out-dir")
    p.add_argument("--paper-epochs", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[common], help="per-epoch wall-clock per method")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split")
    p.add_argument("--config")
    p.add_argument("--methods", default="bgrl,tbgrl,mlgcn")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-hist", parents=[common], help="cosine similarity histogram CSV")
    method_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_hist)
    return ap


def _thread_cap(deterministic: bool) -> int | None:
    if deterministic:
        return 1
    raw = os.environ.get("NCGL_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"NCGL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("NCGL_THREADS must be at least 1")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "sweep" else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        with ExitStack() as stack:
            cap = _thread_cap(args.deterministic)
            if cap is not None:
                stack.enter_context(threadpool_limits(limits=cap))
            return args.func(args)
    except NumericError as exc:
        print(f"nclp: numeric abort: {exc}", file=sys.stderr)
        return 2
    except (UsageError, DatasetError, FileNotFoundError, KeyError, ValueError, IndexError) as exc:
        print(f"nclp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
