"""Command-line front end: prepare, synth, train, eval, predict, stats.

Exit codes: 0 success, 1 usage/config error, 2 data or checkpoint error,
3 numeric failure (non-finite loss). All run artifacts are written under one
output directory via temp-file + atomic rename.
"""

import argparse
import csv
import datetime
import io
import json
import os
import sys

import numpy as np

from . import synth
from .checkpoint import CheckpointError
from .config import config_help_text, load_config
from .data import DataError, dataset_fingerprint, load_dataset_dir
from .evaluation import evaluate, predict_topk
from .history import history_interval_stats
from .training import NumericError, load_model, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _add_config_args(sub):
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--profile", help="per-dataset default profile (e.g. icews14)")
    sub.add_argument(
        "overrides", nargs="*", metavar="key=value", help="config overrides"
    )


def _resolve_config(args):
    return load_config(
        path=getattr(args, "config", None),
        profile=getattr(args, "profile", None),
        overrides=getattr(args, "overrides", ()),
    )


def _now():
    return datetime.datetime.now().isoformat(timespec="seconds")


def cmd_prepare(args):
    ds = load_dataset_dir(args.data, granularity=args.granularity)
    print(
        f"{ds.num_entities} entities, {ds.num_base_relations} relations, "
        f"{ds.num_snapshots} snapshots"
    )
    for name in ("train", "valid", "test"):
        base = ds.split(name)
        print(f"{name}: {base.shape[0] // 2} facts ({base.shape[0]} with inverses)")
    out_dir = args.out or args.data
    os.makedirs(out_dir, exist_ok=True)
    lines = ["snapshot,facts"]
    for t in range(ds.num_snapshots):
        lines.append(f"{t},{ds.snapshots[t].num_edges}")
    _atomic_write(os.path.join(out_dir, "snapshots.csv"), "\n".join(lines) + "\n")
    return 0


def cmd_synth(args):
    params = {}
    for key in ("entities", "period", "timestamps", "holdout", "subjects",
                "min_gap", "max_gap", "modulus", "relations", "facts"):
        value = getattr(args, key, None)
        if value is not None:
            params[
                {
                    "entities": "num_entities",
                    "subjects": "num_subjects",
                    "relations": "num_relations",
                    "facts": "num_facts",
                }.get(key, key)
            ] = value
    dataset, description = synth.generate(args.kind, seed=args.seed, **params)
    synth.write(dataset, description, args.out)
    print(f"wrote {args.kind} dataset to {args.out}")
    return 0


def cmd_train(args):
    config = _resolve_config(args)
    ds = load_dataset_dir(args.data, granularity=args.granularity)
    os.makedirs(args.out, exist_ok=True)
    manifest = [
        f"config_file: {args.config or '-'}",
        f"profile: {args.profile or '-'}",
        f"dataset: {args.data}",
        f"dataset_fingerprint: {dataset_fingerprint(ds)}",
        f"output_dir: {args.out}",
        f"started: {_now()}",
    ]
    _atomic_write(os.path.join(args.out, "manifest.txt"), "\n".join(manifest) + "\n")
    _atomic_write(os.path.join(args.out, "config.txt"), config.canonical() + "\n")

    result = train(ds, config, run_dir=args.out, log=print)

    manifest.append(f"finished: {_now()}")
    manifest.append(f"best_epoch: {result.best_epoch}")
    manifest.append(f"best_val_mrr: {result.best_val_mrr:.6f}")
    _atomic_write(os.path.join(args.out, "manifest.txt"), "\n".join(manifest) + "\n")
    print(f"best epoch {result.best_epoch}, validation MRR {result.best_val_mrr:.4f}")
    return 0


def cmd_eval(args):
    config = _resolve_config(args)
    ds = load_dataset_dir(args.data, granularity=args.granularity)
    state, _ = load_model(args.checkpoint, config, ds)
    report = evaluate(ds, state, args.split, args.filter)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["split", "filter", "mrr", "h1", "h3", "h10", "queries"])
    writer.writerow(
        [report.split, report.filter_mode, f"{report.mrr:.6f}", f"{report.hits1:.6f}",
         f"{report.hits3:.6f}", f"{report.hits10:.6f}", report.num_queries]
    )
    text = buf.getvalue()
    if args.out:
        _atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_predict(args):
    config = _resolve_config(args)
    ds = load_dataset_dir(args.data, granularity=args.granularity)
    state, _ = load_model(args.checkpoint, config, ds)
    lines = []
    for query, topk in predict_topk(ds, state, args.split, args.topk):
        lines.append(json.dumps({"query": list(query), "topk": [[e, s] for e, s in topk]}))
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_stats(args):
    ds = load_dataset_dir(args.data, granularity=args.granularity)
    name = os.path.basename(os.path.normpath(args.data))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["dataset", "split", "mean_dt", "mean_dt_prime", "k"])
    for split in args.splits:
        stats = history_interval_stats(ds, args.m, args.n, split)
        writer.writerow(
            [name, split, f"{stats.mean_dt:.4f}", f"{stats.mean_dt_prime:.4f}", args.k]
        )
    text = buf.getvalue()
    if args.out:
        _atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


def build_parser():
    epilog = config_help_text()
    parser = _Parser(
        prog="tkgmatch",
        description="Temporal-KG extrapolation by historical-structure matching",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def sub(name, help_text):
        p = subs.add_parser(
            name, help=help_text, epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        return p

    p = sub("prepare", "validate a dataset directory and write its snapshot index")
    p.add_argument("--data", required=True)
    p.add_argument("--granularity", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prepare)

    p = sub("synth", "generate a synthetic dataset (cyclic / parity / random)")
    p.add_argument("--kind", required=True, choices=sorted(synth.GENERATORS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int)
    p.add_argument("--period", type=int)
    p.add_argument("--timestamps", type=int)
    p.add_argument("--holdout", type=int)
    p.add_argument("--subjects", type=int)
    p.add_argument("--min-gap", dest="min_gap", type=int)
    p.add_argument("--max-gap", dest="max_gap", type=int)
    p.add_argument("--modulus", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--facts", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub("train", "train a model; artifacts land in the run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--granularity", type=int)
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub("eval", "evaluate a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--filter", default="time-aware", choices=("raw", "time-aware"))
    p.add_argument("--granularity", type=int)
    p.add_argument("--out")
    _add_config_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub("predict", "emit top-k candidates per query as JSON lines")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--granularity", type=int)
    p.add_argument("--out")
    _add_config_args(p)
    p.set_defaults(func=cmd_predict)

    p = sub("stats", "history interval statistics (mean dt, mean dt') as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--splits", nargs="+", default=["valid"],
                   choices=("train", "valid", "test"))
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--granularity", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, CheckpointError) as exc:
        print(f"tkgmatch: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"tkgmatch: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"tkgmatch: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
