"""Command-line entry point: ``gppnlab generate|train|eval|sweep|oracle-check``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from . import harness
from .dataset import SPLIT_NAMES, check_dataset, load_dataset, make_dataset, make_splits, save_dataset
from .estimators import OraclePlanner, load_planner
from .exceptions import ConfigError, ContractError, DatasetFormatError
from .planners import PlannerConfig, save_checkpoint

log = logging.getLogger("gppnlab")

EVAL_COLUMNS = ("source", "samples", "states", "pct_opt", "pct_suc")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _counts(text):
    counts = _int_list(text)
    if len(counts) not in (1, 3) or min(counts) < 1:
        raise argparse.ArgumentTypeError("--count takes N or TRAIN,VAL,TEST (all positive)")
    return counts


def split_path(prefix, split):
    return f"{prefix}.{split}.gppn"


def _resolve_data(path):
    """``path`` itself if it is a file, else the split files under that prefix."""
    if os.path.isfile(path):
        return {"train": load_dataset(path)}
    found = {s: split_path(path, s) for s in SPLIT_NAMES}
    if not os.path.isfile(found["train"]):
        raise FileNotFoundError(f"no dataset at {path!r} or {found['train']!r}")
    return {s: load_dataset(p) for s, p in found.items() if os.path.isfile(p)}


def _train_config(args):
    return harness.TrainConfig(lr=args.lr, batch=args.batch, clip=args.clip, epochs=args.epochs,
                               seed=args.seed, dtype=args.dtype)


def cmd_generate(args):
    if len(args.count) == 3:
        splits = make_splits(args.m, args.kernel, args.count, seed=args.seed, decimation=args.decimation)
        for name, ds in splits.items():
            save_dataset(ds, split_path(args.out, name))
            print(f"wrote {split_path(args.out, name)} ({len(ds)} samples)")
    else:
        ds = make_dataset(args.m, args.kernel, args.count[0], seed=args.seed, decimation=args.decimation)
        save_dataset(ds, args.out)
        print(f"wrote {args.out} ({len(ds)} samples)")
    return 0


def cmd_train(args):
    data = _resolve_data(args.data)
    train_ds = data["train"]
    val_ds = load_dataset(args.val) if args.val else data.get("val")
    cfg = PlannerConfig(arch=args.arch, K=args.K, F=args.F, hidden=args.hidden, kernel=train_ds.kernel)
    result = harness.train(cfg, _train_config(args), train_ds, val_ds)
    save_checkpoint(args.out, cfg, result.params,
                    extra={"best_epoch": result.best_epoch, "status": result.status, "seed": args.seed})
    csv_path = args.csv or os.path.splitext(args.out)[0] + ".epochs.csv"
    harness.write_epoch_csv(csv_path, result.reports)
    print(f"status={result.status} best_epoch={result.best_epoch} checkpoint={args.out} epochs={csv_path}")
    return 0


def cmd_eval(args):
    ds = load_dataset(args.data)
    if args.oracle:
        model, source = OraclePlanner(kernel=ds.kernel.name).fit(), "oracle"
    else:
        model, source = load_planner(args.ckpt), args.ckpt
    scores = model.evaluate(ds)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    w.writerow([source, len(ds), ds.n_states, f"{scores['pct_opt']:.6f}", f"{scores['pct_suc']:.6f}"])
    return 0


def cmd_sweep(args):
    splits = _resolve_data(args.data)
    if "test" not in splits:
        raise FileNotFoundError(f"sweep needs {split_path(args.data, 'test')}")
    grid = [(K, F) for K in args.K_list for F in args.F_list]
    rows, curve = harness.sweep(args.arch, grid, _train_config(args), splits, hidden=args.hidden)
    harness.write_csv(f"{args.out}.summary.csv", harness.SWEEP_COLUMNS, (r.as_row() for r in rows))
    harness.write_csv(f"{args.out}.curve.csv", ("n", "mean_test_pct_opt"),
                      ((n, v) for n, v in enumerate(curve, start=1)))
    print(f"wrote {args.out}.summary.csv and {args.out}.curve.csv ({len(rows)} runs)")
    return 0


def cmd_oracle_check(args):
    ds = load_dataset(args.data)
    problems = check_dataset(ds)
    for p in problems:
        print(p)
    if problems:
        print(f"{args.data}: {len(problems)} violation(s)", file=sys.stderr)
        return 1
    print(f"{args.data}: ok ({len(ds)} samples, {ds.n_states} states)")
    return 0


def _add_training_flags(p):
    p.add_argument("--arch", required=True, type=str.upper, choices=["VIN", "GPPN", "HYPERVIN"])
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--data", required=True, help="dataset file or split prefix")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--clip", type=float, default=40.0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")


def build_parser():
    parser = argparse.ArgumentParser(prog="gppnlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write maze datasets")
    p.add_argument("--m", type=int, default=15)
    p.add_argument("--kernel", default="NEWS")
    p.add_argument("--count", type=_counts, required=True, help="N, or TRAIN,VAL,TEST for a split prefix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decimation", type=float, default=None, help="fixed wall-removal probability")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one planner")
    _add_training_flags(p)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--F", type=int, default=3)
    p.add_argument("--val", default=None, help="validation file (defaults to the .val split)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--csv", default=None, help="epoch CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint (or the oracle) on a dataset")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt")
    src.add_argument("--oracle", action="store_true", help="play the stored optimal labels")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train a (K, F) grid and rank by test %%Opt")
    _add_training_flags(p)
    p.add_argument("--K-list", dest="K_list", type=_int_list, required=True)
    p.add_argument("--F-list", dest="F_list", type=_int_list, required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-check", help="verify a dataset file's labels and distances")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except DatasetFormatError as exc:
        print(f"error: malformed file: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
