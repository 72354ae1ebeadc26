"""Command-line interface.

Subcommands: ``train``, ``eval``, ``seeds``, ``bench``, ``verify``,
``params``. Metrics stream as JSON lines to ``<out-dir>/metrics.jsonl``;
a human summary goes to stdout. Exit codes: 0 success, 1 config/data
error, 2 usage error, 3 diverged training run.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .bench import bench_scaling
from .config import parse_config_file, precision_dtype
from .errors import ConfigError, DataError
from .model import budget_check, count_params, load_checkpoint
from .training import evaluate, run_seeds, train
from .verify import run_verify

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key=value config file")
    common.add_argument("--seed", type=int, default=None,
                        help="override the first configured seed")
    common.add_argument("--out-dir", default="runs", help="output directory")
    common.add_argument("--precision", choices=("f32", "f64"), default="f32")
    common.add_argument("--override-budget", action="store_true",
                        help="train even when the kernel parameter budget fails")

    parser = argparse.ArgumentParser(
        prog="linattn",
        description="Kernelized linear attention: train, verify, and benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train one model")
    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file to load")
    sub.add_parser("seeds", parents=[common],
                   help="train across all configured seeds and aggregate")
    p_bench = sub.add_parser("bench", parents=[common], help="sequence-length scaling benchmark")
    p_bench.add_argument("--lengths", default="256,512,1024,2048",
                         help="comma-separated sequence lengths")
    p_bench.add_argument("--repeats", type=int, default=5)
    sub.add_parser("verify", parents=[common],
                   help="run the oracle/gradient/positivity battery")
    sub.add_parser("params", parents=[common],
                   help="print parameter accounts and the budget verdict")
    return parser


def _require_config(args):
    if not args.config:
        raise ConfigError(f"the {args.command} command needs --config <path>")
    if not os.path.exists(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    return parse_config_file(args.config)


def _cmd_train(args) -> int:
    config = _require_config(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    dtype = precision_dtype(args.precision)
    result = train(config, seed, out_dir=args.out_dir, dtype=dtype,
                   override_budget=args.override_budget, log=print)
    if result.diverged:
        print(f"run diverged at step {result.steps_run} (non-finite loss)")
        return EXIT_DIVERGED
    print(f"finished after {result.steps_run} steps: "
          f"eval accuracy {result.final_accuracy:.4f}")
    if result.checkpoint_path:
        print(f"checkpoint: {result.checkpoint_path}")
        print(f"metrics: {os.path.join(args.out_dir, 'metrics.jsonl')}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _require_config(args)
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    _, eval_ds = config.task.build()
    accuracy, loss = evaluate(model, eval_ds, batch_size=64)
    print(f"eval accuracy {accuracy:.4f}  mean loss {loss:.4f} "
          f"({len(eval_ds)} examples)")
    return EXIT_OK


def _cmd_seeds(args) -> int:
    config = _require_config(args)
    dtype = precision_dtype(args.precision)
    summary = run_seeds(config, out_dir=args.out_dir, dtype=dtype,
                        override_budget=args.override_budget)
    for row in summary.rows:
        note = "  DIVERGED" if row["diverged"] else ""
        print(f"seed {row['seed']:>4d}  accuracy {row['accuracy']:.4f}  "
              f"steps {row['steps']}{note}")
    flag = "  (high variance)" if summary.high_variance else ""
    print(f"aggregate over {len(summary.rows) - len(summary.diverged_seeds)} runs: "
          f"mean {summary.mean:.4f}  best {summary.best:.4f}  std {summary.std:.4f}{flag}")
    if summary.diverged_seeds:
        print(f"diverged seeds excluded from the aggregate: {summary.diverged_seeds}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    lengths = [int(tok) for tok in args.lengths.replace(",", " ").split()]
    dtype = precision_dtype(args.precision)
    result = bench_scaling(lengths, repeats=args.repeats, dtype=dtype)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "bench.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(result.csv())
    print(result.csv(), end="")
    for kind, slope in result.exponents.items():
        print(f"fitted exponent {kind}: {slope:.3f}")
    for warning in result.resolution_warnings:
        print(f"warning: {warning}")
    print(f"csv written to {csv_path}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    return EXIT_OK if run_verify(log=print) else EXIT_ERROR


def _cmd_params(args) -> int:
    from .model import build_model
    config = _require_config(args)
    dtype = precision_dtype(args.precision)
    model = build_model(config.model, seed=config.seeds[0], dtype=dtype)
    account = count_params(model)
    verdict = budget_check(account, config.budget_limit)
    print(f"base parameters:   {account.base_params}")
    print(f"kernel parameters: {account.kernel_params}")
    print(f"ratio:             {account.ratio:.4f}")
    print(verdict)
    return EXIT_OK


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "seeds": _cmd_seeds,
             "bench": _cmd_bench, "verify": _cmd_verify, "params": _cmd_params}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
