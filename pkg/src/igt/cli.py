"""Command-line entry point.

Subcommands: gen-data, train, eval, ablate, gradcheck, bench-attn.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
validation failure.  The environment variable IGT_PRECISION (f32|f64)
globally overrides the run precision for train/eval/ablate/bench-attn;
gradcheck always runs in f64 by contract.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .bench import check_rows, render_table, run_bench
from .data import SynthSpec, generate_dataset, oracle_label, read_dataset, write_dataset
from .errors import ConfigurationError, IgtError
from .gradcheck import DEFAULT_SEED, TOLERANCE, run_suite
from .harness import TrainConfig, ablate, evaluate_checkpoint, train
from .tensor import DTYPES


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="igt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic bag dataset")
    p.add_argument("--task", required=True, choices=["spatial-motif", "long-range", "hybrid"])
    p.add_argument("--bags", type=int, default=500)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-min", type=int, default=64)
    p.add_argument("--n-max", type=int, default=256)
    p.add_argument("--noise", type=float, default=1.0)

    for name, needs_out in (("train", True), ("ablate", True)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--data", required=True, help="dataset manifest.json")
        p.add_argument("--out", required=needs_out)
        p.add_argument("--mode", choices=["full", "no-attn", "no-gcn"])
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--precision", choices=sorted(DTYPES))
        p.add_argument("--kernel", choices=["naive", "tiled"])
        p.add_argument("--block", type=int, dest="kernel_block")
        p.add_argument("--n-blocks", type=int, dest="n_blocks")
        p.add_argument("--d", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--repeats", type=int, dest="repeats")

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--config", help="defaults to config.cfg next to the checkpoint")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--sizes", type=_int_list, default=[1, 7],
                   help="bag sizes for the full-model sweep, e.g. 1,7")

    p = sub.add_parser("bench-attn", help="naive vs tiled attention benchmark")
    p.add_argument("--n-list", type=_int_list, default=[256, 1024, 4096])
    p.add_argument("--d", type=int, default=256)
    p.add_argument("--block-list", type=_int_list, default=[128])
    p.add_argument("--precision", choices=sorted(DTYPES), default="f32")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        cfg = TrainConfig.from_flat(path.read_text())
    else:
        cfg = TrainConfig()
    overrides = {}
    for field in ("mode", "seed", "epochs", "precision", "kernel", "kernel_block",
                  "n_blocks", "d", "k", "repeats"):
        value = getattr(args, field, None)
        if value is not None:
            overrides[field] = value
    env_precision = os.environ.get("IGT_PRECISION")
    if env_precision:
        if env_precision not in DTYPES:
            raise ConfigurationError(f"IGT_PRECISION must be f32 or f64, got {env_precision!r}")
        overrides["precision"] = env_precision
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _cmd_gen_data(args) -> int:
    spec = SynthSpec(task=args.task, n_bags=args.bags, n_min=args.n_min, n_max=args.n_max,
                     d_in=args.dim, noise=args.noise, seed=args.seed)
    dataset = generate_dataset(spec)
    manifest = write_dataset(dataset, args.out)
    counts = [0, 0]
    for rec in dataset.all_records():
        counts[oracle_label(rec)] += 1
    sizes = {split: len(records) for split, records in dataset.splits.items()}
    print(f"wrote {manifest}")
    print(f"task={spec.task} bags={spec.n_bags} d_in={spec.d_in} splits={sizes} "
          f"class balance (by oracle): negative={counts[0]} positive={counts[1]}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    data = read_dataset(args.data)
    record = train(cfg, data, out_dir=args.out, log=print)
    print(f"selected epoch {record.selected_epoch}; "
          f"test acc {record.test.accuracy:.4f} auroc {record.test.auroc:.4f}")
    print(f"artifacts written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config_path = args.config or str(Path(args.checkpoint).parent / "config.cfg")
    if not Path(config_path).exists():
        raise ConfigurationError(f"config file not found: {config_path}")
    cfg = TrainConfig.from_flat(Path(config_path).read_text())
    env_precision = os.environ.get("IGT_PRECISION")
    if env_precision:
        if env_precision not in DTYPES:
            raise ConfigurationError(f"IGT_PRECISION must be f32 or f64, got {env_precision!r}")
        cfg = dataclasses.replace(cfg, precision=env_precision)
    data = read_dataset(args.data)
    report = evaluate_checkpoint(args.checkpoint, cfg, data, split=args.split)
    print(report.to_json())
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    data = read_dataset(args.data)
    result = ablate(cfg, data, log=print)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    (out / "ablation.txt").write_text(result.table() + "\n")
    print(result.table())
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, sizes=tuple(args.sizes))
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.component:<24} max_rel_err {r.max_rel_err:.3e}  {status}")
        failed = failed or not r.passed
    if failed:
        print(f"gradient check FAILED (threshold {TOLERANCE:.0e})", file=sys.stderr)
        return 2
    print(f"all components within {TOLERANCE:.0e}")
    return 0


def _cmd_bench_attn(args) -> int:
    precision = os.environ.get("IGT_PRECISION") or args.precision
    if precision not in DTYPES:
        raise ConfigurationError(f"precision must be f32 or f64, got {precision!r}")
    rows = run_bench(args.n_list, d=args.d, block_list=args.block_list,
                     precision=precision, seed=args.seed)
    print(render_table(rows))
    failures = check_rows(rows, precision)
    if failures:
        for f in failures:
            print(f"FAIL: {f}", file=sys.stderr)
        return 2
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "gradcheck": _cmd_gradcheck,
    "bench-attn": _cmd_bench_attn,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as e:
        print(f"igt: configuration error: {e}", file=sys.stderr)
        return 1
    except IgtError as e:
        print(f"igt: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
