"""Command-line entry point.

Subcommands:
  synth  --n --seed --out                    write a synthetic dataset container
  train  --config --out                      train from a JSON run config
  eval   --ckpt --data --out [--gt-debug]    metrics CSV (x1000), MEAN row last
  bench  --config-a --config-b --batch --reps  throughput comparison CSV
  flops  --preset [--base] [--rate]          analytical flop CSV

CSV column orders are fixed:
  train: step, L_J3D, L_RJ3D, L_V3D, L_RJ2D, L_P, total, wall_time
  eval:  sample, MPJPE, PAMPJPE, MPVE
  bench: config, tokens, images_per_sec, speedup_vs_a
  flops: preset, component, flops, reduction_vs_base
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def _cmd_synth(args) -> int:
    from .data import synth_dataset

    synth_dataset(args.n, args.seed, out_path=args.out)
    print(f"wrote {args.n} samples to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .config import load_config
    from .train import train

    cfg = load_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    summary = train(cfg)
    print(f"first loss {summary['first_loss']:.6g}, final loss {summary['final_loss']:.6g}")
    print(f"checkpoint: {summary['checkpoint']}")
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate

    result = evaluate(args.ckpt, args.data, out_csv=args.out,
                      gt_as_prediction=args.gt_debug)
    if args.out:
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(result["csv"])
    return 0


def _cmd_bench(args) -> int:
    from .bench import bench

    result = bench(args.config_a, args.config_b, batch=args.batch, reps=args.reps)
    sys.stdout.write(result["csv"])
    return 0


def _cmd_flops(args) -> int:
    from .flops import model_flops, reduction_report

    variant = model_flops(args.preset, prune_rate=args.rate)
    lines = ["preset,component,flops,reduction_vs_base"]
    if args.base:
        base = model_flops(args.base, prune_rate=0.0)
        lines.extend(reduction_report(base, variant).csv_rows())
    else:
        for name, flops in sorted(variant.components.items()):
            lines.append(f"{variant.preset},{name},{flops},")
        lines.append(f"{variant.preset},total,{variant.total},")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tore", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=str, default="")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--gt-debug", action="store_true",
                   help="score the ground truth against itself (sanity path)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="throughput comparison at desk dims")
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--reps", type=int, default=20)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("flops", help="analytical flop accounting")
    p.add_argument("--preset", required=True)
    p.add_argument("--base", default=None)
    p.add_argument("--rate", type=float, default=0.0,
                   help="prune rate for the itp preset")
    p.set_defaults(func=_cmd_flops)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
