"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ablate import run_ablation
from .checkpoint import CheckpointFormatError
from .config import ConfigError, load_config
from .data import EpisodeFormatError, generate_dataset
from .metrics import NumericError, read_metrics
from .plots import line_chart
from .project import export_projection
from .training import run_eval, run_finetune_online, run_training
from .verify import LOSS_NAMES, run_gradcheck


def _add_common(p, *flags):
    if "config" in flags:
        p.add_argument("--config", default=None, help="flat key=value config file")
    if "seed" in flags:
        p.add_argument("--seed", type=int, default=None)
    if "out" in flags:
        p.add_argument("--out", required=True)
    if "target" in flags:
        p.add_argument("--target", required=True, help="target dataset directory")
    if "source" in flags:
        p.add_argument("--source", default=None, help="source video directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="veorl")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate a target offline dataset")
    _add_common(p, "seed", "out")
    p.add_argument("--env", default="gridfetch")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--eps", type=float, default=0.3)

    p = sub.add_parser("gen-videos", help="generate action-free source videos")
    _add_common(p, "seed", "out")
    p.add_argument("--env", default="gridfetch")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--eps", type=float, default=0.3)

    p = sub.add_parser("train", help="run the three training stages")
    _add_common(p, "config", "seed", "out", "target", "source")
    p.add_argument("--start-stage", type=int, default=1, choices=(1, 2, 3))

    p = sub.add_parser("eval", help="evaluate a trained run")
    _add_common(p, "seed", "out")
    p.add_argument("--episodes", type=int, default=None)

    p = sub.add_parser("finetune", help="offline-to-online finetuning")
    _add_common(p, "seed", "out", "target")
    p.add_argument("--run", required=True, help="completed offline run directory")
    p.add_argument("--env", required=True, help="new environment id")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--scratch", action="store_true",
                   help="ignore the pretrained checkpoint")

    p = sub.add_parser("ablate", help="single-axis sweep")
    _add_common(p, "config", "out", "target", "source")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--seeds", default="0,1,2")

    p = sub.add_parser("project", help="PCA projection of BAN embeddings")
    _add_common(p, "out", "target", "source")
    p.add_argument("--run", required=True)

    sub.add_parser("gradcheck", help="finite-difference check of every loss")

    p = sub.add_parser("plot", help="line plot of metrics.jsonl scalars")
    _add_common(p, "out")
    p.add_argument("--metrics", required=True)
    p.add_argument("--stage", required=True)
    p.add_argument("--keys", required=True, help="comma-separated metric names")

    return parser


def _config_from(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def _dispatch(args):
    if args.cmd in ("gen-data", "gen-videos"):
        domain = "tar" if args.cmd == "gen-data" else "src"
        manifest = generate_dataset(args.env, args.eps, args.episodes,
                                    args.seed or 0, domain, args.out)
        print(f"wrote {manifest.episodes} {domain} episodes to {args.out}")
        return 0
    if args.cmd == "train":
        config = _config_from(args)
        result = run_training(config, args.target, args.source, args.out,
                              start_stage=args.start_stage)
        print(f"training complete: {result.path}")
        return 0
    if args.cmd == "eval":
        report = run_eval(args.out, episodes=args.episodes, seed=args.seed or 0)
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0
    if args.cmd == "finetune":
        curve = run_finetune_online(args.run, args.env, args.steps, args.target,
                                    args.out, seed=args.seed or 0,
                                    from_scratch=args.scratch)
        print(f"finetune curve with {len(curve)} points written to {args.out}")
        return 0
    if args.cmd == "ablate":
        config = _config_from(args)
        values = [v.strip() for v in args.values.split(",")]
        seeds = [int(s) for s in args.seeds.split(",")]
        rows = run_ablation(config, {args.axis: values}, args.target,
                            args.source, args.out, seeds=seeds)
        print(f"{len(rows)} ablation runs written to {args.out}")
        return 0
    if args.cmd == "project":
        coords = export_projection(args.run, args.target, args.source, args.out)
        print(f"projected {len(coords)} embeddings to {args.out}")
        return 0
    if args.cmd == "gradcheck":
        results = run_gradcheck()
        for name in LOSS_NAMES:
            print(f"{name:14s} max rel err {results[name]:.3e}")
        if not results["ok"]:
            print("FAIL: at least one loss exceeds 1e-4")
            return 4
        print("all losses pass at 1e-4")
        return 0
    if args.cmd == "plot":
        records = [r for r in read_metrics(args.metrics)
                   if r["stage"] == args.stage]
        if not records:
            raise ValueError(f"no records for stage {args.stage} in {args.metrics}")
        series = {}
        for key in args.keys.split(","):
            key = key.strip()
            pts = [(r["step"], r[key]) for r in records if key in r]
            if not pts:
                raise ValueError(f"metric {key!r} absent from stage {args.stage}")
            series[key] = ([p[0] for p in pts], [p[1] for p in pts])
        line_chart(series, args.out, title=f"stage {args.stage}",
                   xlabel="step")
        print(f"wrote {args.out}")
        return 0
    raise AssertionError(f"unhandled command {args.cmd}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (EpisodeFormatError, CheckpointFormatError, FileNotFoundError,
            NotADirectoryError, json.JSONDecodeError, KeyError,
            ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
