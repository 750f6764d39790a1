"""Command-line entry point: gen-data, train, eval, ablate, plot."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .config import ConfigError, RunConfig


def _add_gen_data(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("gen-data", help="generate a synthetic dataset bundle")
    p.add_argument("--out", required=True, help="output directory for the bundle")
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--per-class-labeled", type=int, default=1)
    p.add_argument("--per-class-unlabeled", type=int, default=24)
    p.add_argument("--per-class-test", type=int, default=12)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--sample-rate", type=int, default=8000)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--sprite-size", type=int, default=16)
    p.add_argument("--motion-speed", type=float, default=1.0)
    p.add_argument("--bg-noise", type=float, default=0.08)
    p.add_argument("--audio-noise", type=float, default=0.10)
    p.add_argument("--carrier-jitter", type=float, default=0.10)
    p.add_argument("--seed", type=int, default=0)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "dataset", None):
        overrides["dataset.path"] = args.dataset
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    return cfg.updated(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avssl")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)

    t = sub.add_parser("train", help="run semi-supervised training")
    t.add_argument("--config", help="JSON config file with dotted keys")
    t.add_argument("--dataset", help="dataset bundle directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    t.add_argument("--out-dir", default="runs/train", help="metrics/checkpoint directory")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a bundle's test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--segments", type=int, default=5)
    e.add_argument("--crops", type=int, default=3)
    e.add_argument("--crop-size", type=int, default=24)
    e.add_argument("--time-crop", type=int, default=60)

    a = sub.add_parser("ablate", help="sweep one ablation axis across seeds")
    a.add_argument("--axis", required=True, choices=["mask_type", "contrastive", "tau", "frames_per_map"])
    a.add_argument("--config", help="JSON config file with dotted keys")
    a.add_argument("--dataset")
    a.add_argument("--seed", type=int)
    a.add_argument("--seeds", default="0,1,2", help="comma-separated training seeds")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.add_argument("--out-dir", default="runs/ablate")

    pl = sub.add_parser("plot", help="emit curves from a metrics log")
    pl.add_argument("--metrics", required=True)
    pl.add_argument("--out-dir", default="runs/plots")
    pl.add_argument("--dataset", help="bundle for saliency overlays")
    pl.add_argument("--saliency-uid", help="sample uid to overlay (requires --dataset)")
    return parser


def _cmd_gen_data(args: argparse.Namespace) -> int:
    from .synthdata import GenConfig, generate_dataset, write_bundle

    kwargs = {f.name: getattr(args, f.name) for f in fields(GenConfig)}
    bundle = generate_dataset(GenConfig(**kwargs))
    write_bundle(bundle, args.out)
    print(
        f"wrote bundle to {args.out}: {len(bundle.labeled)} labeled, "
        f"{len(bundle.unlabeled)} unlabeled, {len(bundle.test)} test"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    from .train import Trainer

    cfg = _config_from_args(args)
    if not cfg["dataset.path"]:
        print("error: no dataset path (use --dataset or dataset.path)", file=sys.stderr)
        return 1
    if not Path(cfg["dataset.path"]).exists():
        print(f"error: dataset path does not exist: {cfg['dataset.path']}", file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = Trainer(cfg, metrics_path=out_dir / "metrics.jsonl")
    result = trainer.run()
    trainer.save(out_dir / "checkpoint")
    cfg.save(out_dir / "config.json")
    with open(out_dir / "result.json", "w") as fh:
        json.dump(result, fh, indent=2)
    print(f"final top-1 (teacher): {result['top1']:.4f} | student: {result['student_top1']:.4f}")
    print(f"metrics: {out_dir / 'metrics.jsonl'}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from .evaluate import EvalPolicy, evaluate
    from .features import LogMelParams, LogMelSpec, logmel
    from .models import load_checkpoint
    from .synthdata import read_bundle

    if not Path(args.dataset).exists():
        print(f"error: dataset path does not exist: {args.dataset}", file=sys.stderr)
        return 1
    model, _ = load_checkpoint(args.checkpoint)
    bundle = read_bundle(args.dataset)
    params = LogMelParams(n_mels=model.cfg.n_mels)

    def spec_fn(sample):
        full = logmel(sample.waveform.samples, sample.waveform.sample_rate, params)
        return LogMelSpec(values=full.values[:, : args.time_crop], floor=full.floor)

    policy = EvalPolicy(segments=args.segments, crops=args.crops, crop_size=args.crop_size)
    result = evaluate(model, bundle.test, policy, model.cfg.patch_size, spec_fn)
    print(f"views={result.views} top1={result.top1:.4f}")
    for cls, acc in enumerate(result.per_class):
        print(f"  class {cls}: {acc:.4f}")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    from .ablation import format_table, run_ablation

    cfg = _config_from_args(args)
    if not cfg["dataset.path"] or not Path(cfg["dataset.path"]).exists():
        print(f"error: dataset path does not exist: {cfg['dataset.path']!r}", file=sys.stderr)
        return 1
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    rows = run_ablation(args.axis, cfg, seeds, out_dir=args.out_dir)
    print(format_table(rows))
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    from .plots import plot_metrics, saliency_overlay
    from .synthdata import read_bundle

    written = plot_metrics(args.metrics, args.out_dir)
    if args.saliency_uid:
        if not args.dataset:
            print("error: --saliency-uid requires --dataset", file=sys.stderr)
            return 1
        bundle = read_bundle(args.dataset)
        by_uid = {s.uid: s for s in bundle.labeled + bundle.unlabeled + bundle.test}
        if args.saliency_uid not in by_uid:
            print(f"error: unknown sample uid {args.saliency_uid!r}", file=sys.stderr)
            return 1
        written.append(saliency_overlay(by_uid[args.saliency_uid], bundle, args.out_dir))
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "plot":
            return _cmd_plot(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
