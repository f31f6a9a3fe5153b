"""Command-line entry point.

Subcommands: prepare-data, pretrain, probe, diagnose, count-params.
Every run prints the resolved config hash; failures exit nonzero with a
single machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audio import load_corpus
from .config import RunConfig, config_hash, load_config
from .diagnostics import featurizer_target_report, format_report, write_report
from .encoder import count_params
from .features import ConvFeaturizer, LogMelFeaturizer
from .synthetic import make_labeled_clips, write_corpus
from .training import load_checkpoint, pretrain


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavrq",
        description="masked speech pretraining with a frozen random-projection quantizer")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run config")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (dotted path)")

    p = sub.add_parser("prepare-data", parents=[common],
                       help="generate the synthetic fixture corpus + manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--clips", type=int, default=64)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", parents=[common], help="run the pretraining loop")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int, help="stop after this many total steps")

    p = sub.add_parser("probe", parents=[common],
                       help="linear probe on a frozen checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", default="tones4", choices=["tones4"])
    p.add_argument("--clips", type=int, default=96)

    p = sub.add_parser("diagnose", parents=[common],
                       help="codebook health and featurizer comparison")
    p.add_argument("--checkpoint", help="use this checkpoint's featurizer weights")
    p.add_argument("--corpus", help="manifest of audio files (defaults to config path)")
    p.add_argument("--out", required=True, help="report path (text; .json written too)")

    p = sub.add_parser("count-params", parents=[common],
                       help="exact parameter accounting for the configured model")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config, args.overrides)
    print(f"config {config_hash(cfg)}")
    return cfg


def _cmd_prepare_data(args) -> int:
    # config not required; flags fully describe the fixture corpus
    manifest = write_corpus(args.out, args.clips, args.seed, args.seconds)
    print(f"wrote {args.clips} clips; manifest at {manifest}")
    return 0


def _cmd_pretrain(args) -> int:
    if not args.config:
        print("usage: wavrq pretrain --config <path> [--resume <ckpt>]", file=sys.stderr)
        print("error: pretrain requires --config", file=sys.stderr)
        return 2
    cfg = _load(args)
    corpus = load_corpus(cfg.paths.corpus_manifest)
    task, state = pretrain(cfg, corpus, cfg.paths.out_dir, resume=args.resume,
                           total_steps=args.steps)
    print(f"finished at step {state.step}; checkpoints in {cfg.paths.out_dir}")
    return 0


def _cmd_probe(args) -> int:
    from .probe import probe_train

    task, _state = load_checkpoint(args.checkpoint)
    print(f"config {config_hash(task.cfg)}")
    waves, labels = make_labeled_clips(args.clips, task.cfg.probe.seed, seconds=1.0)
    result = probe_train(task, waves, labels)
    print(f"probe train_acc {result.train_acc:.4f} test_acc {result.test_acc:.4f} "
          f"chance {1.0 / result.num_classes:.4f}")
    record = {
        "event": "probe",
        "task": args.task,
        "train_acc": result.train_acc,
        "test_acc": result.test_acc,
        "layer_weights": result.layer_weights.tolist(),
        "config": config_hash(task.cfg),
    }
    out_dir = Path(task.cfg.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.jsonl", "a") as log:
        log.write(json.dumps(record) + "\n")
    return 0


def _cmd_diagnose(args) -> int:
    if args.checkpoint:
        task, _state = load_checkpoint(args.checkpoint)
        cfg = task.cfg
        conv = task.featurizer if cfg.featurizer == "conv" else None
    else:
        cfg = load_config(args.config, args.overrides)
        conv = None
    print(f"config {config_hash(cfg)}")
    if conv is None:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.train.seed, 0)))
        dtype = np.float32 if cfg.dtype == "float32" else np.float64
        conv = ConvFeaturizer(cfg.conv, rng, dtype)
    logmel = LogMelFeaturizer(cfg.logmel)
    manifest = args.corpus or cfg.paths.corpus_manifest
    corpus = load_corpus(manifest)
    from .audio import make_batches

    n = min(len(corpus), max(2, cfg.train.batch_size))
    batch = make_batches(corpus, n, seed=cfg.quantizer.seed,
                         target_len=cfg.audio.target_len)[0]
    report = featurizer_target_report(
        batch, conv, logmel, cfg.quantizer.seed, cfg.quantizer.code_dim,
        cfg.quantizer.vocab, cfg.quantizer.normalize, cfg.quantizer.standardize)
    report["config"] = config_hash(cfg)
    write_report(args.out, report)
    print(format_report(report))
    print(f"report written to {args.out}")
    return 0


def _cmd_count_params(args) -> int:
    cfg = _load(args)
    conv_layers = cfg.conv.layers if cfg.featurizer == "conv" else None
    result = count_params(cfg.encoder, conv_layers,
                          (cfg.feature_dim(), cfg.quantizer.code_dim, cfg.quantizer.vocab))
    for name, n in result["by_module"].items():
        print(f"  {name:<16} {n:>12,}")
    print(f"trainable        {result['trainable']:>12,}")
    print(f"non-trainable    {result['non_trainable']:>12,} "
          f"(code_dim={cfg.quantizer.code_dim} reading)")
    print(f"non-trainable    {result['non_trainable_hidden_dim_reading']:>12,} "
          f"(hidden-sized-code reading, d={cfg.encoder.hidden})")
    ref = 6_400_000
    lo = result["non_trainable"] / ref - 1.0
    hi = result["non_trainable_hidden_dim_reading"] / ref - 1.0
    print(f"note: published reference figure is 6.4M non-trainable; the configured "
          f"reading is {lo:+.1%} from it, the hidden-sized reading {hi:+.1%}")
    print(f"total            {result['total']:>12,}")
    print(f"estimated size   {result['size_mb']:>12.3f} MB (4 bytes/scalar)")
    return 0


_COMMANDS = {
    "prepare-data": _cmd_prepare_data,
    "pretrain": _cmd_pretrain,
    "probe": _cmd_probe,
    "diagnose": _cmd_diagnose,
    "count-params": _cmd_count_params,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
