"""Command-line entry: train a checkpoint, generate candidate sequences."""

from __future__ import annotations

import argparse
import json
import sys

from .generate import generate_candidates_csv
from .io import PairDataset
from .model import ModelConfig
from .train import TrainSchedule, load_checkpoint, train


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="medtrainer")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train (or fine-tune) on a pair dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--peak-lr", type=float, default=1e-4)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-e", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--queue-size", type=int, default=512)
    p.add_argument("--no-weight-tying", action="store_true")
    p.add_argument("--finetune", action="store_true")
    p.add_argument("--checkpoint", default=None, help="initial weights for fine-tuning")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("generate", help="emit candidate sequences for dataset images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pair-id", type=int, action="append", default=None)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--mode", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_generate)

    args = parser.parse_args(argv)
    return args.handler(args)


def _cmd_train(args) -> int:
    dataset = PairDataset(args.dataset)
    from .tokenizer import TokenizerConfig

    tok = TokenizerConfig.for_dataset(dataset.vocab, dataset.max_ots_length(),
                                      dataset.max_constants())
    model_cfg = ModelConfig(
        d_e=args.d_e, layers=args.layers, heads=args.heads, patch=args.patch,
        queue_size=args.queue_size, weight_tying=not args.no_weight_tying,
        n_scales=dataset.n_scales, resolution=dataset.resolution,
        d_s=tok.d_s, d_c=tok.d_c, vocab_size=dataset.vocab.extended_size,
    )
    schedule = TrainSchedule(
        peak_lr=args.peak_lr, epochs=args.epochs, batch_size=args.batch_size,
        noise_sigma=args.noise_sigma, seed=args.seed,
    )
    checkpoint, history = train(
        args.dataset, args.out, model_cfg=model_cfg, schedule=schedule,
        finetune=args.finetune, init_checkpoint=args.checkpoint,
    )
    print(json.dumps({"checkpoint": str(checkpoint), "final": history[-1]}))
    return 0


def _cmd_generate(args) -> int:
    model, tok_cfg, payload = load_checkpoint(args.checkpoint)
    dataset = PairDataset(args.dataset)
    pair_ids = args.pair_id if args.pair_id else [r.pair_id for r in dataset.rows]
    rows = generate_candidates_csv(
        model, tok_cfg, dataset.vocab, dataset, pair_ids, args.out,
        k=args.k, mode=args.mode, seed=args.seed,
    )
    print(json.dumps({"out": args.out, "rows": len(rows)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
