"""Command-line entry point.

Single results go to stdout as JSON; tabular results go to CSV files. Domain
errors print a structured JSON object on stderr and exit 1; usage errors exit
2. Every randomized subcommand honors --seed (falling back to the
OTSFORGE_SEED environment variable).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .errors import OtsForgeError
from .fitting import FitConfig, FitResult, fit, fit_batch
from .funcimg import RenderConfig, read_fimg, render, write_fimg
from .metrics import EvalPair, EvalSet, metric_report
from .search import CandidateSource, solve
from .tree import decode_bfs
from .treegen import GenConfig, generate_valid_tree, rng_stream
from .vocab import build_vocab, default_vocab, vocab_to_json

log = logging.getLogger("otsforge")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except OtsForgeError as exc:
        _emit_error(exc)
        return 1
    except (OSError, ValueError) as exc:
        _emit_error(exc)
        return 1


def _emit_error(exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("reason", "detail"):
        value = getattr(exc, attr, None)
        if value:
            payload[attr] = value
    print(json.dumps(payload), file=sys.stderr)


def _seed_default() -> int:
    env = os.environ.get("OTSFORGE_SEED")
    return int(env) if env else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otsforge",
                                     description="operation-tree symbolic regression toolkit")
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-dataset", help="build an OTS/function-image pair dataset")
    p.add_argument("--config", required=True, help="dataset YAML config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(handler=_cmd_gen_dataset)

    p = sub.add_parser("render", help="render an OTS + constants to a FIMG file")
    p.add_argument("--ots", required=True, help="comma-separated token ids")
    p.add_argument("--constants", default="", help="comma-separated constants")
    p.add_argument("--out", required=True)
    _add_render_flags(p)
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("fit", help="fit a tree's constants to a target image")
    p.add_argument("--ots", required=True)
    p.add_argument("--constants-init", default=None)
    p.add_argument("--target", required=True, help="FIMG path, or a pair id with --dataset")
    p.add_argument("--dataset", default=None)
    _add_render_flags(p)
    _add_fit_flags(p)
    p.set_defaults(handler=_cmd_fit)

    p = sub.add_parser("fit-bench", help="optimizer comparison on batches of self-targets")
    p.add_argument("--dataset", default=None, help="draw targets from a dataset")
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--sets", type=int, default=50)
    p.add_argument("--node-count", type=int, default=5,
                   help="tree size when self-generating targets (no --dataset)")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--out", required=True, help="output CSV of per-item results")
    _add_fit_flags(p)
    p.set_defaults(handler=_cmd_fit_bench)

    p = sub.add_parser("eval", help="score a predictions CSV against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True,
                   help="CSV with pair_id, ots and optional constants columns")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("solve", help="rank candidate trees against a target image")
    p.add_argument("--target", required=True, help="FIMG path, or a pair id with --dataset")
    p.add_argument("--dataset", default=None)
    p.add_argument("--source", default="enumerate", choices=["enumerate", "file", "model"])
    p.add_argument("--node-budget", type=int, default=5)
    p.add_argument("--candidates-file", default=None)
    p.add_argument("--candidate-limit", type=int, default=50_000)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--prescreen", type=int, default=0,
                   help="coarse-fit everything, full-fit only the best N")
    _add_render_flags(p)
    _add_fit_flags(p)
    p.set_defaults(handler=_cmd_solve)

    p = sub.add_parser("verify", help="integrity scan of a dataset directory")
    p.add_argument("--dataset", required=True)
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("vocab-dump", help="print the operator table as JSON")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_vocab_dump)
    return parser


def _add_render_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scales", default="-0.1:0.1,-1:1,-10:10",
                   help="comma list of lo:hi intervals")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--n-vars", type=int, default=1, choices=[1, 2])
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--optimizer", default="lbfgs", choices=["lbfgs", "first_order"])
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--stop-delta", type=float, default=1e-5)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--threads", type=int, default=1)
    if not any(a.dest == "seed" for a in p._actions):
        p.add_argument("--seed", type=int, default=None)


def _resolve_seed(args) -> int:
    seed = getattr(args, "seed", None)
    return _seed_default() if seed is None else seed


def _parse_scales(text: str):
    scales = []
    for part in text.split(","):
        lo, hi = part.split(":")
        scales.append((float(lo), float(hi)))
    return tuple(scales)


def _parse_tokens(text: str):
    text = text.strip()
    return tuple(int(t) for t in text.replace(",", " ").split()) if text else ()


def _parse_floats(text: str):
    text = text.strip()
    return tuple(float(t) for t in text.replace(",", " ").split()) if text else ()


def _render_config(args) -> RenderConfig:
    return RenderConfig(
        scales=_parse_scales(args.scales),
        resolution=args.resolution,
        n_vars=args.n_vars,
        noise_sigma=args.noise_sigma,
    )


def _fit_config(args) -> FitConfig:
    return FitConfig(
        optimizer=args.optimizer,
        learning_rate=args.lr,
        stop_delta=args.stop_delta,
        max_iters=args.max_iters,
        restarts=args.restarts,
        seed=_resolve_seed(args),
    )


def _load_target(args):
    target_path = Path(args.target)
    if target_path.exists():
        return read_fimg(target_path, _parse_scales(args.scales))
    if args.dataset:
        try:
            pair_id = int(args.target)
        except ValueError:
            raise OSError(f"target {args.target!r} is neither a file nor a pair id") from None
        return ds.load_dataset(args.dataset).image(pair_id)
    raise OSError(f"target file {args.target!r} not found (pass --dataset for pair ids)")


def _cmd_gen_dataset(args) -> int:
    cfg, _doc = ds.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, gen=replace(cfg.gen, seed=args.seed))
    manifest = ds.build_dataset(cfg, args.out)
    print(json.dumps({
        "path": str(manifest.path),
        "skeleton_records": manifest.n_skeleton_records,
        "pairs_target": manifest.pairs_target,
        "pairs_written": manifest.pairs_written,
        "rejections": manifest.rejections,
    }))
    return 0


def _cmd_render(args) -> int:
    vocab = default_vocab()
    cfg = _render_config(args)
    tree = decode_bfs(_parse_tokens(args.ots), _parse_floats(args.constants), vocab)
    rng = rng_stream(_resolve_seed(args)) if cfg.noise_sigma > 0 else None
    img = render(tree, cfg, rng=rng, vocab=vocab)
    write_fimg(args.out, img)
    print(json.dumps({
        "out": args.out,
        "n_scales": img.n_scales,
        "resolution": img.resolution,
        "finite_fraction": float(img.mask.mean()),
    }))
    return 0


def _fit_result_json(result: FitResult) -> dict:
    return {
        "constants": list(result.constants),
        "final_mse": result.final_mse if math.isfinite(result.final_mse) else None,
        "iterations": result.iterations,
        "converged": result.converged,
        "restart_index": result.restart_index,
    }


def _cmd_fit(args) -> int:
    target = _load_target(args)
    init = _parse_floats(args.constants_init) if args.constants_init else None
    result = fit(_parse_tokens(args.ots), target, _fit_config(args), init_constants=init)
    print(json.dumps(_fit_result_json(result)))
    return 0


def _cmd_fit_bench(args) -> int:
    seed = _resolve_seed(args)
    vocab = default_vocab()
    items = _bench_items(args, seed, vocab)
    base = _fit_config(args)
    rows = []
    medians = {}
    for optimizer in ("lbfgs", "first_order"):
        cfg = replace(base, optimizer=optimizer, seed=seed)
        losses = []
        for set_index in range(args.sets):
            batch = items[set_index * args.batch:(set_index + 1) * args.batch]
            outcomes, _summary = fit_batch(batch, replace(cfg, seed=seed + set_index),
                                           vocab, threads=args.threads)
            for item_index, outcome in enumerate(outcomes):
                if isinstance(outcome, FitResult):
                    rows.append({
                        "optimizer": optimizer,
                        "set": set_index,
                        "item": item_index,
                        "final_mse": f"{outcome.final_mse:.9g}",
                        "iterations": outcome.iterations,
                        "converged": outcome.converged,
                    })
                    losses.append(outcome.final_mse)
                else:
                    rows.append({
                        "optimizer": optimizer, "set": set_index, "item": item_index,
                        "final_mse": "", "iterations": "", "converged": "",
                    })
        medians[optimizer] = float(np.median(losses)) if losses else None
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), quoting=csv.QUOTE_ALL,
                                lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(json.dumps({"median_final_mse": medians, "csv": args.out,
                      "batch": args.batch, "sets": args.sets}))
    return 0


def _bench_items(args, seed: int, vocab):
    n_items = args.batch * args.sets
    items = []
    if args.dataset:
        reader = ds.load_dataset(args.dataset)
        ids = [p.pair_id for p in reader.pairs]
        picks = rng_stream(seed, 7).choice(len(ids), size=n_items, replace=True)
        for i in picks:
            rec = reader.pairs[int(i)]
            items.append((rec.ots, reader.image(rec.pair_id)))
        return items
    # self-generated targets at a fixed node count
    gen = GenConfig(node_range=(args.node_count, args.node_count), n_vars=1, seed=seed)
    render_cfg = RenderConfig(n_vars=1, resolution=args.resolution)
    from .tree import encode_bfs

    for i in range(n_items):
        tree = generate_valid_tree(gen, rng_stream(seed, 100 + i), render_cfg, vocab)
        ots, _ = encode_bfs(tree, vocab)
        items.append((ots, render(tree, render_cfg, vocab=vocab)))
    return items


def _cmd_eval(args) -> int:
    reader = ds.load_dataset(args.dataset)
    pairs = []
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rec = reader.record(int(row["pair_id"]))
            pred_consts = None
            if row.get("constants", "").strip():
                pred_consts = ds.parse_constants(row["constants"])
            pairs.append(EvalPair(
                prediction=ds.parse_ots(row["ots"]),
                target=rec.ots,
                target_constants=rec.constants,
                prediction_constants=pred_consts,
            ))
    vocab = build_vocab(reader.config.gen.vocab_overrides)
    print(json.dumps(metric_report(EvalSet(tuple(pairs)), vocab)))
    return 0


def _cmd_solve(args) -> int:
    target = _load_target(args)
    source = CandidateSource(
        kind=args.source,
        budget=args.candidate_limit,
        node_budget=args.node_budget,
        n_vars=args.n_vars,
        path=args.candidates_file,
    )
    solutions, diagnostics = solve(target, source, k=args.k, fit_cfg=_fit_config(args),
                                   prescreen=args.prescreen)
    print(json.dumps({
        "solutions": [
            {
                "rank": s.rank,
                "ots": list(s.ots),
                "constants": list(s.fit.constants),
                "formula": s.formula,
                "mse": s.fit.final_mse,
            }
            for s in solutions
        ],
        "diagnostics": asdict(diagnostics),
    }))
    return 0


def _cmd_verify(args) -> int:
    report = ds.verify_dataset(args.dataset)
    print(json.dumps({
        "ok": report.ok,
        "pairs_checked": report.pairs_checked,
        "violations": report.violations,
    }))
    return 0


def _cmd_vocab_dump(args) -> int:
    text = vocab_to_json(default_vocab())
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(json.dumps({"out": args.out}))
    else:
        print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
