"""Command-line surface: prepare | train | eval | explain | synth | gradcheck.

Settings come from a flat JSON config file; command-line flags override file
values, which override built-in defaults. Exit codes: 0 success, 1 input
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from . import corpus, evaluation, textenc, train
from .model import ModelConfig, forward_window, init_params
from .numerics import NumericalError, Rng

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    # paths
    news: str | None = None
    prices: str | None = None
    embeddings: str | None = None
    entity_graph: str | None = None
    stopwords: str | None = None
    output_dir: str = "out"
    # model
    d: int | None = None  # defaults to the embedding file's dimension
    d_day: int = 5
    d_h: int = 64
    dropout_p: float = 0.5
    literal_input_mean: bool = False
    literal_output_attention: bool = False
    # training
    batch_size: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True
    threads: int = 1
    # data handling
    label_mode: str = "close_to_close"
    train_frac: float = 0.804
    val_frac: float = 0.098
    max_tokens: int = 100
    top_k: int = 3
    # synth
    synth_days: int = 240
    synth_signal_strength: float = 1.0
    synth_dim: int = 16


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def load_run_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    for key, value in doc.items():
        setattr(cfg, key, value)
    return cfg


class _Parser(argparse.ArgumentParser):
    """argparse with exit code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"{self.prog}: error: {message}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int, help="master random seed")
    common.add_argument("--threads", type=int,
                        help="worker threads for batch gradients (1 = reference)")

    parser = _Parser(prog="newsgru",
                     description="news-driven stock movement classifier")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("prepare", parents=[common],
                       help="ingest, filter, window, split; write a manifest")
    p.add_argument("--label-mode", choices=corpus.LABEL_MODES,
                   help="price reference for labels")

    p = sub.add_parser("train", parents=[common],
                       help="train and write checkpoint plus metrics CSV")
    p.add_argument("--checkpoint", help="checkpoint output path "
                                        "(default <output_dir>/checkpoint.json)")
    p.add_argument("--literal-input-mean", action="store_true", default=None,
                   help="keep the 1/n factor on the day news vector")
    p.add_argument("--literal-output-attention", action="store_true", default=None,
                   help="use raw day scores instead of softmax weights")

    p = sub.add_parser("eval", parents=[common],
                       help="print accuracy and MCC for a split")
    p.add_argument("--checkpoint", help="checkpoint to evaluate "
                                        "(default <output_dir>/checkpoint.json)")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")

    p = sub.add_parser("explain", parents=[common],
                       help="attention report for one prediction date")
    p.add_argument("--checkpoint", help="trained checkpoint "
                                        "(default <output_dir>/checkpoint.json)")
    p.add_argument("--date", required=True, help="prediction date YYYY-MM-DD")
    p.add_argument("--top-k", type=int, help="headlines to list in the top block")
    p.add_argument("--format", choices=["json", "table"], default="table")

    sub.add_parser("synth", parents=[common],
                   help="write a synthetic planted-signal corpus")

    sub.add_parser("gradcheck", parents=[common],
                   help="finite-difference check of all gradients")

    return parser


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    mapping = {
        "seed": "seed",
        "threads": "threads",
        "label_mode": "label_mode",
        "top_k": "top_k",
        "literal_input_mean": "literal_input_mean",
        "literal_output_attention": "literal_output_attention",
    }
    for arg_name, cfg_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(cfg, cfg_name, value)
    return cfg


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ValueError(f"config is missing required paths: {', '.join(missing)}")


def _stopword_set(cfg: RunConfig) -> set[str]:
    if cfg.stopwords:
        return textenc.load_stopwords(cfg.stopwords)
    return textenc.default_stopwords()


def _build_dataset(cfg: RunConfig, with_embeddings: bool):
    """Shared pipeline: load, filter, bucket, (embed), window, split."""
    _require(cfg, "news", "prices", "entity_graph")
    graph = corpus.load_entity_graph(cfg.entity_graph)
    news = corpus.load_news(cfg.news)
    prices = corpus.load_prices(cfg.prices)
    kept = corpus.filter_relevant(news, graph)
    buckets = corpus.bucket_by_day(kept, prices)
    dim = None
    if with_embeddings:
        _require(cfg, "embeddings")
        table = textenc.load_embeddings(cfg.embeddings)
        if cfg.d is not None and cfg.d != table.dim:
            raise ValueError(
                f"config d={cfg.d} but embedding file has dimension {table.dim}"
            )
        dim = table.dim
        corpus.embed_buckets(buckets, table, _stopword_set(cfg), cfg.max_tokens)
    windows = corpus.make_windows(buckets, prices, cfg.label_mode)
    splits = corpus.split_chronological(windows, cfg.train_frac, cfg.val_frac)
    stats = {
        "news_total": len(news),
        "news_kept": len(kept),
        "trading_days": len(prices),
        "windows": len(windows),
    }
    return splits, stats, dim


def _model_config(cfg: RunConfig, dim: int) -> ModelConfig:
    mc = ModelConfig(
        d=dim,
        d_day=cfg.d_day,
        d_h=cfg.d_h,
        dropout_p=cfg.dropout_p,
        literal_input_mean=cfg.literal_input_mean,
        literal_output_attention=cfg.literal_output_attention,
    )
    mc.validate()
    return mc


def _train_config(cfg: RunConfig) -> train.TrainConfig:
    tc = train.TrainConfig(
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps_adam=cfg.eps_adam,
        epochs=cfg.epochs,
        seed=cfg.seed,
        shuffle=cfg.shuffle,
        threads=cfg.threads,
    )
    tc.validate()
    return tc


def cmd_prepare(cfg: RunConfig) -> int:
    splits, stats, _ = _build_dataset(cfg, with_embeddings=False)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "windows.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for split_name in ("train", "val", "test"):
            for window in getattr(splits, split_name):
                fh.write(json.dumps({
                    "split": split_name,
                    "prediction_date": window.prediction_date.isoformat(),
                    "label": window.label,
                    "days": [
                        {
                            "date": b.trading_date.isoformat(),
                            "news_lines": [item.line_no for item in b.items],
                        }
                        for b in window.days
                    ],
                }) + "\n")
    per_day = [len(b.items) for w in splits.train + splits.val + splits.test
               for b in w.days]
    if stats["news_kept"] == 0:
        log.warning("no headlines survived the relevance filter")
    print(f"news: {stats['news_kept']} kept of {stats['news_total']}")
    print(f"trading days: {stats['trading_days']}, windows: {stats['windows']}")
    print(f"splits: train={len(splits.train)} val={len(splits.val)} "
          f"test={len(splits.test)}")
    if per_day:
        empty = sum(1 for n in per_day if n == 0)
        print(f"headlines per window day: mean={np.mean(per_day):.2f} "
              f"max={max(per_day)} empty_days={empty}")
    print(f"manifest: {manifest}")
    return 0


def cmd_train(cfg: RunConfig, checkpoint_path: str | None) -> int:
    splits, _, dim = _build_dataset(cfg, with_embeddings=True)
    mc = _model_config(cfg, dim)
    tc = _train_config(cfg)
    params = init_params(mc, Rng(tc.seed).derive(train.INIT_STREAM))
    checkpoint, metrics = train.train_loop(splits, params, mc, tc)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(checkpoint_path) if checkpoint_path else out_dir / "checkpoint.json"
    train.save_checkpoint(ckpt_path, checkpoint)
    metrics_path = out_dir / "metrics.csv"
    train.write_metrics_csv(metrics_path, metrics)
    last = metrics[-1]
    print(f"trained {tc.epochs} epochs; best val_acc={checkpoint.metadata['best_val_acc']}"
          f" at epoch {checkpoint.metadata['epoch']}")
    print(f"final: train_loss={last['train_loss']:.4f} train_acc={last['train_acc']:.3f}"
          f" val_acc={last['val_acc']:.3f} val_mcc={last['val_mcc']:.3f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    return 0


def _load_checkpoint_for(cfg: RunConfig, checkpoint_path: str | None) -> train.Checkpoint:
    path = Path(checkpoint_path) if checkpoint_path else Path(cfg.output_dir) / "checkpoint.json"
    return train.load_checkpoint(path)


def cmd_eval(cfg: RunConfig, checkpoint_path: str | None, split: str) -> int:
    # the checkpoint's embedded config (dims, attention modes) drives the model
    ckpt = _load_checkpoint_for(cfg, checkpoint_path)
    splits, _, dim = _build_dataset(cfg, with_embeddings=True)
    if dim != ckpt.config.d:
        raise ValueError(
            f"embedding dimension {dim} does not match checkpoint d={ckpt.config.d}"
        )
    windows = getattr(splits, split)
    result = evaluation.evaluate_windows(windows, ckpt.params, ckpt.config)
    cm = result.cm
    print(f"split={split} n={cm.total} accuracy={result.accuracy:.4f} "
          f"mcc={result.mcc:.4f} (tp={cm.tp} tn={cm.tn} fp={cm.fp} fn={cm.fn})")
    return 0


def cmd_explain(cfg: RunConfig, checkpoint_path: str | None, date_str: str,
                top_k: int, fmt: str) -> int:
    try:
        target = date.fromisoformat(date_str)
    except ValueError as exc:
        raise ValueError(f"--date: {exc}") from None
    ckpt = _load_checkpoint_for(cfg, checkpoint_path)
    splits, _, dim = _build_dataset(cfg, with_embeddings=True)
    if dim != ckpt.config.d:
        raise ValueError(
            f"embedding dimension {dim} does not match checkpoint d={ckpt.config.d}"
        )
    window = next(
        (w for w in splits.train + splits.val + splits.test
         if w.prediction_date == target),
        None,
    )
    if window is None:
        raise ValueError(
            f"no window predicts {date_str}; the date needs a full 7-day history "
            f"of trading days before it"
        )
    _, trace = forward_window(window, ckpt.params, ckpt.config, training=False)
    report = evaluation.explain(window, trace, top_k)
    sys.stdout.write(evaluation.render_report(report, fmt))
    if fmt == "table":
        sys.stdout.flush()
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    rng = Rng(cfg.seed)
    result = corpus.synth_generate(
        rng, cfg.synth_days, cfg.synth_signal_strength,
        cfg.output_dir, dim=cfg.synth_dim,
    )
    print(f"news: {result.news_path}")
    print(f"prices: {result.prices_path}")
    print(f"entity graph: {result.graph_path}")
    print(f"embeddings: {result.embeddings_path} (dim {result.dim})")
    print(f"ground truth: {result.truth_path}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    result = train.gradient_check(seeds=range(cfg.seed, cfg.seed + 5))
    by_mode: dict[tuple, float] = {}
    for row in result.details:
        key = (row["literal_input_mean"], row["literal_output_attention"])
        by_mode[key] = max(by_mode.get(key, 0.0), row["max_rel_err"])
    for (lin, lout), err in sorted(by_mode.items()):
        print(f"literal_input_mean={lin} literal_output_attention={lout}: "
              f"max_rel_err={err:.3e}")
    print(f"overall max_rel_err={result.max_rel_err:.3e} "
          f"(worst tensor {result.worst_tensor})")
    if not result.ok:
        print("gradient check FAILED (tolerance 1e-4)", file=sys.stderr)
        return 2
    print("gradient check passed (tolerance 1e-4)")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = _apply_overrides(load_run_config(args.config), args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.split)
        if args.command == "explain":
            return cmd_explain(cfg, args.checkpoint, args.date,
                               cfg.top_k, args.format)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        raise ValueError(f"unknown command {args.command!r}")
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
