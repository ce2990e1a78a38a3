"""Console entry points: sidecar-init, sidecar-serve, sidecar-train.

``sidecar-init`` builds the three tiny checkpoints from corpus text.
``sidecar-serve`` exposes them over the wire protocol.
``sidecar-train`` is the command form of the trainer hook: the caller
appends ``--task … --train-file … --out-dir …`` to a configured base
command, and a nonzero exit with a stderr message signals failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .models import CLASSIFIER, SEQ2SEQ, ModelSize, build_classifier, build_seq2seq, save_checkpoint
from .records import corpus_texts_and_slots, read_jsonl
from .registry import ModelRegistry, ServeSettings
from .training import TrainJobSpec, train_job
from .vocab import build_tokenizer, iter_strings


def _size_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--d-model", type=int, default=64)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--feed-forward", type=int, default=128)
    parser.add_argument("--head-dim", type=int, default=32)
    parser.add_argument("--max-positions", type=int, default=512)
    parser.add_argument("--dropout", type=float, default=0.0)


def main_init(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sidecar-init",
        description="create tiny randomly initialized checkpoints from corpus text",
    )
    parser.add_argument(
        "--corpus",
        action="append",
        required=True,
        help="canonical turn-record file; repeatable",
    )
    parser.add_argument(
        "--text",
        action="append",
        default=[],
        help="extra line-delimited file whose strings join the vocabulary; repeatable",
    )
    parser.add_argument("--out", required=True, help="models root to create")
    parser.add_argument("--seed", type=int, default=0)
    _size_flags(parser)
    args = parser.parse_args(argv)

    texts, slots = corpus_texts_and_slots(args.corpus)
    for extra in args.text:
        for _, record in read_jsonl(extra):
            texts.extend(iter_strings(record))
    tokenizer = build_tokenizer(texts)
    size = ModelSize(
        d_model=args.d_model,
        layers=args.layers,
        heads=args.heads,
        feed_forward=args.feed_forward,
        head_dim=args.head_dim,
        max_positions=args.max_positions,
        dropout=args.dropout,
    )
    out = Path(args.out)
    save_checkpoint(
        out / "values",
        build_seq2seq(tokenizer, size, args.seed),
        tokenizer,
        {"architecture": SEQ2SEQ, "task": "values", "name": "values:base"},
    )
    save_checkpoint(
        out / "estimator",
        build_classifier(tokenizer, size, args.seed + 1),
        tokenizer,
        {"architecture": CLASSIFIER, "task": "estimator", "name": "estimator:base"},
    )
    save_checkpoint(
        out / "slot",
        build_seq2seq(tokenizer, size, args.seed + 2),
        tokenizer,
        {"architecture": SEQ2SEQ, "task": "slot", "name": "slot:base", "slots": slots},
    )
    print(
        f"initialized {out} (vocabulary {len(tokenizer)} words, "
        f"{len(slots)} slots, d_model {size.d_model})"
    )
    return 0


def main_serve(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sidecar-serve", description="serve checkpoints over the wire protocol"
    )
    parser.add_argument("--models", required=True, help="models root from sidecar-init")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    parser.add_argument("--slot-mode", choices=["constrained", "classify"], default="constrained")
    parser.add_argument("--max-source-len", type=int, default=256)
    parser.add_argument("--max-new-tokens", type=int, default=48)
    parser.add_argument("--train-epochs", type=int, default=20)
    parser.add_argument("--train-batch-size", type=int, default=16)
    parser.add_argument("--train-lr", type=float, default=None)
    parser.add_argument("--inverse-weight", type=float, default=0.1)
    parser.add_argument("--train-seed", type=int, default=0)
    args = parser.parse_args(argv)

    import uvicorn

    from .server import create_app

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    settings = ServeSettings(
        slot_mode=args.slot_mode,
        max_source_len=args.max_source_len,
        max_new_tokens=args.max_new_tokens,
        train_epochs=args.train_epochs,
        train_batch_size=args.train_batch_size,
        train_learning_rate=args.train_lr,
        inverse_weight=args.inverse_weight,
        train_seed=args.train_seed,
    )
    registry = ModelRegistry(args.models, settings)
    uvicorn.run(create_app(registry), host=args.host, port=args.port, log_level="warning")
    return 0


def main_train(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sidecar-train", description="fine-tune one checkpoint (trainer hook command)"
    )
    parser.add_argument("--base", required=True, help="models root holding base checkpoints")
    parser.add_argument("--task", required=True, choices=["values", "estimator", "slot"])
    parser.add_argument("--train-file", required=True)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--inverse-weight", type=float, default=0.1)
    parser.add_argument("--max-source-len", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    try:
        spec = TrainJobSpec(
            task=args.task,
            train_file=Path(args.train_file),
            out_dir=Path(args.out_dir),
            base_dir=Path(args.base) / args.task,
            learning_rate=args.learning_rate,
            inverse_weight=args.inverse_weight,
            epochs=args.epochs,
            batch_size=args.batch_size,
            max_source_len=args.max_source_len,
            seed=args.seed,
        )
        result = train_job(spec)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main_train())
