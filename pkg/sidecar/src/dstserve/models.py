"""Tiny transformer checkpoints: construction, saving, loading.

Checkpoints are ordinary ``save_pretrained`` directories (model +
tokenizer) plus a ``meta.json`` describing the architecture and, for the
slot model, the known slot catalog.  Everything is created locally from
a seed — no hub downloads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from transformers import (
    BertConfig,
    BertForSequenceClassification,
    PreTrainedTokenizerFast,
    T5Config,
    T5ForConditionalGeneration,
)
from transformers.utils import logging as hf_logging

from .vocab import load_tokenizer

hf_logging.set_verbosity_error()
hf_logging.disable_progress_bar()

TASKS = ("values", "estimator", "slot")
SEQ2SEQ, CLASSIFIER = "seq2seq", "classifier"

META_FILE = "meta.json"


@dataclass(frozen=True)
class ModelSize:
    d_model: int = 64
    layers: int = 2
    heads: int = 2
    feed_forward: int = 128
    head_dim: int = 32
    max_positions: int = 512
    # At this scale the models exist to memorize small fine-tuning sets,
    # so regularization is off by default.
    dropout: float = 0.0


@dataclass
class Checkpoint:
    model: torch.nn.Module
    tokenizer: PreTrainedTokenizerFast
    meta: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.meta.get("name", "uninitialized")


def build_seq2seq(
    tokenizer: PreTrainedTokenizerFast, size: ModelSize, seed: int
) -> T5ForConditionalGeneration:
    torch.manual_seed(seed)
    config = T5Config(
        vocab_size=len(tokenizer),
        d_model=size.d_model,
        d_ff=size.feed_forward,
        num_layers=size.layers,
        num_decoder_layers=size.layers,
        num_heads=size.heads,
        d_kv=size.head_dim,
        pad_token_id=tokenizer.pad_token_id,
        eos_token_id=tokenizer.eos_token_id,
        decoder_start_token_id=tokenizer.pad_token_id,
        dropout_rate=size.dropout,
    )
    return T5ForConditionalGeneration(config).eval()


def build_classifier(
    tokenizer: PreTrainedTokenizerFast, size: ModelSize, seed: int, num_labels: int = 3
) -> BertForSequenceClassification:
    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(tokenizer),
        hidden_size=size.d_model,
        num_hidden_layers=size.layers,
        num_attention_heads=size.heads,
        intermediate_size=size.feed_forward,
        max_position_embeddings=size.max_positions,
        pad_token_id=tokenizer.pad_token_id,
        num_labels=num_labels,
        hidden_dropout_prob=size.dropout,
        attention_probs_dropout_prob=size.dropout,
    )
    return BertForSequenceClassification(config).eval()


def save_checkpoint(
    path: str | Path,
    model: torch.nn.Module,
    tokenizer: PreTrainedTokenizerFast,
    meta: dict,
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(path)
    tokenizer.save_pretrained(path)
    (path / META_FILE).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    meta_path = path / META_FILE
    if not meta_path.is_file():
        raise FileNotFoundError(f"{path} is not a checkpoint directory (no {META_FILE})")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    architecture = meta.get("architecture")
    if architecture == SEQ2SEQ:
        model = T5ForConditionalGeneration.from_pretrained(str(path))
    elif architecture == CLASSIFIER:
        model = BertForSequenceClassification.from_pretrained(str(path))
    else:
        raise ValueError(f"{path}: unknown architecture {architecture!r}")
    model.eval()
    return Checkpoint(model=model, tokenizer=load_tokenizer(path), meta=meta)
