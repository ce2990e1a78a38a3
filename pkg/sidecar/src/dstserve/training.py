"""Fine-tuning jobs for the three served tasks.

Every job starts from a base checkpoint, trains on a line-delimited
training file, and writes the result atomically: training happens in a
``<out_dir>.tmp`` staging directory that is renamed into place only on
success, so a failed job leaves no partial checkpoint behind.

Task specifics:

- ``values``: sequence-to-sequence cross-entropy on (input, target).
- ``estimator``: 3-class cross-entropy; the checkpoint kept is the one
  with the best F1 of the "correct" class on a validation slice (a
  sibling ``valid.jsonl`` next to the training file when present,
  otherwise a held-out tail of the training file).
- ``slot``: the forward loss (slot given value prompt) plus
  ``inverse_weight`` times the inverse loss (value given slot prompt)
  for rows that carry an inverse pair.  With weight 0, the reported
  total equals the forward loss exactly.

All jobs use AdamW with the learning rate decayed linearly to zero over
the run, so the final epochs settle instead of oscillating.
"""
from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import torch
from sklearn.metrics import f1_score

from .datasets import (
    batch_indices,
    encode_cls_source,
    encode_source,
    encode_target,
    label_batch,
    pad_batch,
)
from .models import CLASSIFIER, SEQ2SEQ, Checkpoint, load_checkpoint, save_checkpoint
from .records import estimator_rows, generator_rows, slot_rows

log = logging.getLogger(__name__)

GENERATOR_LR = 5e-5
ESTIMATOR_LR = 2e-5

VALID_SIBLING = "valid.jsonl"


class TrainingError(RuntimeError):
    """A training job could not run to completion."""


@dataclass(frozen=True)
class TrainJobSpec:
    task: str
    train_file: Path
    out_dir: Path
    base_dir: Path
    learning_rate: float | None = None
    inverse_weight: float = 0.1
    epochs: int = 20
    batch_size: int = 16
    max_source_len: int = 256
    max_target_len: int = 48
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in ("values", "estimator", "slot"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.inverse_weight < 0:
            raise ValueError("inverse_weight must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not Path(self.train_file).is_file():
            raise FileNotFoundError(f"training file not found: {self.train_file}")
        if not Path(self.base_dir).is_dir():
            raise FileNotFoundError(f"base checkpoint not found: {self.base_dir}")

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return ESTIMATOR_LR if self.task == "estimator" else GENERATOR_LR


@dataclass
class TrainResult:
    task: str
    out_dir: str
    n_examples: int
    epochs: int
    final_loss: float
    loss_components: dict[str, float] = field(default_factory=dict)
    epoch_losses: list[float] = field(default_factory=list)
    best_f1_correct: float | None = None
    epoch_f1_correct: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "out_dir": self.out_dir,
            "n_examples": self.n_examples,
            "epochs": self.epochs,
            "final_loss": self.final_loss,
            "loss_components": self.loss_components,
            "epoch_losses": self.epoch_losses,
            "best_f1_correct": self.best_f1_correct,
            "epoch_f1_correct": self.epoch_f1_correct,
        }


def _epoch_order(n: int, epoch: int, seed: int) -> list[int]:
    generator = torch.Generator().manual_seed(seed * 100_003 + epoch)
    return torch.randperm(n, generator=generator).tolist()


def _optimizer(model, spec: TrainJobSpec, n_rows: int):
    """AdamW plus a linear-to-zero learning-rate schedule."""
    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.effective_learning_rate)
    total_steps = spec.epochs * math.ceil(n_rows / spec.batch_size)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: max(0.0, 1.0 - step / total_steps)
    )
    return optimizer, scheduler


def _train_values(checkpoint: Checkpoint, spec: TrainJobSpec, result: TrainResult) -> None:
    rows = generator_rows(spec.train_file)
    if not rows:
        raise TrainingError(f"{spec.train_file}: no training rows")
    tokenizer = checkpoint.tokenizer
    sources = [encode_source(tokenizer, text, spec.max_source_len) for text, _ in rows]
    targets = [encode_target(tokenizer, target, spec.max_target_len) for _, target in rows]
    model = checkpoint.model
    optimizer, scheduler = _optimizer(model, spec, len(rows))
    model.train()
    for epoch in range(spec.epochs):
        total, batches = 0.0, 0
        for batch in batch_indices(len(rows), spec.batch_size, _epoch_order(len(rows), epoch, spec.seed)):
            ids, mask = pad_batch([sources[i] for i in batch], tokenizer.pad_token_id)
            labels = label_batch([targets[i] for i in batch])
            optimizer.zero_grad()
            loss = model(input_ids=ids, attention_mask=mask, labels=labels).loss
            loss.backward()
            optimizer.step()
            scheduler.step()
            total += float(loss.detach())
            batches += 1
        result.epoch_losses.append(total / batches)
    model.eval()
    result.n_examples = len(rows)
    result.final_loss = result.epoch_losses[-1]
    result.loss_components = {"cross_entropy": result.final_loss}


def _f1_correct(model, tokenizer, rows, max_source_len: int, batch_size: int) -> float:
    predictions: list[int] = []
    with torch.inference_mode():
        for batch in batch_indices(len(rows), batch_size):
            ids, mask = pad_batch(
                [encode_cls_source(tokenizer, rows[i][0], max_source_len) for i in batch],
                tokenizer.pad_token_id,
            )
            logits = model(input_ids=ids, attention_mask=mask).logits
            predictions.extend(logits.argmax(dim=-1).tolist())
    gold = [label for _, label in rows]
    return float(f1_score(gold, predictions, labels=[0], average=None, zero_division=0.0)[0])


def _validation_slice(spec: TrainJobSpec, rows: list) -> tuple[list, list]:
    """Training rows and the slice used to pick the best checkpoint."""
    sibling = Path(spec.train_file).parent / VALID_SIBLING
    if sibling.is_file() and sibling != Path(spec.train_file):
        return rows, estimator_rows(sibling)
    held_out = max(1, len(rows) // 10)
    if len(rows) <= held_out:
        return rows, rows
    return rows[:-held_out], rows[-held_out:]


def _train_estimator(checkpoint: Checkpoint, spec: TrainJobSpec, result: TrainResult) -> None:
    all_rows = estimator_rows(spec.train_file)
    if not all_rows:
        raise TrainingError(f"{spec.train_file}: no training rows")
    rows, valid = _validation_slice(spec, all_rows)
    tokenizer = checkpoint.tokenizer
    sources = [encode_cls_source(tokenizer, text, spec.max_source_len) for text, _ in rows]
    labels_all = [label for _, label in rows]
    model = checkpoint.model
    optimizer, scheduler = _optimizer(model, spec, len(rows))
    best_f1 = -1.0
    best_state: dict | None = None
    for epoch in range(spec.epochs):
        model.train()
        total, batches = 0.0, 0
        for batch in batch_indices(len(rows), spec.batch_size, _epoch_order(len(rows), epoch, spec.seed)):
            ids, mask = pad_batch([sources[i] for i in batch], tokenizer.pad_token_id)
            labels = torch.tensor([labels_all[i] for i in batch], dtype=torch.long)
            optimizer.zero_grad()
            loss = model(input_ids=ids, attention_mask=mask, labels=labels).loss
            loss.backward()
            optimizer.step()
            scheduler.step()
            total += float(loss.detach())
            batches += 1
        result.epoch_losses.append(total / batches)
        model.eval()
        f1 = _f1_correct(model, tokenizer, valid, spec.max_source_len, spec.batch_size)
        result.epoch_f1_correct.append(f1)
        if f1 >= best_f1:
            best_f1 = f1
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    model.eval()
    result.n_examples = len(rows)
    result.final_loss = result.epoch_losses[-1]
    result.best_f1_correct = best_f1
    result.loss_components = {"cross_entropy": result.final_loss}


def _train_slot(checkpoint: Checkpoint, spec: TrainJobSpec, result: TrainResult) -> None:
    rows = slot_rows(spec.train_file)
    if not rows:
        raise TrainingError(f"{spec.train_file}: no training rows")
    tokenizer = checkpoint.tokenizer
    forward_sources = [encode_source(tokenizer, r.input, spec.max_source_len) for r in rows]
    forward_targets = [encode_target(tokenizer, r.target, spec.max_target_len) for r in rows]
    inverse_by_row = [
        (
            encode_source(tokenizer, r.inverse_input, spec.max_source_len),
            encode_target(tokenizer, r.inverse_target, spec.max_target_len),
        )
        if r.inverse_input is not None
        else None
        for r in rows
    ]
    model = checkpoint.model
    optimizer, scheduler = _optimizer(model, spec, len(rows))
    model.train()
    forward_value = inverse_value = 0.0
    for epoch in range(spec.epochs):
        totals = {"forward": 0.0, "inverse": 0.0, "total": 0.0}
        batches = 0
        for batch in batch_indices(len(rows), spec.batch_size, _epoch_order(len(rows), epoch, spec.seed)):
            ids, mask = pad_batch([forward_sources[i] for i in batch], tokenizer.pad_token_id)
            labels = label_batch([forward_targets[i] for i in batch])
            optimizer.zero_grad()
            forward_loss = model(input_ids=ids, attention_mask=mask, labels=labels).loss
            inverse_pairs = [inverse_by_row[i] for i in batch if inverse_by_row[i] is not None]
            if inverse_pairs:
                inverse_ids, inverse_mask = pad_batch(
                    [pair[0] for pair in inverse_pairs], tokenizer.pad_token_id
                )
                inverse_labels = label_batch([pair[1] for pair in inverse_pairs])
                inverse_loss = model(
                    input_ids=inverse_ids, attention_mask=inverse_mask, labels=inverse_labels
                ).loss
            else:
                inverse_loss = torch.zeros((), dtype=forward_loss.dtype)
            loss = forward_loss + spec.inverse_weight * inverse_loss
            loss.backward()
            optimizer.step()
            scheduler.step()
            totals["forward"] += float(forward_loss.detach())
            totals["inverse"] += float(inverse_loss.detach())
            totals["total"] += float(loss.detach())
            batches += 1
        forward_value = totals["forward"] / batches
        inverse_value = totals["inverse"] / batches
        result.epoch_losses.append(totals["total"] / batches)
    model.eval()
    result.n_examples = len(rows)
    result.final_loss = result.epoch_losses[-1]
    result.loss_components = {
        "forward": forward_value,
        "inverse": inverse_value,
        "inverse_weight": spec.inverse_weight,
        "total": result.final_loss,
    }


_TRAINERS = {
    "values": _train_values,
    "estimator": _train_estimator,
    "slot": _train_slot,
}

_ARCHITECTURES = {"values": SEQ2SEQ, "estimator": CLASSIFIER, "slot": SEQ2SEQ}


def train_job(spec: TrainJobSpec) -> TrainResult:
    """Run one fine-tuning job and write the checkpoint atomically."""
    checkpoint = load_checkpoint(spec.base_dir)
    expected = _ARCHITECTURES[spec.task]
    if checkpoint.meta.get("architecture") != expected:
        raise TrainingError(
            f"{spec.base_dir}: task {spec.task!r} needs a {expected} checkpoint, "
            f"got {checkpoint.meta.get('architecture')!r}"
        )
    torch.manual_seed(spec.seed)
    result = TrainResult(
        task=spec.task,
        out_dir=str(spec.out_dir),
        n_examples=0,
        epochs=spec.epochs,
        final_loss=float("nan"),
    )
    out_dir = Path(spec.out_dir)
    staging = out_dir.with_name(out_dir.name + ".tmp")
    if staging.exists():
        shutil.rmtree(staging)
    try:
        _TRAINERS[spec.task](checkpoint, spec, result)
        meta = dict(checkpoint.meta)
        meta.update(
            name=f"{spec.task}:{out_dir.name}",
            trained_on=str(spec.train_file),
            n_examples=result.n_examples,
        )
        if spec.task == "slot":
            slots = set(meta.get("slots") or [])
            slots.update(row.target for row in slot_rows(spec.train_file))
            meta["slots"] = sorted(slots)
        save_checkpoint(staging, checkpoint.model, checkpoint.tokenizer, meta)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    staging.rename(out_dir)
    log.info(
        "trained %s on %d examples for %d epochs: final loss %.4f",
        spec.task,
        result.n_examples,
        spec.epochs,
        result.final_loss,
    )
    return result
