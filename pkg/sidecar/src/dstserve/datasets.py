"""Text-to-tensor encoding shared by serving and training.

Source texts longer than the budget are truncated from the front —
prompts put dialogue history before the current turn, so dropping from
the front discards the oldest context first, matching the client's own
character-budget rule.
"""
from __future__ import annotations

from typing import Sequence

import torch
from transformers import PreTrainedTokenizerFast


def encode_source(
    tokenizer: PreTrainedTokenizerFast, text: str, max_len: int
) -> list[int]:
    ids = tokenizer(text, add_special_tokens=False)["input_ids"]
    # The encoder cannot run on zero tokens, so blank text becomes [EOS].
    return ids[-max_len:] or [tokenizer.eos_token_id]


def encode_cls_source(
    tokenizer: PreTrainedTokenizerFast, text: str, max_len: int
) -> list[int]:
    """Front-truncated ids with the classifier's [CLS] pinned at position 0."""
    ids = tokenizer(text, add_special_tokens=False)["input_ids"]
    return [tokenizer.cls_token_id] + ids[-(max_len - 1) :]


def encode_target(
    tokenizer: PreTrainedTokenizerFast, text: str, max_len: int
) -> list[int]:
    ids = tokenizer(text, add_special_tokens=False)["input_ids"]
    return ids[: max_len - 1] + [tokenizer.eos_token_id]


def pad_batch(
    sequences: Sequence[Sequence[int]], pad_id: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to a rectangle; returns (input_ids, attention_mask)."""
    width = max(len(s) for s in sequences)
    ids = torch.full((len(sequences), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(sequences), width), dtype=torch.long)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[row, : len(seq)] = 1
    return ids, mask


def label_batch(sequences: Sequence[Sequence[int]]) -> torch.Tensor:
    """Right-pad target ids with -100 so padding is ignored by the loss."""
    width = max(len(s) for s in sequences)
    labels = torch.full((len(sequences), width), -100, dtype=torch.long)
    for row, seq in enumerate(sequences):
        labels[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
    return labels


def batch_indices(n: int, batch_size: int, order: Sequence[int] | None = None):
    """Yield index lists covering range(n) in batches."""
    order = list(order) if order is not None else list(range(n))
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
