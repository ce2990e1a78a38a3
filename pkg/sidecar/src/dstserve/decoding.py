"""Inference heads: greedy generation, verdict softmax, slot selection.

Generation is greedy throughout, so serving is deterministic.  The slot
model answers in one of two modes:

- ``constrained`` (default): greedy decoding masked to the prefix tree
  of the known slot catalog, so only catalog entries can be emitted;
- ``classify``: every catalog entry is scored by its exact sequence
  log-likelihood under the model and the best one is returned.

If a constrained decode runs out of budget before completing a catalog
entry, the answer falls back to the classify head — the response must
always be a known slot.
"""
from __future__ import annotations

import torch
from transformers import PreTrainedTokenizerFast

from .datasets import encode_cls_source, encode_source, encode_target, label_batch, pad_batch

SLOT_MODES = ("constrained", "classify")


def greedy_raw(
    model,
    tokenizer: PreTrainedTokenizerFast,
    text: str,
    max_source_len: int,
    max_new_tokens: int,
) -> str:
    ids = encode_source(tokenizer, text, max_source_len)
    batch, mask = pad_batch([ids], tokenizer.pad_token_id)
    with torch.inference_mode():
        out = model.generate(
            input_ids=batch,
            attention_mask=mask,
            max_new_tokens=max_new_tokens,
            do_sample=False,
            num_beams=1,
        )
    return tokenizer.decode(out[0], skip_special_tokens=True).strip()


def verdict_probabilities(
    model, tokenizer: PreTrainedTokenizerFast, text: str, max_source_len: int
) -> tuple[float, float, float]:
    ids = encode_cls_source(tokenizer, text, max_source_len)
    batch, mask = pad_batch([ids], tokenizer.pad_token_id)
    with torch.inference_mode():
        logits = model(input_ids=batch, attention_mask=mask).logits[0].double()
    probs = torch.softmax(logits, dim=-1)
    return float(probs[0]), float(probs[1]), float(probs[2])


class SlotCatalog:
    """The known slot names and their token-level prefix tree."""

    def __init__(self, slots: list[str], tokenizer: PreTrainedTokenizerFast):
        if not slots:
            raise ValueError("slot catalog must not be empty")
        self.slots = list(dict.fromkeys(slots))
        self.sequences = {
            slot: tuple(encode_target(tokenizer, slot, max_len=32)) for slot in self.slots
        }
        self._allowed: dict[tuple[int, ...], set[int]] = {}
        for sequence in self.sequences.values():
            for i in range(len(sequence)):
                self._allowed.setdefault(sequence[:i], set()).add(sequence[i])
        self._eos = tokenizer.eos_token_id
        self.max_tokens = max(len(s) for s in self.sequences.values())

    def allowed_next(self, prefix: tuple[int, ...]) -> list[int]:
        return sorted(self._allowed.get(prefix, {self._eos}))

    def match(self, token_ids: tuple[int, ...]) -> str | None:
        for slot, sequence in self.sequences.items():
            if sequence == token_ids:
                return slot
        return None


def classify_slot(
    model,
    tokenizer: PreTrainedTokenizerFast,
    catalog: SlotCatalog,
    text: str,
    max_source_len: int,
) -> str:
    """Pick the catalog entry with the highest sequence log-likelihood."""
    source = encode_source(tokenizer, text, max_source_len)
    candidates = catalog.slots
    ids, mask = pad_batch([source] * len(candidates), tokenizer.pad_token_id)
    labels = label_batch([list(catalog.sequences[slot]) for slot in candidates])
    with torch.inference_mode():
        logits = model(input_ids=ids, attention_mask=mask, labels=labels).logits
    log_probs = torch.log_softmax(logits.double(), dim=-1)
    label_mask = labels != -100
    gathered = torch.gather(
        log_probs, 2, labels.clamp(min=0).unsqueeze(-1)
    ).squeeze(-1)
    scores = (gathered * label_mask).sum(dim=1)
    return candidates[int(scores.argmax())]


def constrained_slot(
    model,
    tokenizer: PreTrainedTokenizerFast,
    catalog: SlotCatalog,
    text: str,
    max_source_len: int,
) -> str:
    source = encode_source(tokenizer, text, max_source_len)
    batch, mask = pad_batch([source], tokenizer.pad_token_id)

    def allowed(_batch_id: int, generated: torch.Tensor) -> list[int]:
        # generate() hands us decoder_start + emitted tokens.
        return catalog.allowed_next(tuple(generated[1:].tolist()))

    with torch.inference_mode():
        out = model.generate(
            input_ids=batch,
            attention_mask=mask,
            max_new_tokens=catalog.max_tokens,
            do_sample=False,
            num_beams=1,
            prefix_allowed_tokens_fn=allowed,
        )
    emitted = tuple(t for t in out[0][1:].tolist() if t != tokenizer.pad_token_id)
    slot = catalog.match(emitted)
    if slot is not None:
        return slot
    return classify_slot(model, tokenizer, catalog, text, max_source_len)
