"""Synthesize three-way labeled training data for the value estimator.

Each annotated turn yields one correct example (its gold value set, even
when empty), a few incomplete ones (gold with k values removed, k drawn
uniformly from [1, n]; removing everything still counts as incomplete),
and incorrect ones (gold plus one value the dialogue mentioned earlier
but that does not belong to this turn).  When no earlier value is
available the sampler falls back to a corpus-wide pool, or skips the
example if that is disabled or empty.

Randomness is keyed per turn, so the dataset for a given seed does not
depend on traversal order.  A fixed fraction of source turns is held out
as a validation slice, disjoint from the training slice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .backends import (
    LABEL_CORRECT,
    LABEL_INCOMPLETE,
    LABEL_INCORRECT,
    STREAM_SAMPLER,
    TurnRef,
    keyed_rng,
)
from .corpus import Dialogue
from .prompting import PromptConfig, build_estimator_input
from .records import estimator_record, write_jsonl
from .state import dedupe_values

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    n_correct: int = 1
    n_incomplete: int = 2
    n_incorrect: int = 1
    global_pool_fallback: bool = True
    valid_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_correct, self.n_incomplete, self.n_incorrect) < 0:
            raise ValueError("per-turn example counts must be >= 0")
        if not 0.0 <= self.valid_fraction < 1.0:
            raise ValueError("valid_fraction must be in [0, 1)")


@dataclass(frozen=True)
class EstimatorExample:
    ref: TurnRef
    candidate: tuple[str, ...]
    label: int


def synth_incomplete(
    gold: Sequence[str], rng: np.random.Generator
) -> tuple[str, ...]:
    """Remove k values from gold, k uniform in [1, n], preserving order."""
    if not gold:
        raise ValueError("cannot synthesize an incomplete example from empty gold")
    k = int(rng.integers(1, len(gold) + 1))
    removed = set(rng.choice(len(gold), size=k, replace=False).tolist())
    return tuple(v for i, v in enumerate(gold) if i not in removed)


def synth_incorrect(
    gold: Sequence[str],
    prior_values: Sequence[str],
    global_pool: Sequence[str],
    rng: np.random.Generator,
    config: SamplerConfig,
) -> tuple[str, ...] | None:
    """Append one spurious value to gold, or None when there is none.

    The spurious value comes from values mentioned earlier in the same
    dialogue, minus gold; with the fallback enabled, an empty local pool
    defers to the corpus-wide pool.
    """
    gold_set = set(gold)
    pool = [v for v in prior_values if v not in gold_set]
    if not pool and config.global_pool_fallback:
        pool = [v for v in global_pool if v not in gold_set]
    if not pool:
        return None
    spurious = pool[int(rng.integers(len(pool)))]
    return tuple(gold) + (spurious,)


def _turn_examples(
    ref: TurnRef,
    gold: tuple[str, ...],
    prior_values: tuple[str, ...],
    global_pool: Sequence[str],
    config: SamplerConfig,
) -> list[EstimatorExample]:
    rng = keyed_rng(config.seed, STREAM_SAMPLER, ref)
    examples = [
        EstimatorExample(ref, gold, LABEL_CORRECT) for _ in range(config.n_correct)
    ]
    if gold:
        for _ in range(config.n_incomplete):
            examples.append(
                EstimatorExample(ref, synth_incomplete(gold, rng), LABEL_INCOMPLETE)
            )
    skipped = 0
    for _ in range(config.n_incorrect):
        candidate = synth_incorrect(gold, prior_values, global_pool, rng, config)
        if candidate is None:
            skipped += 1
            continue
        examples.append(EstimatorExample(ref, candidate, LABEL_INCORRECT))
    if skipped:
        log.debug(
            "%s turn %d: skipped %d incorrect example(s), no spurious value pool",
            ref.dialogue_id,
            ref.turn_index,
            skipped,
        )
    return examples


def synth_dataset(
    dialogues: Iterable[Dialogue], config: SamplerConfig
) -> tuple[list[EstimatorExample], list[EstimatorExample]]:
    """Build (train, valid) estimator examples from labeled dialogues.

    The validation slice holds a fixed ``valid_fraction`` of source
    turns, chosen by seeded permutation, and shares no turn with the
    training slice.
    """
    turns: list[tuple[TurnRef, tuple[str, ...], tuple[str, ...]]] = []
    global_pool: list[str] = []
    for dialogue in dialogues:
        prior: list[str] = []
        for turn in dialogue.turns:
            if turn.gold_turn_label is None:
                raise ValueError(
                    f"dialogue {dialogue.dialogue_id} turn {turn.turn_index}: "
                    "sampler requires derived turn labels"
                )
            gold = tuple(dedupe_values(v for _, v in turn.gold_turn_label))
            turns.append(
                (TurnRef(dialogue.dialogue_id, turn.turn_index), gold, tuple(prior))
            )
            global_pool.extend(gold)
            prior = dedupe_values(prior + list(gold))
    # Sorted so the fallback pool (and thus every draw from it) does not
    # depend on dialogue traversal order.
    global_pool = sorted(set(global_pool))

    n_valid = int(len(turns) * config.valid_fraction)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, STREAM_SAMPLER]))
    order = rng.permutation(len(turns))
    valid_indices = set(order[:n_valid].tolist())

    train: list[EstimatorExample] = []
    valid: list[EstimatorExample] = []
    for i, (ref, gold, prior_values) in enumerate(turns):
        bucket = valid if i in valid_indices else train
        bucket.extend(_turn_examples(ref, gold, prior_values, global_pool, config))
    return train, valid


def write_estimator_records(
    path,
    examples: Sequence[EstimatorExample],
    dialogues: Iterable[Dialogue],
    prompt_config: PromptConfig,
) -> int:
    """Render examples to {input, label} records against their dialogues."""
    by_id = {d.dialogue_id: d for d in dialogues}
    records = []
    for example in examples:
        dialogue = by_id[example.ref.dialogue_id]
        idx = example.ref.turn_index - 1
        built = build_estimator_input(
            dialogue.turns[:idx], dialogue.turns[idx], example.candidate, prompt_config
        )
        records.append(estimator_record(built.text, example.label))
    return write_jsonl(path, records)
