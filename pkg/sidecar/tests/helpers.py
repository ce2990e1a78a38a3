"""Builders turning labeled dialogues into task training files.

These render the pipeline package's canonical record shapes through its
own prompt builders, so training-file inputs stay within the vocabulary
the checkpoints were initialized from.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

from dstpipe.negsample import SamplerConfig, synth_dataset, write_estimator_records
from dstpipe.prompting import PromptConfig, build_generator_input, build_slot_prompts
from dstpipe.records import generator_record, slot_record, write_jsonl
from dstpipe.state import encode_values

PROMPTS = PromptConfig()


def iter_labeled_turns(dialogues):
    """Yield (history, turn) for every annotated turn, in corpus order."""
    for dialogue in dialogues:
        for i, turn in enumerate(dialogue.turns):
            yield dialogue.turns[:i], turn


def values_rows(dialogues, limit: int | None = None) -> list[dict]:
    rows = []
    for history, turn in iter_labeled_turns(dialogues):
        values = [value for _, value in turn.gold_turn_label]
        built = build_generator_input(history, turn, PROMPTS)
        rows.append(generator_record(built.text, encode_values(values)))
        if limit is not None and len(rows) >= limit:
            return rows
    return rows


def slot_training_rows(dialogues, limit: int | None = None) -> list[dict]:
    """Slot rows carrying the inverse (value-given-slot) pair."""
    rows = []
    for history, turn in iter_labeled_turns(dialogues):
        for slot, value in turn.gold_turn_label:
            pair = build_slot_prompts(
                history, turn, value, PROMPTS, domain_slot=slot, training=True
            )
            rows.append(slot_record(pair.forward, slot, pair.inverse, value))
            if limit is not None and len(rows) >= limit:
                return rows
    return rows


def slot_distinct_turn_rows(dialogues, limit: int) -> list[dict]:
    """One forward slot row per annotated turn.

    Rows from the same turn share their whole dialogue context, which
    makes them near-duplicates; memorization fixtures want one each.
    """
    rows = []
    for history, turn in iter_labeled_turns(dialogues):
        if not turn.gold_turn_label:
            continue
        slot, value = turn.gold_turn_label[0]
        pair = build_slot_prompts(history, turn, value, PROMPTS, domain_slot=slot)
        rows.append(slot_record(pair.forward, slot))
        if len(rows) >= limit:
            return rows
    return rows


def write_estimator_overfit_file(
    path: Path, dialogues, n: int = 10, seed: int = 9
) -> Path:
    """n estimator rows from n distinct turns, cycling through labels.

    The sampler's per-turn variants (gold vs corrupted hypotheses) are
    near-duplicate contrast pairs; a memorization fixture picks one
    example per turn instead.
    """
    train, _ = synth_dataset(dialogues, SamplerConfig(seed=seed))
    by_ref = defaultdict(list)
    for example in train:
        by_ref[example.ref].append(example)
    picked = []
    for i, ref in enumerate(sorted(by_ref, key=lambda r: (r.dialogue_id, r.turn_index))):
        group = by_ref[ref]
        wanted = i % 3
        picked.append(next((e for e in group if e.label == wanted), group[0]))
        if len(picked) == n:
            break
    write_estimator_records(path, picked, dialogues, PROMPTS)
    return path


def write_rows(path: Path, rows: list[dict]) -> Path:
    write_jsonl(path, rows)
    return path


def write_estimator_files(
    directory: Path, dialogues, seed: int = 9
) -> tuple[Path, int, int]:
    """Write train.jsonl plus its sibling valid.jsonl; return counts."""
    train, valid = synth_dataset(dialogues, SamplerConfig(seed=seed))
    directory.mkdir(parents=True, exist_ok=True)
    write_estimator_records(directory / "train.jsonl", train, dialogues, PROMPTS)
    write_estimator_records(directory / "valid.jsonl", valid, dialogues, PROMPTS)
    return directory / "train.jsonl", len(train), len(valid)
