"""End-to-end prediction: values, slots, and accumulated belief states.

For each turn the value backend proposes a value set, the slot backend
names a domain-slot for every value, and the resulting pairs update the
running belief state.  A slot answer of ``unknown-slot`` still enters
the state: a wrong state is a wrong state, never silently dropped.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from .backends import SlotBackend, TurnRef, ValueBackend
from .corpus import Dialogue
from .metrics import EvalResult, jga, tla
from .prompting import PromptConfig, build_generator_input, build_slot_prompts
from .state import update_belief

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class TurnPrediction:
    ref: TurnRef
    values: tuple[str, ...]
    turn_label: tuple[tuple[str, str], ...]
    belief: Mapping[str, str]


def map_concurrently(
    fn: Callable[[T], R], items: Sequence[T], max_workers: int = 1
) -> list[R]:
    """Order-preserving map, fanned out when a backend allows it."""
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


def predict_dialogue(
    dialogue: Dialogue,
    value_backend: ValueBackend,
    slot_backend: SlotBackend,
    config: PromptConfig,
) -> list[TurnPrediction]:
    predictions: list[TurnPrediction] = []
    belief: dict[str, str] = {}
    for i, turn in enumerate(dialogue.turns):
        ref = TurnRef(dialogue.dialogue_id, turn.turn_index)
        history = dialogue.turns[:i]
        generator_input = build_generator_input(history, turn, config)
        values = value_backend.generate_values(generator_input, ref)
        label = []
        for value in values:
            prompts = build_slot_prompts(history, turn, value, config)
            slot = slot_backend.generate_slot(prompts, ref)
            label.append((slot, value))
        belief = update_belief(belief, label)
        predictions.append(
            TurnPrediction(
                ref=ref,
                values=tuple(values),
                turn_label=tuple(label),
                belief=dict(belief),
            )
        )
    return predictions


def predict_corpus(
    dialogues: Sequence[Dialogue],
    value_backend: ValueBackend,
    slot_backend: SlotBackend,
    config: PromptConfig,
    max_workers: int = 1,
) -> dict[str, list[TurnPrediction]]:
    results = map_concurrently(
        lambda d: predict_dialogue(d, value_backend, slot_backend, config),
        dialogues,
        max_workers=max_workers,
    )
    return {d.dialogue_id: preds for d, preds in zip(dialogues, results)}


def gold_value_sets(dialogues: Iterable[Dialogue]) -> list[list[str]]:
    out = []
    for dialogue in dialogues:
        for turn in dialogue.turns:
            if turn.gold_turn_label is None:
                raise ValueError(
                    f"dialogue {dialogue.dialogue_id}: gold turn labels required"
                )
            out.append([v for _, v in turn.gold_turn_label])
    return out


def gold_states(dialogues: Iterable[Dialogue]) -> dict[str, list[Mapping[str, str]]]:
    out: dict[str, list[Mapping[str, str]]] = {}
    for dialogue in dialogues:
        states = []
        for turn in dialogue.turns:
            if turn.gold_state is None:
                raise ValueError(
                    f"dialogue {dialogue.dialogue_id}: gold states required"
                )
            states.append(dict(turn.gold_state))
        out[dialogue.dialogue_id] = states
    return out


def evaluate_predictions(
    predictions: Mapping[str, Sequence[TurnPrediction]],
    gold_dialogues: Sequence[Dialogue],
) -> dict[str, EvalResult]:
    """TLA over predicted value sets and JGA over predicted states."""
    ordered = [d for d in gold_dialogues if d.dialogue_id in predictions]
    if len(ordered) != len(predictions):
        raise ValueError("predictions cover dialogues missing from gold")
    predicted_values = [
        list(p.values) for d in ordered for p in predictions[d.dialogue_id]
    ]
    return {
        "tla": tla(predicted_values, gold_value_sets(ordered)),
        "jga": jga(
            {
                d.dialogue_id: [dict(p.belief) for p in predictions[d.dialogue_id]]
                for d in ordered
            },
            gold_states(ordered),
        ),
    }


def validation_tla(
    dialogues: Sequence[Dialogue],
    value_backend: ValueBackend,
    config: PromptConfig,
    max_workers: int = 1,
) -> float:
    """TLA of a value backend on labeled dialogues (no slot stage)."""

    def one(dialogue: Dialogue) -> list[list[str]]:
        out = []
        for i, turn in enumerate(dialogue.turns):
            ref = TurnRef(dialogue.dialogue_id, turn.turn_index)
            generator_input = build_generator_input(dialogue.turns[:i], turn, config)
            out.append(list(value_backend.generate_values(generator_input, ref)))
        return out

    predicted = [
        values
        for per_dialogue in map_concurrently(one, dialogues, max_workers=max_workers)
        for values in per_dialogue
    ]
    return tla(predicted, gold_value_sets(dialogues)).value
