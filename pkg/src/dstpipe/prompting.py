"""Prompt assembly for the three model-facing tasks.

The value generator sees the full dialogue up to the current turn behind
a fixed instruction prefix, with marker strings fencing the history and
the current turn.  The estimator and the slot generator see the dialogue
followed by a task sentence.  Marker strings like ``[SEP]`` are plain
text at this level; mapping them to real tokenizer specials is the
serving side's concern.

Utterances within a block are joined with ``" ; "``, so a first turn
(empty system utterance) contributes a leading ``" ; "`` verbatim.
History is truncated whole turns at a time, oldest first, until the
assembled text fits the character budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .corpus import DialogueTurn
from .state import dedupe_values

UTTERANCE_JOIN = " ; "


@dataclass(frozen=True)
class PromptConfig:
    prefix: str = "get the requests that the user confirmed or mentioned in this turn"
    history_marker: str = "[HISTORY]"
    turn_marker: str = "[TURN]"
    sep_marker: str = "[SEP]"
    max_history_chars: int = 3000
    no_values_template: str = "there are no values mentioned in this turn."
    values_template: str = "all the values mentioned in this turn are {values}."
    slot_template: str = "what is the slot type of {value}"
    inverse_template: str = "what is the value of {slot}"

    def __post_init__(self) -> None:
        markers = (self.history_marker, self.turn_marker, self.sep_marker)
        if any(not m.strip() for m in markers) or len(set(markers)) != 3:
            raise ValueError("markers must be non-empty and distinct")
        if self.max_history_chars <= 0:
            raise ValueError("max_history_chars must be positive")
        for template, placeholder in (
            (self.values_template, "{values}"),
            (self.slot_template, "{value}"),
            (self.inverse_template, "{slot}"),
        ):
            if placeholder not in template:
                raise ValueError(f"template missing {placeholder}: {template!r}")


@dataclass(frozen=True)
class GeneratorInput:
    text: str


@dataclass(frozen=True)
class EstimatorInput:
    text: str
    values: tuple[str, ...] = field(default=())

    @property
    def value_count(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SlotPromptPair:
    forward: str
    inverse: str | None
    value: str
    domain_slot: str | None


def _turn_block(turn: DialogueTurn) -> str:
    return f"{turn.system.text}{UTTERANCE_JOIN}{turn.user.text}"


def _history_block(history: Sequence[DialogueTurn]) -> str:
    return UTTERANCE_JOIN.join(
        part for turn in history for part in (turn.system.text, turn.user.text)
    )


def _join_segments(*segments: str) -> str:
    return " ".join(s for s in segments if s)


def _fit_history(
    history: Sequence[DialogueTurn],
    assemble,
    budget: int,
) -> str:
    """Drop oldest history turns until the assembled text fits the budget."""
    kept = list(history)
    text = assemble(kept)
    while kept and len(text) > budget:
        kept.pop(0)
        text = assemble(kept)
    return text


def build_generator_input(
    history: Sequence[DialogueTurn], current: DialogueTurn, config: PromptConfig
) -> GeneratorInput:
    """Assemble the value-generation prompt for one turn."""

    def assemble(kept: Sequence[DialogueTurn]) -> str:
        return _join_segments(
            config.prefix,
            config.history_marker,
            _history_block(kept),
            config.turn_marker,
            _turn_block(current),
        )

    return GeneratorInput(_fit_history(history, assemble, config.max_history_chars))


def _dialogue_block(
    history: Sequence[DialogueTurn], current: DialogueTurn, config: PromptConfig
) -> str:
    def assemble(kept: Sequence[DialogueTurn]) -> str:
        hist = _history_block(kept)
        cur = _turn_block(current)
        return f"{hist} . {cur}" if hist else cur

    return _fit_history(history, assemble, config.max_history_chars)


def value_prompt_sentence(values: Sequence[str], config: PromptConfig) -> str:
    """The estimator's hypothesis sentence for a candidate value set."""
    values = dedupe_values(values)
    if not values:
        return config.no_values_template
    return config.values_template.format(values=", ".join(values))


def build_estimator_input(
    history: Sequence[DialogueTurn],
    current: DialogueTurn,
    values: Sequence[str],
    config: PromptConfig,
) -> EstimatorInput:
    """Assemble the estimator prompt: dialogue, separator, hypothesis."""
    dialogue = _dialogue_block(history, current, config)
    sentence = value_prompt_sentence(values, config)
    text = f"{dialogue} {config.sep_marker} {sentence}"
    return EstimatorInput(text=text, values=tuple(dedupe_values(values)))


def build_slot_prompts(
    history: Sequence[DialogueTurn],
    current: DialogueTurn,
    value: str,
    config: PromptConfig,
    domain_slot: str | None = None,
    training: bool = False,
) -> SlotPromptPair:
    """Assemble forward (and, with a gold slot, inverse) slot prompts.

    The inverse prompt asks for the value given the slot and is only
    constructible when ``domain_slot`` is known; requesting training
    prompts without one is an error.
    """
    if not value:
        raise ValueError("slot prompt requires a non-empty value")
    if training and not domain_slot:
        raise ValueError("inverse prompt requires domain_slot")
    dialogue = _dialogue_block(history, current, config)
    question = config.slot_template.format(value=value)
    forward = f"{dialogue} {config.sep_marker} {question} {config.sep_marker}"
    inverse = None
    if domain_slot:
        inverse_question = config.inverse_template.format(slot=domain_slot)
        inverse = f"{dialogue} {config.sep_marker} {inverse_question} {config.sep_marker}"
    return SlotPromptPair(
        forward=forward, inverse=inverse, value=value, domain_slot=domain_slot
    )
