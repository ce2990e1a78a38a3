"""Canonical line-delimited record formats and atomic file writes.

Every artifact the pipeline reads or writes is JSON-lines.  The turn
record is the lingua franca between stages:

    {"dialogue_id": ..., "turn_index": ..., "system": ..., "user": ...,
     "state": {...}?, "turn_label": [[slot, value], ...]?}

Training files for the model backends use two derived shapes: estimator
records ``{"input": str, "label": 0|1|2}`` and generator records
``{"input": str, "target": str}`` (the slot task adds inverse fields).
Writers are atomic: content goes to a temp file in the target directory
which is renamed into place, so a crashed run never leaves a partial
artifact under the final name.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .corpus import (
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    Dialogue,
    DialogueTurn,
    Utterance,
)

SCHEMA_VERSION = 1

_TURN_KEYS = {"dialogue_id", "turn_index", "system", "user", "state", "turn_label"}


class RecordError(ValueError):
    """A line that does not conform to the canonical record schema."""


def atomic_write_text(path: str | Path, content: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, records: Iterable[Mapping]) -> int:
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def read_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    with path.open() as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except ValueError as exc:
                raise RecordError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def turn_to_record(dialogue_id: str, turn: DialogueTurn) -> dict:
    record: dict = {
        "dialogue_id": dialogue_id,
        "turn_index": turn.turn_index,
        "system": turn.system.text,
        "user": turn.user.text,
    }
    if turn.gold_state is not None:
        record["state"] = dict(turn.gold_state)
    if turn.gold_turn_label is not None:
        record["turn_label"] = [[s, v] for s, v in turn.gold_turn_label]
    return record


def dialogues_to_records(dialogues: Iterable[Dialogue]) -> list[dict]:
    return [
        turn_to_record(d.dialogue_id, turn) for d in dialogues for turn in d.turns
    ]


def _turn_from_record(record: Mapping) -> tuple[str, DialogueTurn]:
    unknown = set(record) - _TURN_KEYS
    if unknown:
        raise RecordError(f"unknown turn record keys: {sorted(unknown)}")
    try:
        dialogue_id = record["dialogue_id"]
        turn_index = record["turn_index"]
        system = record["system"]
        user = record["user"]
    except KeyError as exc:
        raise RecordError(f"turn record missing key: {exc}") from exc
    if not isinstance(turn_index, int) or turn_index < 1:
        raise RecordError(f"turn_index must be a positive int, got {turn_index!r}")
    state = record.get("state")
    label = record.get("turn_label")
    turn = DialogueTurn(
        turn_index=turn_index,
        system=Utterance(SPEAKER_SYSTEM, system),
        user=Utterance(SPEAKER_USER, user),
        gold_state=dict(state) if state is not None else None,
        gold_turn_label=(
            tuple((s, v) for s, v in label) if label is not None else None
        ),
    )
    return dialogue_id, turn


def records_to_dialogues(records: Iterable[Mapping]) -> list[Dialogue]:
    """Group turn records back into dialogues, preserving file order."""
    grouped: dict[str, list[DialogueTurn]] = {}
    for record in records:
        dialogue_id, turn = _turn_from_record(record)
        grouped.setdefault(dialogue_id, []).append(turn)
    dialogues = []
    for dialogue_id, turns in grouped.items():
        turns.sort(key=lambda t: t.turn_index)
        if [t.turn_index for t in turns] != list(range(1, len(turns) + 1)):
            raise RecordError(f"dialogue {dialogue_id}: non-contiguous turn indices")
        domains = frozenset(
            slot.split("-", 1)[0]
            for t in turns
            for slot in dict(t.gold_state or {}) | dict(t.gold_turn_label or ())
        )
        dialogues.append(
            Dialogue(dialogue_id=dialogue_id, turns=tuple(turns), domains=domains)
        )
    return dialogues


def read_dialogues(path: str | Path) -> list[Dialogue]:
    return records_to_dialogues(read_jsonl(path))


def write_dialogues(path: str | Path, dialogues: Iterable[Dialogue]) -> int:
    return write_jsonl(path, dialogues_to_records(dialogues))


def estimator_record(input_text: str, label: int) -> dict:
    if label not in (0, 1, 2):
        raise RecordError(f"estimator label must be 0, 1, or 2, got {label!r}")
    return {"input": input_text, "label": label}


def generator_record(input_text: str, target: str) -> dict:
    return {"input": input_text, "target": target}


def slot_record(
    input_text: str,
    target: str,
    inverse_input: str | None = None,
    inverse_target: str | None = None,
) -> dict:
    record = {"input": input_text, "target": target}
    if inverse_input is not None:
        record["inverse_input"] = inverse_input
        record["inverse_target"] = inverse_target or ""
    return record
