"""Readers for the pipeline's line-delimited training and corpus files.

These shapes are the wire contract with the pipeline package; the
sidecar keeps its own readers so its runtime has no dependency on the
client's internals.

- generator rows: ``{"input": str, "target": str}``
- estimator rows: ``{"input": str, "label": 0|1|2}``
- slot rows: generator rows plus optional ``inverse_input`` /
  ``inverse_target`` for the auxiliary value-from-slot objective
- turn rows: ``{"dialogue_id", "turn_index", "system", "user",
  "state"?, "turn_label"?}`` — used only to harvest vocabulary and the
  slot catalog when initializing checkpoints
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator


class RecordError(ValueError):
    """A training or corpus file does not match the expected shape."""


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs, skipping blank lines."""
    path = Path(path)
    with path.open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}:{number}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise RecordError(f"{path}:{number}: expected an object")
            yield number, record


def _require_str(record: dict, key: str, where: str) -> str:
    value = record.get(key)
    if not isinstance(value, str):
        raise RecordError(f"{where}: field {key!r} must be a string, got {value!r}")
    return value


def generator_rows(path: str | Path) -> list[tuple[str, str]]:
    rows = []
    for number, record in read_jsonl(path):
        where = f"{path}:{number}"
        rows.append((_require_str(record, "input", where), _require_str(record, "target", where)))
    return rows


def estimator_rows(path: str | Path) -> list[tuple[str, int]]:
    rows = []
    for number, record in read_jsonl(path):
        where = f"{path}:{number}"
        text = _require_str(record, "input", where)
        label = record.get("label")
        if label not in (0, 1, 2):
            raise RecordError(f"{where}: label must be 0, 1, or 2, got {label!r}")
        rows.append((text, label))
    return rows


@dataclass(frozen=True)
class SlotRow:
    input: str
    target: str
    inverse_input: str | None = None
    inverse_target: str | None = None


def slot_rows(path: str | Path) -> list[SlotRow]:
    rows = []
    for number, record in read_jsonl(path):
        where = f"{path}:{number}"
        text = _require_str(record, "input", where)
        target = _require_str(record, "target", where)
        inverse_input = record.get("inverse_input")
        inverse_target = record.get("inverse_target")
        if inverse_input is not None:
            inverse_input = _require_str(record, "inverse_input", where)
            inverse_target = _require_str(record, "inverse_target", where)
        rows.append(SlotRow(text, target, inverse_input, inverse_target))
    return rows


def corpus_texts_and_slots(paths: list[str | Path]) -> tuple[list[str], list[str]]:
    """Collect every string and every slot name from canonical turn files."""
    from .vocab import iter_strings

    texts: list[str] = []
    slots: set[str] = set()
    for path in paths:
        for number, record in read_jsonl(path):
            where = f"{path}:{number}"
            if "dialogue_id" not in record or "turn_index" not in record:
                raise RecordError(f"{where}: not a canonical turn record")
            texts.extend(iter_strings(record))
            state = record.get("state") or {}
            if not isinstance(state, dict):
                raise RecordError(f"{where}: state must be a mapping")
            slots.update(state)
            for pair in record.get("turn_label") or []:
                if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
                    raise RecordError(f"{where}: turn_label entries must be pairs")
                slots.add(pair[0])
    return texts, sorted(slots)
