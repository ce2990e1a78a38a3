"""Belief states, turn labels, and the value-set line codec.

A belief state is a plain ``dict`` mapping ``"domain-slot"`` to a
normalized value.  A turn label is a sequence of ``(domain_slot, value)``
pairs describing what changed in one turn.  A value set is an ordered,
duplicate-free list of values; it is what the value generator produces
and what gets linearized to a single line for a seq2seq model.
"""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

from .normalize import normalize_value

# Reserved separator for linearized value sets.  The core token is "|";
# values are joined with one space on either side.
DELIMITER = " | "


class ValueEncodeError(ValueError):
    """Raised when a value to encode contains the reserved delimiter."""


def dedupe_values(values: Iterable[str]) -> list[str]:
    """Drop duplicates while preserving first-mention order."""
    seen: set[str] = set()
    out: list[str] = []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def encode_values(values: Sequence[str]) -> str:
    """Linearize a value set to one line, joining with ``" | "``.

    The empty set encodes to the empty string.  A value containing the
    reserved "|" token cannot be represented and raises
    :class:`ValueEncodeError`.
    """
    for v in values:
        if "|" in v:
            raise ValueEncodeError(f"value contains reserved delimiter: {v!r}")
    return DELIMITER.join(values)


def decode_values(raw: str) -> list[str]:
    """Parse a generated line back into a value set.

    Decoding is total: split on "|", trim and normalize each piece, drop
    empties, and dedupe preserving order.  Both ``""`` and ``"none"``
    decode to the empty set.
    """
    pieces = raw.split("|")
    values = []
    for piece in pieces:
        v = normalize_value(piece)
        if v:
            values.append(v)
    return dedupe_values(values)


def update_belief(
    prior: Mapping[str, str], turn_label: Iterable[tuple[str, str]]
) -> dict[str, str]:
    """Apply one turn label to a belief state, returning a new state.

    Pairs overwrite or insert; entries absent from the label carry over
    unchanged.  There is no deletion path: normalization maps absence
    markers to the empty string upstream, and empty values are skipped
    here so a belief state never holds one.
    """
    updated = dict(prior)
    for domain_slot, value in turn_label:
        if not value:
            continue
        updated[domain_slot] = value
    return updated


def fold_labels(
    turn_labels: Iterable[Iterable[tuple[str, str]]],
) -> list[dict[str, str]]:
    """Accumulate turn labels into the per-turn belief state sequence."""
    states: list[dict[str, str]] = []
    belief: dict[str, str] = {}
    for label in turn_labels:
        belief = update_belief(belief, label)
        states.append(belief)
    return states
