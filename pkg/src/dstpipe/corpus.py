"""Corpus ingestion, turn-label derivation, and seeded sampling.

Reads the MultiWOZ 2.1 distribution layout: a ``data.json`` holding every
dialogue, plus ``valListFile``/``testListFile`` naming the validation and
test dialogues.  A dialogue's ``log`` alternates user and system
utterances; each system entry carries the cumulative annotation for the
preceding user turn under ``metadata[domain]["semi"|"book"]``.

The in-memory model pairs utterances per turn: turn t is (system_t,
user_t) with the system utterance of turn 1 fixed to the empty string,
since logs open with the user speaking.  Gold states are rebuilt as a
monotone fold of per-turn additions and changes, so a later turn never
deletes a slot; the rare shrinking annotation is dropped with a warning.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .normalize import normalize_text, normalize_value
from .state import update_belief

log = logging.getLogger(__name__)

SPEAKER_SYSTEM = "system"
SPEAKER_USER = "user"

# Domains retained by default; everything else in the annotations is
# dropped with a warning (police/hospital/bus show up in the raw data).
DEFAULT_DOMAINS = frozenset({"restaurant", "hotel", "attraction", "taxi", "train"})

# Bookkeeping keys inside metadata["book"] that are not slots.
_NON_SLOT_KEYS = {"booked", "ticket"}

_LIST_FILE_STEMS = {"valid": "valListFile", "test": "testListFile"}


class IngestionError(RuntimeError):
    """Fatal problem reading or interpreting a corpus file."""


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str


@dataclass(frozen=True)
class DialogueTurn:
    """One (system, user) exchange with optional gold annotation."""

    turn_index: int
    system: Utterance
    user: Utterance
    gold_state: Mapping[str, str] | None = None
    gold_turn_label: tuple[tuple[str, str], ...] | None = None


@dataclass(frozen=True)
class Dialogue:
    dialogue_id: str
    turns: tuple[DialogueTurn, ...]
    domains: frozenset[str]


@dataclass(frozen=True)
class CorpusSplit:
    """A seeded subsample of the training pool plus fixed eval portions."""

    train: tuple[Dialogue, ...]
    valid: tuple[Dialogue, ...]
    test: tuple[Dialogue, ...]
    unlabeled: tuple[Dialogue, ...]
    ratio: float
    seed: int


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise IngestionError(f"missing corpus file: {path}")
    try:
        return json.loads(path.read_text())
    except ValueError as exc:
        raise IngestionError(f"unparseable corpus file: {path}: {exc}") from exc


def _read_id_list(corpus_root: Path, stem: str) -> set[str]:
    for suffix in (".json", ".txt", ""):
        path = corpus_root / f"{stem}{suffix}"
        if path.is_file():
            ids = {line.strip() for line in path.read_text().splitlines() if line.strip()}
            return {i[:-5] if i.endswith(".json") else i for i in ids}
    raise IngestionError(f"missing corpus file: {corpus_root / stem}")


def _state_from_metadata(
    metadata: Mapping, domain_filter: frozenset[str] | None, seen_unknown: set[str]
) -> dict[str, str]:
    """Flatten one metadata dict into {domain-slot: value}, raw diff view."""
    state: dict[str, str] = {}
    for domain, sections in metadata.items():
        if domain_filter is not None and domain not in domain_filter:
            if domain not in seen_unknown:
                seen_unknown.add(domain)
                log.warning("dropping slots for out-of-scope domain: %s", domain)
            continue
        if not isinstance(sections, Mapping):
            continue
        for section in ("book", "semi"):
            for slot, value in sections.get(section, {}).items():
                if slot in _NON_SLOT_KEYS:
                    continue
                if not isinstance(value, str):
                    continue
                v = normalize_value(value)
                if not v:
                    continue
                state[f"{domain}-{slot.lower()}"] = v
    return state


def _build_dialogue(
    dialogue_id: str, entry: Mapping, domain_filter: frozenset[str] | None
) -> Dialogue | None:
    raw_log = entry.get("log")
    if not isinstance(raw_log, list) or not raw_log:
        raise IngestionError(f"dialogue {dialogue_id}: missing or empty log")

    seen_unknown: set[str] = set()
    turns: list[DialogueTurn] = []
    belief: dict[str, str] = {}
    turn_index = 0
    # log[0] is the user; each following system entry closes one turn.
    for i in range(0, len(raw_log) - 1, 2):
        user_entry, system_entry = raw_log[i], raw_log[i + 1]
        if user_entry.get("metadata"):
            raise IngestionError(
                f"dialogue {dialogue_id}: expected user utterance at log[{i}]"
            )
        turn_index += 1
        system_text = "" if turn_index == 1 else normalize_text(raw_log[i - 1]["text"])
        annotated = _state_from_metadata(
            system_entry.get("metadata", {}), domain_filter, seen_unknown
        )
        # Fold additions and changes only, keeping the state monotone.
        additions = [
            (slot, value) for slot, value in annotated.items() if belief.get(slot) != value
        ]
        dropped = [s for s in belief if s not in annotated]
        if dropped and annotated:
            log.warning(
                "dialogue %s turn %d: annotation dropped %d slot(s); carrying forward",
                dialogue_id,
                turn_index,
                len(dropped),
            )
        belief = update_belief(belief, additions)
        turns.append(
            DialogueTurn(
                turn_index=turn_index,
                system=Utterance(SPEAKER_SYSTEM, system_text),
                user=Utterance(SPEAKER_USER, normalize_text(user_entry["text"])),
                gold_state=dict(belief),
            )
        )
    if not turns:
        return None
    domains = frozenset(
        slot.split("-", 1)[0] for turn in turns for slot in (turn.gold_state or {})
    )
    if not domains:
        return None
    return Dialogue(dialogue_id=dialogue_id, turns=tuple(turns), domains=domains)


def ingest(
    corpus_root: str | Path,
    domain_filter: frozenset[str] | None = DEFAULT_DOMAINS,
) -> list[Dialogue]:
    """Load every dialogue from ``corpus_root/data.json``.

    Dialogues whose annotations fall entirely outside ``domain_filter``
    are dropped.  Pass ``domain_filter=None`` to keep all domains.
    """
    corpus_root = Path(corpus_root)
    data = _read_json(corpus_root / "data.json")
    dialogues: list[Dialogue] = []
    for raw_id, entry in data.items():
        dialogue_id = raw_id[:-5] if raw_id.endswith(".json") else raw_id
        dialogue = _build_dialogue(dialogue_id, entry, domain_filter)
        if dialogue is None:
            log.info("dropping dialogue %s: no in-scope annotations", dialogue_id)
            continue
        dialogues.append(dialogue)
    log.info("ingested %d dialogues from %s", len(dialogues), corpus_root)
    return dialogues


def load_portions(
    corpus_root: str | Path,
    domain_filter: frozenset[str] | None = DEFAULT_DOMAINS,
) -> dict[str, list[Dialogue]]:
    """Split an ingested corpus into train/valid/test by the list files."""
    corpus_root = Path(corpus_root)
    dialogues = ingest(corpus_root, domain_filter)
    valid_ids = _read_id_list(corpus_root, _LIST_FILE_STEMS["valid"])
    test_ids = _read_id_list(corpus_root, _LIST_FILE_STEMS["test"])
    overlap = valid_ids & test_ids
    if overlap:
        raise IngestionError(f"valid/test lists overlap: {sorted(overlap)[:3]}")
    portions: dict[str, list[Dialogue]] = {"train": [], "valid": [], "test": []}
    for d in dialogues:
        if d.dialogue_id in valid_ids:
            portions["valid"].append(d)
        elif d.dialogue_id in test_ids:
            portions["test"].append(d)
        else:
            portions["train"].append(d)
    return portions


def derive_turn_labels(dialogue: Dialogue) -> Dialogue:
    """Fill each turn's label with the state delta against the prior turn.

    The label lists (domain_slot, value) pairs that are new or changed in
    this turn's gold state, sorted by slot name so the order survives any
    serialization of the state mapping.  Every turn must carry a gold
    state.
    """
    prior: Mapping[str, str] = {}
    turns: list[DialogueTurn] = []
    for turn in dialogue.turns:
        if turn.gold_state is None:
            raise ValueError(
                f"dialogue {dialogue.dialogue_id} turn {turn.turn_index}: "
                "cannot derive labels without gold states"
            )
        label = tuple(
            sorted(
                (slot, value)
                for slot, value in turn.gold_state.items()
                if prior.get(slot) != value
            )
        )
        turns.append(replace(turn, gold_turn_label=label))
        prior = turn.gold_state
    return replace(dialogue, turns=tuple(turns))


def strip_labels(dialogue: Dialogue) -> Dialogue:
    """Return the dialogue with all gold annotation removed."""
    turns = tuple(
        replace(t, gold_state=None, gold_turn_label=None) for t in dialogue.turns
    )
    return replace(dialogue, turns=turns)


def sample_split(
    pool: Sequence[Dialogue],
    ratio: float,
    seed: int,
    valid: Sequence[Dialogue] = (),
    test: Sequence[Dialogue] = (),
) -> CorpusSplit:
    """Sample ``floor(ratio * |pool|)`` dialogues without replacement.

    Sampling is dialogue-level and deterministic for a given (ratio,
    seed) regardless of pool ordering: ids are sorted, then permuted with
    a PCG64 generator keyed by the seed.  The unsampled remainder becomes
    the unlabeled pool with annotations stripped.  The valid and test
    portions pass through untouched; they are never subsampled.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    ordered = sorted(pool, key=lambda d: d.dialogue_id)
    ids = [d.dialogue_id for d in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("pool contains duplicate dialogue ids")
    k = math.floor(ratio * len(ordered))
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    order = rng.permutation(len(ordered))
    chosen = {ids[i] for i in order[:k]}
    train = tuple(d for d in ordered if d.dialogue_id in chosen)
    unlabeled = tuple(
        strip_labels(d) for d in ordered if d.dialogue_id not in chosen
    )
    return CorpusSplit(
        train=train,
        valid=tuple(valid),
        test=tuple(test),
        unlabeled=unlabeled,
        ratio=ratio,
        seed=seed,
    )


def turn_example_count(split: CorpusSplit) -> int:
    """Number of turn-level training examples in the sampled portion."""
    return sum(len(d.turns) for d in split.train)
