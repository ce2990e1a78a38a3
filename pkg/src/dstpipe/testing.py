"""Deterministic synthetic corpora for tests and smoke runs.

Generates labeled dialogues over the five in-scope domains with
realistic slot schemas and value pools, and can write them back out in
the raw distribution layout (``data.json`` plus list files) so the
ingestion path gets exercised end to end.  Generation avoids pairing
the same value with two slots inside a single turn, since the value-set
decomposition cannot represent that.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import (
    SPEAKER_SYSTEM,
    SPEAKER_USER,
    Dialogue,
    DialogueTurn,
    Utterance,
    derive_turn_labels,
)
from .records import atomic_write_text

SLOT_VALUES: dict[str, dict[str, list[str]]] = {
    "hotel": {
        "area": ["centre", "north", "south", "east", "west"],
        "pricerange": ["cheap", "moderate", "expensive"],
        "stars": ["2", "3", "4", "5"],
        "type": ["hotel", "guest house"],
        "parking": ["yes", "no"],
        "internet": ["yes", "no"],
        "name": [
            "a and b guest house",
            "huntingdon marriott hotel",
            "acorn guest house",
            "alexander bed and breakfast",
        ],
        "people": ["1", "2", "3", "4", "6", "8"],
        "day": ["monday", "tuesday", "wednesday", "thursday", "friday"],
        "stay": ["1", "2", "3", "5"],
    },
    "restaurant": {
        "food": ["italian", "chinese", "indian", "british", "vietnamese"],
        "area": ["centre", "north", "south", "east", "west"],
        "pricerange": ["cheap", "moderate", "expensive"],
        "name": [
            "saigon city",
            "peking restaurant",
            "midsummer house restaurant",
            "the oak bistro",
        ],
        "time": ["11:45", "12:30", "17:15", "18:00", "19:30"],
        "day": ["monday", "tuesday", "saturday", "sunday"],
        "people": ["1", "2", "4", "5", "7"],
    },
    "attraction": {
        "type": ["museum", "park", "night club", "theatre", "college"],
        "area": ["centre", "north", "south", "east", "west"],
        "name": [
            "cafe jello gallery",
            "milton country park",
            "cambridge arts theatre",
            "kings college",
        ],
    },
    "taxi": {
        "destination": ["cityroomz", "lovell lodge", "curry garden"],
        "departure": ["the junction", "frankie and bennys", "finches bed and breakfast"],
        "leaveat": ["09:15", "13:00", "16:45", "21:30"],
        "arriveby": ["10:00", "14:30", "18:15", "22:00"],
    },
    "train": {
        "destination": ["cambridge", "london kings cross", "ely", "stansted airport"],
        "departure": ["norwich", "birmingham new street", "peterborough", "leicester"],
        "day": ["monday", "wednesday", "friday", "sunday"],
        "leaveat": ["05:40", "08:11", "11:32", "15:29"],
        "arriveby": ["07:52", "10:08", "13:44", "17:23"],
        "people": ["1", "2", "3", "5", "8"],
    },
}

_SYSTEM_LINES = [
    "okay , what else can i help you with ?",
    "sure , i can help with that .",
    "i have several options for you .",
    "booking was successful . anything else ?",
    "you are all set . anything more ?",
]

_CLOSING_USER_LINES = [
    "thank you , goodbye .",
    "that is all i need , thanks .",
    "no , that will be all . thank you .",
]


def _mention(values: Sequence[str]) -> str:
    if not values:
        return ""
    if len(values) == 1:
        return values[0]
    return ", ".join(values[:-1]) + " and " + values[-1]


def synthetic_dialogue(
    dialogue_id: str,
    rng: np.random.Generator,
    max_turns: int = 7,
    blank_turn_prob: float = 0.25,
) -> Dialogue:
    """One labeled dialogue over one or two domains."""
    domain_names = sorted(SLOT_VALUES)
    n_domains = 1 + int(rng.random() < 0.35)
    chosen = rng.choice(len(domain_names), size=n_domains, replace=False)
    domains = [domain_names[int(i)] for i in chosen]

    slot_pool: list[tuple[str, str]] = []
    for domain in domains:
        for slot in SLOT_VALUES[domain]:
            slot_pool.append((domain, slot))
    order = rng.permutation(len(slot_pool))
    slot_pool = [slot_pool[int(i)] for i in order]

    n_turns = int(rng.integers(2, max_turns + 1))
    turns: list[DialogueTurn] = []
    belief: dict[str, str] = {}
    for turn_index in range(1, n_turns + 1):
        closing = turn_index == n_turns
        label: list[tuple[str, str]] = []
        # The opening turn always states a constraint so every dialogue
        # carries at least one annotation.
        if not closing and (turn_index == 1 or rng.random() >= blank_turn_prob):
            used_values = {v for _, v in label}
            n_new = int(rng.integers(1, 4))
            while slot_pool and len(label) < n_new:
                domain, slot = slot_pool.pop()
                options = [
                    v for v in SLOT_VALUES[domain][slot] if v not in used_values
                ]
                if not options:
                    continue
                value = options[int(rng.integers(len(options)))]
                label.append((f"{domain}-{slot}", value))
                used_values.add(value)
        belief = dict(belief)
        for slot, value in label:
            belief[slot] = value
        if closing:
            user_text = _CLOSING_USER_LINES[int(rng.integers(len(_CLOSING_USER_LINES)))]
        elif label:
            user_text = f"i am looking for {_mention([v for _, v in label])} ."
        else:
            user_text = "can you tell me more about that ?"
        system_text = (
            "" if turn_index == 1 else _SYSTEM_LINES[int(rng.integers(len(_SYSTEM_LINES)))]
        )
        turns.append(
            DialogueTurn(
                turn_index=turn_index,
                system=Utterance(SPEAKER_SYSTEM, system_text),
                user=Utterance(SPEAKER_USER, user_text),
                gold_state=dict(belief),
            )
        )
    dialogue = Dialogue(
        dialogue_id=dialogue_id,
        turns=tuple(turns),
        domains=frozenset(
            slot.split("-", 1)[0] for turn in turns for slot in (turn.gold_state or {})
        )
        or frozenset(domains[:1]),
    )
    return derive_turn_labels(dialogue)


def synthetic_corpus(
    n_dialogues: int, seed: int = 0, max_turns: int = 7, prefix: str = "SYN"
) -> list[Dialogue]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 424242]))
    return [
        synthetic_dialogue(f"{prefix}{i:05d}", rng, max_turns=max_turns)
        for i in range(n_dialogues)
    ]


def _metadata_for(state: dict[str, str]) -> dict:
    metadata: dict = {}
    for domain_slot, value in state.items():
        domain, slot = domain_slot.split("-", 1)
        entry = metadata.setdefault(
            domain, {"book": {"booked": []}, "semi": {}}
        )
        entry["semi"][slot] = value
    return metadata


def write_raw_corpus(
    root: str | Path,
    train: Iterable[Dialogue],
    valid: Iterable[Dialogue],
    test: Iterable[Dialogue],
) -> Path:
    """Write dialogues in the raw distribution layout under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    data: dict = {}
    valid_ids: list[str] = []
    test_ids: list[str] = []
    for portion, dialogues in (("train", train), ("valid", valid), ("test", test)):
        for dialogue in dialogues:
            # The log alternates user/system entries; the system entry
            # closing turn t carries turn t's cumulative state and speaks
            # the utterance heard at the top of turn t+1.
            log_entries: list[dict] = []
            turns = dialogue.turns
            for idx, turn in enumerate(turns):
                log_entries.append({"text": turn.user.text, "metadata": {}})
                reply = (
                    turns[idx + 1].system.text
                    if idx + 1 < len(turns)
                    else "thank you for using our system ."
                )
                log_entries.append(
                    {
                        "text": reply,
                        "metadata": _metadata_for(dict(turn.gold_state or {})),
                    }
                )
            data[f"{dialogue.dialogue_id}.json"] = {
                "goal": {domain: {} for domain in sorted(dialogue.domains)},
                "log": log_entries,
            }
            if portion == "valid":
                valid_ids.append(f"{dialogue.dialogue_id}.json")
            elif portion == "test":
                test_ids.append(f"{dialogue.dialogue_id}.json")
    atomic_write_text(root / "data.json", json.dumps(data, ensure_ascii=False))
    atomic_write_text(root / "valListFile.json", "\n".join(valid_ids) + "\n")
    atomic_write_text(root / "testListFile.json", "\n".join(test_ids) + "\n")
    return root
