"""Slot-value and utterance normalization shared across the pipeline.

All values that enter a belief state, a turn label, or a value set go
through :func:`normalize_value` exactly once, at the boundary where raw
annotation or model output enters the system.  Comparisons elsewhere can
then rely on plain string equality.
"""
from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources

# Annotation markers that mean "this slot has no value".  Normalizing one
# of these yields the empty string; callers treat that as slot-absent.
ABSENT_MARKERS = frozenset({"", "none", "not mentioned"})

_WHITESPACE = re.compile(r"\s+")


@lru_cache(maxsize=1)
def _substitutions() -> tuple[dict[str, str], dict[str, str]]:
    raw = resources.files("dstpipe.data").joinpath("normalization_map.json").read_text()
    table = json.loads(raw)
    return dict(table.get("replace", {})), dict(table.get("canonical", {}))


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace runs; used for utterances."""
    return _WHITESPACE.sub(" ", text.lower()).strip()


def normalize_value(value: str) -> str:
    """Canonicalize one slot value.

    Lowercases, trims, collapses whitespace, keeps the first alternative of
    a pipe-separated annotation, then applies the fixed substitution table.
    Absent markers normalize to the empty string.
    """
    out = _WHITESPACE.sub(" ", value.lower()).strip()
    if "|" in out:
        # annotations occasionally carry alternatives like "09:00|9:00"
        parts = [p.strip() for p in out.split("|")]
        out = next((p for p in parts if p and p not in ABSENT_MARKERS), "")
    replace, canonical = _substitutions()
    for src, dst in replace.items():
        if src in out:
            out = out.replace(src, dst)
    out = canonical.get(out, out)
    out = _WHITESPACE.sub(" ", out).strip()
    if out in ABSENT_MARKERS:
        return ""
    return out


def is_absent(value: str) -> bool:
    """True when a raw annotation value means the slot is not set."""
    return normalize_value(value) == ""
