"""Evaluation metrics: turn-level accuracy, joint goal accuracy, and F1.

Turn-level accuracy (TLA) credits a turn when the predicted value set
equals the gold value set as sets.  Joint goal accuracy (JGA) credits a
turn when the entire accumulated belief state matches gold exactly.
Both are computed over every turn of every dialogue; inputs are
normalized defensively so the metrics are invariant to value spelling
variants covered by the normalization table.  No ordering between the
two is assumed anywhere: value-set agreement and full-state agreement
are different events.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .normalize import normalize_value

F1_CLASS_NAMES = ("correct", "incomplete", "incorrect")


@dataclass(frozen=True)
class EvalResult:
    metric: str
    value: float
    n: int
    per_dialogue: Mapping[str, float] | None = None
    extra: Mapping[str, float] = field(default_factory=dict)


def _norm_values(values: Sequence[str]) -> frozenset[str]:
    return frozenset(filter(None, (normalize_value(v) for v in values)))


def _norm_state(state: Mapping[str, str]) -> dict[str, str]:
    return {slot: normalize_value(value) for slot, value in state.items()}


def tla(
    predicted: Sequence[Sequence[str]], gold: Sequence[Sequence[str]]
) -> EvalResult:
    """Fraction of turns whose predicted value set equals gold."""
    if len(predicted) != len(gold):
        raise ValueError(
            f"prediction/gold length mismatch: {len(predicted)} vs {len(gold)}"
        )
    hits = sum(
        1 for p, g in zip(predicted, gold) if _norm_values(p) == _norm_values(g)
    )
    n = len(gold)
    return EvalResult(metric="tla", value=hits / n if n else 0.0, n=n)


def jga(
    predicted: Mapping[str, Sequence[Mapping[str, str]]],
    gold: Mapping[str, Sequence[Mapping[str, str]]],
) -> EvalResult:
    """Fraction of turns whose full belief state matches gold exactly.

    Inputs map dialogue id to the per-turn state sequence; the two maps
    must cover the same dialogues with aligned turn counts.
    """
    if set(predicted) != set(gold):
        missing = set(predicted) ^ set(gold)
        raise ValueError(f"prediction/gold dialogue mismatch: {sorted(missing)[:3]}")
    hits = 0
    total = 0
    per_dialogue: dict[str, float] = {}
    for dialogue_id in gold:
        p_states, g_states = predicted[dialogue_id], gold[dialogue_id]
        if len(p_states) != len(g_states):
            raise ValueError(
                f"dialogue {dialogue_id}: turn count mismatch "
                f"{len(p_states)} vs {len(g_states)}"
            )
        d_hits = sum(
            1
            for p, g in zip(p_states, g_states)
            if _norm_state(p) == _norm_state(g)
        )
        per_dialogue[dialogue_id] = d_hits / len(g_states) if g_states else 1.0
        hits += d_hits
        total += len(g_states)
    return EvalResult(
        metric="jga",
        value=hits / total if total else 0.0,
        n=total,
        per_dialogue=per_dialogue,
    )


def per_domain_jga(
    predicted: Mapping[str, Sequence[Mapping[str, str]]],
    gold: Mapping[str, Sequence[Mapping[str, str]]],
) -> dict[str, EvalResult]:
    """JGA restricted to each domain's slots separately."""
    domains = {
        slot.split("-", 1)[0]
        for states in gold.values()
        for state in states
        for slot in state
    }
    results: dict[str, EvalResult] = {}
    for domain in sorted(domains):
        prefix = f"{domain}-"

        def restrict(states):
            return [
                {s: v for s, v in state.items() if s.startswith(prefix)}
                for state in states
            ]

        results[domain] = jga(
            {d: restrict(s) for d, s in predicted.items()},
            {d: restrict(s) for d, s in gold.items()},
        )
    return results


def estimator_f1(
    predicted: Sequence[int], gold: Sequence[int]
) -> dict[str, EvalResult]:
    """Per-class precision/recall/F1 for three-way estimator labels.

    A class with no predicted and no gold examples scores 0 by
    convention, as does any class with zero true positives.
    """
    if len(predicted) != len(gold):
        raise ValueError(
            f"prediction/gold length mismatch: {len(predicted)} vs {len(gold)}"
        )
    results: dict[str, EvalResult] = {}
    for label, name in enumerate(F1_CLASS_NAMES):
        tp = sum(1 for p, g in zip(predicted, gold) if p == label and g == label)
        fp = sum(1 for p, g in zip(predicted, gold) if p == label and g != label)
        fn = sum(1 for p, g in zip(predicted, gold) if p != label and g == label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        results[f"f1_{name}"] = EvalResult(
            metric=f"f1_{name}",
            value=f1,
            n=len(gold),
            extra={"precision": precision, "recall": recall, "support": float(tp + fn)},
        )
    return results


def render_report(
    results: Sequence[EvalResult], worst_dialogues: int = 20
) -> str:
    """Plain-text metric table plus the lowest-scoring dialogues."""
    lines = [f"{'metric':<16} {'value':>8} {'n':>8}"]
    for result in results:
        lines.append(f"{result.metric:<16} {result.value:>8.4f} {result.n:>8d}")
    for result in results:
        if result.per_dialogue:
            ranked = sorted(result.per_dialogue.items(), key=lambda kv: (kv[1], kv[0]))
            lines.append("")
            lines.append(f"lowest dialogues by {result.metric}:")
            for dialogue_id, value in ranked[:worst_dialogues]:
                lines.append(f"  {dialogue_id:<24} {value:.4f}")
    return "\n".join(lines)
