"""Estimator-filtered self-training over an unlabeled dialogue pool.

Each iteration the current teacher pseudo-labels the remaining pool, the
estimator scores every candidate value set, and candidates whose
p_correct clears the threshold move permanently from the pool into the
training set.  A trainer hook (external command or HTTP call) retrains
the student on the merged data; the student's validation TLA decides
whether another iteration runs.  The loop stops when TLA fails to
improve or the iteration budget is spent.

All iteration artifacts are staged in a temporary directory and renamed
into place only after the trainer hook succeeds, so a failed iteration
leaves previously committed state byte-identical.
"""
from __future__ import annotations

import json
import logging
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import requests

from .backends import (
    BackendError,
    EstimatorBackend,
    EstimatorVerdict,
    TurnRef,
    ValueBackend,
)
from .corpus import Dialogue, DialogueTurn
from .pipeline import map_concurrently, validation_tla
from .prompting import (
    PromptConfig,
    build_estimator_input,
    build_generator_input,
)
from .records import atomic_write_text, generator_record, write_jsonl
from .state import encode_values

log = logging.getLogger(__name__)

STOP_NO_IMPROVEMENT = "no-improvement"
STOP_MAX_ITERATIONS = "max-iterations"


class SelfTrainError(RuntimeError):
    """Aborted iteration: too many failures or broken preconditions."""


class TrainerHookError(RuntimeError):
    """The trainer hook exited nonzero or answered with an error."""


@dataclass(frozen=True)
class SelfTrainConfig:
    threshold: float = 0.98
    max_iterations: int = 2
    blank_rate_guard: float = 1.5
    failure_rate_limit: float = 0.1
    estimator_retrain: str = "once"
    max_workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.blank_rate_guard <= 0:
            raise ValueError("blank_rate_guard must be positive")
        if not 0.0 <= self.failure_rate_limit < 1.0:
            raise ValueError("failure_rate_limit must be in [0, 1)")
        if self.estimator_retrain not in ("once", "each"):
            raise ValueError("estimator_retrain must be 'once' or 'each'")


@dataclass
class PseudoExample:
    ref: TurnRef
    teacher_values: tuple[str, ...]
    verdict: EstimatorVerdict | None = None
    selected: bool | None = None
    iteration: int = 0

    def to_record(self) -> dict:
        record: dict = {
            "dialogue_id": self.ref.dialogue_id,
            "turn_index": self.ref.turn_index,
            "values": list(self.teacher_values),
            "iteration": self.iteration,
            "selected": bool(self.selected),
        }
        if self.verdict is not None:
            record["p_correct"] = self.verdict.p_correct
            record["p_incomplete"] = self.verdict.p_incomplete
            record["p_incorrect"] = self.verdict.p_incorrect
        return record


@dataclass
class IterationReport:
    iteration: int
    n_pseudo_labeled: int
    n_selected: int
    n_failed: int
    blank_rate_selected: float
    validation_tla: float
    stopped: bool = False
    reason: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_pseudo_labeled": self.n_pseudo_labeled,
            "n_selected": self.n_selected,
            "n_failed": self.n_failed,
            "blank_rate_selected": self.blank_rate_selected,
            "validation_tla": self.validation_tla,
            "stopped": self.stopped,
            "reason": self.reason,
            "warnings": list(self.warnings),
        }


class CommandTrainerHook:
    """Runs a training command with the standard argument triple."""

    def __init__(self, argv: Sequence[str], timeout: float | None = None):
        if not argv:
            raise ValueError("trainer command must be non-empty")
        self.argv = list(argv)
        self.timeout = timeout

    def run(self, task: str, train_file: Path, out_dir: Path) -> None:
        argv = self.argv + [
            "--task",
            task,
            "--train-file",
            str(train_file),
            "--out-dir",
            str(out_dir),
        ]
        result = subprocess.run(
            argv, capture_output=True, text=True, timeout=self.timeout
        )
        if result.returncode != 0:
            raise TrainerHookError(
                f"trainer command exited {result.returncode}: "
                f"{result.stderr.strip()[:500]}"
            )


class HttpTrainerHook:
    """POSTs a train job to a serving sidecar."""

    def __init__(self, endpoint: str, timeout: float = 3600.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def run(self, task: str, train_file: Path, out_dir: Path) -> None:
        url = f"{self.endpoint}/v1/train"
        payload = {
            "task": task,
            "train_file": str(train_file),
            "out_dir": str(out_dir),
        }
        try:
            response = requests.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TrainerHookError(f"{url} failed: {exc}") from exc
        if not 200 <= response.status_code < 300:
            raise TrainerHookError(
                f"{url} returned {response.status_code}: {response.text[:500]}"
            )


class TurnLookup:
    """Dialogue context access by turn reference."""

    def __init__(self, dialogues: Iterable[Dialogue]):
        self._by_id: dict[str, Dialogue] = {}
        for dialogue in dialogues:
            if dialogue.dialogue_id in self._by_id:
                raise ValueError(f"duplicate dialogue id: {dialogue.dialogue_id}")
            self._by_id[dialogue.dialogue_id] = dialogue

    def context(
        self, ref: TurnRef
    ) -> tuple[tuple[DialogueTurn, ...], DialogueTurn]:
        dialogue = self._by_id[ref.dialogue_id]
        idx = ref.turn_index - 1
        if not 0 <= idx < len(dialogue.turns):
            raise ValueError(f"turn {ref.turn_index} out of range for {ref.dialogue_id}")
        return dialogue.turns[:idx], dialogue.turns[idx]


@dataclass
class SelfTrainState:
    lookup: TurnLookup
    train_records: list[dict]
    pool: tuple[TurnRef, ...]
    seed_blank_rate: float
    iteration: int = 0


def make_initial_state(
    labeled: Sequence[Dialogue],
    unlabeled: Sequence[Dialogue],
    prompt_config: PromptConfig,
) -> SelfTrainState:
    """Seed training records from gold labels; pool from unlabeled turns."""
    train_records: list[dict] = []
    blanks = 0
    total = 0
    for dialogue in labeled:
        for i, turn in enumerate(dialogue.turns):
            if turn.gold_turn_label is None:
                raise ValueError(
                    f"dialogue {dialogue.dialogue_id}: labeled pool requires "
                    "derived turn labels"
                )
            values = [v for _, v in turn.gold_turn_label]
            built = build_generator_input(dialogue.turns[:i], turn, prompt_config)
            train_records.append(generator_record(built.text, encode_values(values)))
            total += 1
            blanks += 0 if values else 1
    pool = tuple(
        TurnRef(d.dialogue_id, t.turn_index) for d in unlabeled for t in d.turns
    )
    return SelfTrainState(
        lookup=TurnLookup(list(labeled) + list(unlabeled)),
        train_records=train_records,
        pool=pool,
        seed_blank_rate=blanks / total if total else 0.0,
    )


def pseudo_label(
    teacher: ValueBackend,
    pool: Sequence[TurnRef],
    lookup: TurnLookup,
    prompt_config: PromptConfig,
    iteration: int,
    failure_rate_limit: float = 0.1,
    max_workers: int = 1,
) -> tuple[list[PseudoExample], int]:
    """Teacher-label every pool turn, isolating per-turn failures."""

    def one(ref: TurnRef) -> PseudoExample | None:
        history, current = lookup.context(ref)
        generator_input = build_generator_input(history, current, prompt_config)
        try:
            values = teacher.generate_values(generator_input, ref)
        except BackendError as exc:
            log.warning("pseudo-labeling failed for %s: %s", ref, exc)
            return None
        return PseudoExample(
            ref=ref, teacher_values=tuple(values), iteration=iteration
        )

    results = map_concurrently(one, pool, max_workers=max_workers)
    examples = [r for r in results if r is not None]
    n_failed = len(pool) - len(examples)
    if pool and n_failed > failure_rate_limit * len(pool):
        raise SelfTrainError(
            f"pseudo-labeling failed on {n_failed}/{len(pool)} turns, "
            f"over the {failure_rate_limit:.0%} limit"
        )
    return examples, n_failed


def score_and_filter(
    examples: Sequence[PseudoExample],
    estimator: EstimatorBackend,
    lookup: TurnLookup,
    prompt_config: PromptConfig,
    threshold: float,
    seed_blank_rate: float,
    blank_rate_guard: float = 1.5,
    failure_rate_limit: float = 0.1,
    max_workers: int = 1,
) -> tuple[list[PseudoExample], list[PseudoExample], list[str]]:
    """Score candidates and keep those with p_correct >= threshold."""

    def one(example: PseudoExample) -> PseudoExample:
        history, current = lookup.context(example.ref)
        estimator_input = build_estimator_input(
            history, current, list(example.teacher_values), prompt_config
        )
        try:
            example.verdict = estimator.estimate_values(estimator_input, example.ref)
        except BackendError as exc:
            log.warning("scoring failed for %s: %s", example.ref, exc)
            example.verdict = None
        example.selected = (
            example.verdict is not None and example.verdict.p_correct >= threshold
        )
        return example

    scored = map_concurrently(one, examples, max_workers=max_workers)
    n_failed = sum(1 for e in scored if e.verdict is None)
    if examples and n_failed > failure_rate_limit * len(examples):
        raise SelfTrainError(
            f"scoring failed on {n_failed}/{len(examples)} candidates, "
            f"over the {failure_rate_limit:.0%} limit"
        )
    selected = [e for e in scored if e.selected]
    rejected = [e for e in scored if not e.selected]
    warnings: list[str] = []
    if selected:
        blank_rate = sum(1 for e in selected if not e.teacher_values) / len(selected)
        if blank_rate > blank_rate_guard * seed_blank_rate:
            warnings.append(
                f"blank rate among selected ({blank_rate:.3f}) exceeds "
                f"{blank_rate_guard} x seed rate ({seed_blank_rate:.3f})"
            )
            log.warning("%s", warnings[-1])
    return selected, rejected, warnings


def _iteration_dir(work_dir: Path, iteration: int) -> Path:
    return work_dir / f"iter_{iteration:03d}"


def run_iteration(
    state: SelfTrainState,
    iteration: int,
    teacher: ValueBackend,
    estimator: EstimatorBackend,
    hook: CommandTrainerHook | HttpTrainerHook | None,
    evaluate_student: Callable[[], float],
    config: SelfTrainConfig,
    work_dir: Path,
    prompt_config: PromptConfig | None = None,
) -> IterationReport:
    """One teach/score/select/train round; commits state only on success."""
    work_dir = Path(work_dir)
    prompt_config = prompt_config or PromptConfig()
    examples, n_failed = pseudo_label(
        teacher,
        state.pool,
        state.lookup,
        prompt_config,
        iteration,
        failure_rate_limit=config.failure_rate_limit,
        max_workers=config.max_workers,
    )
    selected, rejected, warnings = score_and_filter(
        examples,
        estimator,
        state.lookup,
        prompt_config,
        config.threshold,
        state.seed_blank_rate,
        blank_rate_guard=config.blank_rate_guard,
        failure_rate_limit=config.failure_rate_limit,
        max_workers=config.max_workers,
    )

    new_records = list(state.train_records)
    for example in selected:
        history, current = state.lookup.context(example.ref)
        built = build_generator_input(history, current, prompt_config)
        new_records.append(
            generator_record(built.text, encode_values(list(example.teacher_values)))
        )
    selected_refs = {e.ref for e in selected}
    new_pool = tuple(ref for ref in state.pool if ref not in selected_refs)

    # Selection moves examples, never copies or drops them.
    assert len(new_records) - len(state.train_records) == len(selected)
    assert len(state.pool) - len(new_pool) == len(selected)

    staging = work_dir / f"iter_{iteration:03d}.tmp"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    model_dir = work_dir / "models" / f"iter_{iteration:03d}"
    try:
        write_jsonl(
            staging / "selection.jsonl",
            [e.to_record() for e in selected + rejected],
        )
        write_jsonl(staging / "train_values.jsonl", new_records)
        write_jsonl(
            staging / "pool.jsonl",
            [{"dialogue_id": r.dialogue_id, "turn_index": r.turn_index} for r in new_pool],
        )
        if hook is not None:
            hook.run("values", staging / "train_values.jsonl", model_dir)
        tla_value = evaluate_student()
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        shutil.rmtree(model_dir, ignore_errors=True)
        raise

    report = IterationReport(
        iteration=iteration,
        n_pseudo_labeled=len(examples),
        n_selected=len(selected),
        n_failed=n_failed,
        blank_rate_selected=(
            sum(1 for e in selected if not e.teacher_values) / len(selected)
            if selected
            else 0.0
        ),
        validation_tla=tla_value,
        warnings=warnings,
    )
    atomic_write_text(
        staging / "report.json",
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
    )
    final_dir = _iteration_dir(work_dir, iteration)
    if final_dir.exists():
        shutil.rmtree(final_dir)
    staging.rename(final_dir)

    state.train_records = new_records
    state.pool = new_pool
    state.iteration = iteration
    return report


def run_self_training(
    labeled: Sequence[Dialogue],
    unlabeled: Sequence[Dialogue],
    valid: Sequence[Dialogue],
    students: Callable[[int], ValueBackend] | Sequence[ValueBackend],
    estimator: EstimatorBackend,
    hook: CommandTrainerHook | HttpTrainerHook | None,
    config: SelfTrainConfig,
    work_dir: Path,
    prompt_config: PromptConfig | None = None,
    estimator_train_file: Path | None = None,
) -> list[IterationReport]:
    """Run the full loop and return one report per executed iteration.

    ``students`` maps iteration index to the value backend embodying the
    student trained at that point; index 0 is the seed model, which
    teaches iteration 1.  A remote deployment passes a constant backend
    whose server swaps checkpoints when the trainer hook completes.
    """
    prompt_config = prompt_config or PromptConfig()
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)

    if callable(students):
        provider = students
    else:
        roster = list(students)

        def provider(iteration: int) -> ValueBackend:
            return roster[min(iteration, len(roster) - 1)]

    state = make_initial_state(labeled, unlabeled, prompt_config)
    seed_dir = _iteration_dir(work_dir, 0)
    seed_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(seed_dir / "train_values.jsonl", state.train_records)
    write_jsonl(
        seed_dir / "pool.jsonl",
        [{"dialogue_id": r.dialogue_id, "turn_index": r.turn_index} for r in state.pool],
    )

    if hook is not None and estimator_train_file is not None:
        hook.run("estimator", Path(estimator_train_file), work_dir / "models" / "estimator")

    previous_tla = validation_tla(
        valid, provider(0), prompt_config, max_workers=config.max_workers
    )
    log.info("baseline validation TLA %.4f", previous_tla)

    reports: list[IterationReport] = []
    for iteration in range(1, config.max_iterations + 1):
        if (
            hook is not None
            and estimator_train_file is not None
            and config.estimator_retrain == "each"
            and iteration > 1
        ):
            hook.run(
                "estimator",
                Path(estimator_train_file),
                work_dir / "models" / f"estimator_iter_{iteration:03d}",
            )
        report = run_iteration(
            state,
            iteration,
            teacher=provider(iteration - 1),
            estimator=estimator,
            hook=hook,
            evaluate_student=lambda i=iteration: validation_tla(
                valid, provider(i), prompt_config, max_workers=config.max_workers
            ),
            config=config,
            work_dir=work_dir,
            prompt_config=prompt_config,
        )
        reports.append(report)
        if report.validation_tla <= previous_tla:
            report.stopped = True
            report.reason = STOP_NO_IMPROVEMENT
        elif iteration == config.max_iterations:
            report.stopped = True
            report.reason = STOP_MAX_ITERATIONS
        if report.stopped:
            atomic_write_text(
                _iteration_dir(work_dir, iteration) / "report.json",
                json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
            )
            log.info(
                "stopping after iteration %d (%s): TLA %.4f vs %.4f",
                iteration,
                report.reason,
                report.validation_tla,
                previous_tla,
            )
            break
        atomic_write_text(
            _iteration_dir(work_dir, iteration) / "report.json",
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
        )
        previous_tla = report.validation_tla
    return reports
