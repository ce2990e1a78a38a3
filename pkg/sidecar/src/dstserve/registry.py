"""Checkpoint registry: loading, serving, and hot-swapping models.

The registry holds one checkpoint per task.  A successful train job
swaps the served checkpoint for that task in place; requests already
holding the old model finish against it.  Retraining always starts from
the original base checkpoint under the models root, not from the
currently served one, so each student is fine-tuned from the same
starting point on the full merged training file.

Training is serialized: one job runs at a time, later jobs wait.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path

from .decoding import (
    SLOT_MODES,
    SlotCatalog,
    classify_slot,
    constrained_slot,
    greedy_raw,
    verdict_probabilities,
)
from .models import TASKS, Checkpoint, load_checkpoint
from .training import TrainJobSpec, TrainResult, train_job

log = logging.getLogger(__name__)


class ModelUnavailable(RuntimeError):
    """The checkpoint for a task is missing or failed to load."""


@dataclass(frozen=True)
class ServeSettings:
    slot_mode: str = "constrained"
    max_source_len: int = 256
    max_new_tokens: int = 48
    train_epochs: int = 20
    train_batch_size: int = 16
    train_learning_rate: float | None = None
    inverse_weight: float = 0.1
    train_seed: int = 0

    def __post_init__(self) -> None:
        if self.slot_mode not in SLOT_MODES:
            raise ValueError(f"slot_mode must be one of {SLOT_MODES}")


class ModelRegistry:
    def __init__(self, models_root: str | Path, settings: ServeSettings | None = None):
        self.models_root = Path(models_root)
        self.settings = settings or ServeSettings()
        self._checkpoints: dict[str, Checkpoint] = {}
        self._catalogs: dict[str, SlotCatalog] = {}
        self._load_errors: dict[str, str] = {}
        self._train_lock = threading.Lock()
        for task in TASKS:
            self._try_load(task, self.models_root / task)

    def _try_load(self, task: str, path: Path) -> None:
        try:
            checkpoint = load_checkpoint(path)
            if task == "slot":
                self._catalogs[task] = SlotCatalog(
                    checkpoint.meta.get("slots") or [], checkpoint.tokenizer
                )
            self._checkpoints[task] = checkpoint
            self._load_errors.pop(task, None)
        except Exception as exc:
            self._load_errors[task] = str(exc)
            log.warning("could not load %s checkpoint from %s: %s", task, path, exc)

    def _get(self, task: str) -> Checkpoint:
        checkpoint = self._checkpoints.get(task)
        if checkpoint is None:
            raise ModelUnavailable(
                f"no {task} model loaded: {self._load_errors.get(task, 'missing')}"
            )
        return checkpoint

    def generate_raw(self, text: str) -> str:
        checkpoint = self._get("values")
        return greedy_raw(
            checkpoint.model,
            checkpoint.tokenizer,
            text,
            self.settings.max_source_len,
            self.settings.max_new_tokens,
        )

    def estimate(self, text: str) -> tuple[float, float, float]:
        checkpoint = self._get("estimator")
        return verdict_probabilities(
            checkpoint.model, checkpoint.tokenizer, text, self.settings.max_source_len
        )

    def slot(self, text: str) -> str:
        checkpoint = self._get("slot")
        catalog = self._catalogs.get("slot")
        if catalog is None:
            raise ModelUnavailable("slot model has an empty slot catalog")
        head = constrained_slot if self.settings.slot_mode == "constrained" else classify_slot
        return head(
            checkpoint.model,
            checkpoint.tokenizer,
            catalog,
            text,
            self.settings.max_source_len,
        )

    def health(self) -> tuple[bool, str, str]:
        """(healthy, served model names, detail on what is broken)."""
        names = ",".join(
            self._checkpoints[task].name for task in TASKS if task in self._checkpoints
        )
        if self._load_errors:
            detail = "; ".join(f"{task}: {err}" for task, err in sorted(self._load_errors.items()))
            return False, names, detail
        return True, names, ""

    def train(self, task: str, train_file: str | Path, out_dir: str | Path) -> TrainResult:
        """Run one job (serialized with any other) and hot-swap on success."""
        with self._train_lock:
            spec = TrainJobSpec(
                task=task,
                train_file=Path(train_file),
                out_dir=Path(out_dir),
                base_dir=self.models_root / task,
                learning_rate=self.settings.train_learning_rate,
                inverse_weight=self.settings.inverse_weight,
                epochs=self.settings.train_epochs,
                batch_size=self.settings.train_batch_size,
                max_source_len=self.settings.max_source_len,
                seed=self.settings.train_seed,
            )
            result = train_job(spec)
            self._try_load(task, Path(out_dir))
            if task in self._load_errors:
                raise ModelUnavailable(
                    f"trained checkpoint failed to load: {self._load_errors[task]}"
                )
            log.info("hot-swapped %s to %s", task, out_dir)
            return result
