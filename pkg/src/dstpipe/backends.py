"""Model backends: remote HTTP service, gold oracle, and noisy oracle.

The pipeline only ever talks to a backend through three operations:
generate a value set for a turn, score a candidate value set, and name
the domain-slot for a value.  The remote backend speaks the serving wire
protocol; the oracle answers from gold labels; the noisy backend wraps
the oracle with a parameterized error model so selection and
self-training behavior can be tested without any model in the loop.

Noise is drawn from a PCG64 generator keyed by (seed, operation stream,
dialogue id, turn index), so outputs for a turn are identical across
runs and independent of iteration order.
"""
from __future__ import annotations

import logging
import threading
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .corpus import Dialogue, derive_turn_labels
from .state import decode_values, dedupe_values
from .prompting import EstimatorInput, GeneratorInput, SlotPromptPair

log = logging.getLogger(__name__)

UNKNOWN_SLOT = "unknown-slot"
SIMPLEX_TOLERANCE = 1e-6

# Environment variable honored by config loading as an endpoint override.
ENDPOINT_ENV = "DSTPIPE_ENDPOINT"

# Per-operation stream tags keep the keyed noise draws independent.
STREAM_VALUES = 0
STREAM_ESTIMATE = 1
STREAM_SLOT = 2
STREAM_SAMPLER = 3

LABEL_CORRECT = 0
LABEL_INCOMPLETE = 1
LABEL_INCORRECT = 2
LABEL_NAMES = ("correct", "incomplete", "incorrect")


class BackendError(RuntimeError):
    """A backend call failed after retries; carries the turn reference."""


class ProtocolError(BackendError):
    """The remote service answered with a malformed payload."""


@dataclass(frozen=True)
class TurnRef:
    dialogue_id: str
    turn_index: int


@dataclass(frozen=True)
class EstimatorVerdict:
    """Three-way score over {correct, incomplete, incorrect}."""

    p_correct: float
    p_incomplete: float
    p_incorrect: float

    def __post_init__(self) -> None:
        probs = self.as_tuple()
        if any(p < -SIMPLEX_TOLERANCE or p > 1 + SIMPLEX_TOLERANCE for p in probs):
            raise ValueError(f"probabilities out of range: {probs}")
        if abs(sum(probs) - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"probabilities must sum to 1, got {sum(probs)!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_correct, self.p_incomplete, self.p_incorrect)

    @property
    def argmax(self) -> int:
        probs = self.as_tuple()
        return max(range(3), key=lambda i: probs[i])

    @classmethod
    def from_label(cls, label: int) -> "EstimatorVerdict":
        probs = [0.0, 0.0, 0.0]
        probs[label] = 1.0
        return cls(*probs)


@dataclass(frozen=True)
class NoiseProfile:
    """Error model for the noisy backend.

    drop_prob: each gold value is independently omitted.
    inject_prob: one spurious value from earlier turns is appended.
    flip_verdict_prob: the estimator's argmax class is flipped; the slot
    answer is replaced with a wrong slot at the same rate.
    """

    drop_prob: float = 0.0
    inject_prob: float = 0.0
    flip_verdict_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("drop_prob", "inject_prob", "flip_verdict_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    endpoint: str | None = None
    profile: NoiseProfile | None = None
    timeout: float = 30.0
    max_concurrency: int = 8

    def __post_init__(self) -> None:
        if self.kind not in ("remote", "oracle", "noisy"):
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@dataclass(frozen=True)
class BackendStatus:
    healthy: bool
    detail: str


class ValueBackend(Protocol):
    def generate_values(self, input: GeneratorInput, context: TurnRef) -> list[str]:
        ...

    def health_check(self) -> BackendStatus:
        ...


class EstimatorBackend(Protocol):
    def estimate_values(
        self, input: EstimatorInput, context: TurnRef
    ) -> EstimatorVerdict:
        ...

    def health_check(self) -> BackendStatus:
        ...


class SlotBackend(Protocol):
    def generate_slot(self, input: SlotPromptPair, context: TurnRef) -> str:
        ...

    def health_check(self) -> BackendStatus:
        ...


def keyed_rng(
    seed: int, stream: int, ref: TurnRef, extra: int = 0
) -> np.random.Generator:
    """Generator keyed by turn so noise is independent of call order."""
    key = [seed, stream, zlib.crc32(ref.dialogue_id.encode()), ref.turn_index, extra]
    return np.random.default_rng(np.random.SeedSequence(key))


def _candidate_key(values: Sequence[str]) -> int:
    return zlib.crc32("\x1f".join(values).encode())


def classify_candidate(candidate: Iterable[str], gold: Iterable[str]) -> int:
    """Gold three-way judgment of a candidate value set.

    Exact set match is correct; a proper subset (missing gold values,
    nothing wrong) is incomplete; anything containing a non-gold value is
    incorrect, including candidates that are both missing and wrong.
    """
    cand, ref = set(candidate), set(gold)
    if cand == ref:
        return LABEL_CORRECT
    if cand < ref:
        return LABEL_INCOMPLETE
    return LABEL_INCORRECT


@dataclass(frozen=True)
class GoldTurn:
    values: tuple[str, ...]
    turn_label: tuple[tuple[str, str], ...]
    prior_values: tuple[str, ...]


class GoldIndex:
    """Per-turn gold lookup built from a labeled corpus."""

    def __init__(self, dialogues: Iterable[Dialogue]):
        self._turns: dict[TurnRef, GoldTurn] = {}
        slots: set[str] = set()
        for dialogue in dialogues:
            if any(t.gold_turn_label is None for t in dialogue.turns):
                dialogue = derive_turn_labels(dialogue)
            prior: list[str] = []
            for turn in dialogue.turns:
                label = turn.gold_turn_label or ()
                values = dedupe_values(v for _, v in label)
                slots.update(s for s, _ in label)
                self._turns[TurnRef(dialogue.dialogue_id, turn.turn_index)] = GoldTurn(
                    values=tuple(values),
                    turn_label=tuple(label),
                    prior_values=tuple(prior),
                )
                prior = dedupe_values(prior + values)
        self.slot_schema: tuple[str, ...] = tuple(sorted(slots))

    def __len__(self) -> int:
        return len(self._turns)

    def __contains__(self, ref: TurnRef) -> bool:
        return ref in self._turns

    def lookup(self, ref: TurnRef) -> GoldTurn:
        try:
            return self._turns[ref]
        except KeyError:
            raise ValueError(
                f"no gold annotation for {ref.dialogue_id} turn {ref.turn_index}"
            ) from None


class OracleBackend:
    """Answers every operation straight from gold labels."""

    def __init__(self, gold: GoldIndex):
        self._gold = gold

    def generate_values(self, input: GeneratorInput, context: TurnRef) -> list[str]:
        return list(self._gold.lookup(context).values)

    def estimate_values(
        self, input: EstimatorInput, context: TurnRef
    ) -> EstimatorVerdict:
        gold = self._gold.lookup(context)
        return EstimatorVerdict.from_label(classify_candidate(input.values, gold.values))

    def generate_slot(self, input: SlotPromptPair, context: TurnRef) -> str:
        gold = self._gold.lookup(context)
        for slot, value in gold.turn_label:
            if value == input.value:
                return slot
        return UNKNOWN_SLOT

    def health_check(self) -> BackendStatus:
        return BackendStatus(healthy=True, detail="oracle")


class NoisyBackend:
    """Oracle wrapped in the configured error model.

    Estimator confidences are shaped so that thresholding behaves like it
    does with a trained scorer: truthful verdicts draw confidence from
    [0.5, 1.0), flipped verdicts from [0.5, 0.95) so they thin out faster
    as the threshold rises, and truthful verdicts on blank candidates
    draw from [0.9, 1.0) because an empty hypothesis is trivially
    self-consistent.
    """

    def __init__(self, profile: NoiseProfile, gold: GoldIndex):
        self.profile = profile
        self._gold = gold
        self._oracle = OracleBackend(gold)

    def generate_values(self, input: GeneratorInput, context: TurnRef) -> list[str]:
        gold = self._gold.lookup(context)
        rng = keyed_rng(self.profile.seed, STREAM_VALUES, context)
        # Draw order is fixed: one uniform per gold value, then the
        # injection decision, then the injection index.
        kept = [v for v in gold.values if rng.random() >= self.profile.drop_prob]
        pool = [v for v in gold.prior_values if v not in set(gold.values)]
        if pool and rng.random() < self.profile.inject_prob:
            kept.append(pool[int(rng.integers(len(pool)))])
        return kept

    def estimate_values(
        self, input: EstimatorInput, context: TurnRef
    ) -> EstimatorVerdict:
        gold = self._gold.lookup(context)
        true_label = classify_candidate(input.values, gold.values)
        rng = keyed_rng(
            self.profile.seed,
            STREAM_ESTIMATE,
            context,
            extra=_candidate_key(input.values),
        )
        flipped = rng.random() < self.profile.flip_verdict_prob
        if flipped:
            label = int(rng.integers(2))
            if label >= true_label:
                label += 1
            confidence = 0.5 + 0.45 * rng.random()
        else:
            label = true_label
            if label == LABEL_CORRECT and not input.values:
                confidence = 0.9 + 0.1 * rng.random()
            else:
                confidence = 0.5 + 0.5 * rng.random()
        probs = [(1.0 - confidence) / 2.0] * 3
        probs[label] = confidence
        return EstimatorVerdict(*probs)

    def generate_slot(self, input: SlotPromptPair, context: TurnRef) -> str:
        answer = self._oracle.generate_slot(input, context)
        rng = keyed_rng(
            self.profile.seed,
            STREAM_SLOT,
            context,
            extra=_candidate_key([input.value]),
        )
        if rng.random() < self.profile.flip_verdict_prob:
            wrong = [s for s in self._gold.slot_schema if s != answer]
            if wrong:
                return wrong[int(rng.integers(len(wrong)))]
        return answer

    def health_check(self) -> BackendStatus:
        return BackendStatus(healthy=True, detail=f"noisy({self.profile})")


class RemoteBackend:
    """HTTP client for a model server speaking the serving protocol.

    Every call makes up to 3 attempts with exponential backoff starting
    at 500 ms, honors the per-call timeout, and holds a semaphore so at
    most ``max_concurrency`` requests are in flight.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_concurrency: int = 8,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_concurrency = max_concurrency
        self._slots = threading.Semaphore(max_concurrency)
        retry = Retry(
            total=2,
            backoff_factor=0.5,
            status_forcelist=[500, 502, 503, 504],
            allowed_methods=frozenset({"GET", "POST"}),
            raise_on_status=False,
        )
        self._session = requests.Session()
        adapter = HTTPAdapter(
            max_retries=retry, pool_maxsize=max(max_concurrency, 10)
        )
        self._session.mount("http://", adapter)
        self._session.mount("https://", adapter)

    def _post(self, path: str, payload: Mapping, context: TurnRef) -> dict:
        url = f"{self.endpoint}{path}"
        where = f"{context.dialogue_id} turn {context.turn_index}"
        try:
            with self._slots:
                response = self._session.post(url, json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise BackendError(f"{url} failed for {where}: {exc}") from exc
        if not 200 <= response.status_code < 300:
            raise BackendError(
                f"{url} returned {response.status_code} for {where}"
            )
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"{url} returned non-JSON body for {where}") from exc
        if not isinstance(body, dict):
            raise ProtocolError(f"{url} returned non-object body for {where}")
        return body

    def generate_values(self, input: GeneratorInput, context: TurnRef) -> list[str]:
        body = self._post("/v1/values", {"input": input.text}, context)
        raw = body.get("raw")
        if not isinstance(raw, str):
            raise ProtocolError(f"/v1/values missing string 'raw' field: {body}")
        return decode_values(raw)

    def estimate_values(
        self, input: EstimatorInput, context: TurnRef
    ) -> EstimatorVerdict:
        body = self._post("/v1/estimate", {"input": input.text}, context)
        try:
            verdict = EstimatorVerdict(
                p_correct=float(body["p_correct"]),
                p_incomplete=float(body["p_incomplete"]),
                p_incorrect=float(body["p_incorrect"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/v1/estimate returned invalid verdict: {body}") from exc
        return verdict

    def generate_slot(self, input: SlotPromptPair, context: TurnRef) -> str:
        body = self._post("/v1/slot", {"input": input.forward}, context)
        slot = body.get("domain_slot")
        if not isinstance(slot, str) or not slot.strip():
            raise ProtocolError(f"/v1/slot missing 'domain_slot' field: {body}")
        return slot.strip()

    def health_check(self) -> BackendStatus:
        url = f"{self.endpoint}/v1/health"
        try:
            response = self._session.get(url, timeout=self.timeout)
        except requests.RequestException as exc:
            return BackendStatus(healthy=False, detail=f"unreachable: {exc}")
        if response.status_code != 200:
            return BackendStatus(
                healthy=False, detail=f"status {response.status_code}"
            )
        try:
            body = response.json()
        except ValueError:
            return BackendStatus(healthy=False, detail="non-JSON health body")
        if body.get("status") != "ok":
            return BackendStatus(healthy=False, detail=f"unhealthy: {body}")
        return BackendStatus(healthy=True, detail=str(body.get("model", "remote")))


def create_backend(
    descriptor: BackendDescriptor, gold: GoldIndex | None = None
):
    """Instantiate a backend from its descriptor.

    Oracle and noisy kinds need the gold index; the remote kind needs
    only its endpoint.
    """
    if descriptor.kind == "remote":
        assert descriptor.endpoint is not None
        return RemoteBackend(
            endpoint=descriptor.endpoint,
            timeout=descriptor.timeout,
            max_concurrency=descriptor.max_concurrency,
        )
    if gold is None:
        raise ValueError(f"{descriptor.kind} backend requires gold annotations")
    if descriptor.kind == "oracle":
        return OracleBackend(gold)
    return NoisyBackend(descriptor.profile or NoiseProfile(), gold)
