"""Run configuration: strict YAML loading with environment overrides.

Unknown keys are rejected at every level so a typo fails fast instead of
silently running with defaults.  ``DSTPIPE_ENDPOINT`` overrides every
remote backend endpoint in the file, which keeps one config portable
across serving hosts.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backends import ENDPOINT_ENV, BackendDescriptor, NoiseProfile
from .negsample import SamplerConfig
from .prompting import PromptConfig
from .selftrain import SelfTrainConfig


class ConfigError(ValueError):
    """Malformed run configuration."""


def _build(cls, data: Mapping[str, Any], path: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "oracle"
    endpoint: str | None = None
    timeout: float = 30.0
    max_concurrency: int = 8
    profile: Mapping[str, Any] | None = None

    def descriptor(self) -> BackendDescriptor:
        endpoint = os.environ.get(ENDPOINT_ENV) or self.endpoint
        profile = None
        if self.profile is not None:
            profile = _build(NoiseProfile, self.profile, "backend.profile")
        try:
            return BackendDescriptor(
                kind=self.kind,
                endpoint=endpoint,
                profile=profile,
                timeout=self.timeout,
                max_concurrency=self.max_concurrency,
            )
        except ValueError as exc:
            raise ConfigError(f"backend: {exc}") from exc


@dataclass(frozen=True)
class TrainerConfig:
    command: list[str] = field(default_factory=list)
    endpoint: str | None = None
    timeout: float = 3600.0

    def __post_init__(self) -> None:
        if self.command and self.endpoint:
            raise ValueError("trainer takes a command or an endpoint, not both")


@dataclass(frozen=True)
class SplitConfig:
    ratio: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    prompt: PromptConfig = field(default_factory=PromptConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    estimator_backend: BackendConfig | None = None
    slot_backend: BackendConfig | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    selftrain: SelfTrainConfig = field(default_factory=SelfTrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    student_profiles: list[Mapping[str, Any]] = field(default_factory=list)

    def estimator_descriptor(self) -> BackendDescriptor:
        return (self.estimator_backend or self.backend).descriptor()

    def slot_descriptor(self) -> BackendDescriptor:
        return (self.slot_backend or self.backend).descriptor()


_SECTION_TYPES = {
    "prompt": PromptConfig,
    "backend": BackendConfig,
    "estimator_backend": BackendConfig,
    "slot_backend": BackendConfig,
    "sampler": SamplerConfig,
    "selftrain": SelfTrainConfig,
    "split": SplitConfig,
    "trainer": TrainerConfig,
}


def config_from_dict(data: Mapping[str, Any] | None) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - set(_SECTION_TYPES) - {"student_profiles"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, cls in _SECTION_TYPES.items():
        if key in data and data[key] is not None:
            kwargs[key] = _build(cls, data[key], key)
    profiles = data.get("student_profiles", [])
    if profiles:
        if not isinstance(profiles, list):
            raise ConfigError("student_profiles: expected a list")
        # validate each entry eagerly so a bad schedule fails at load time
        for i, entry in enumerate(profiles):
            _build(NoiseProfile, entry, f"student_profiles[{i}]")
        kwargs["student_profiles"] = [dict(p) for p in profiles]
    return RunConfig(**kwargs)


def config_to_dict(config: RunConfig) -> dict:
    data = asdict(config)
    return {k: v for k, v in data.items() if v is not None}


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"missing config file: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable config file {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(config: RunConfig, path: str | Path) -> None:
    from .records import atomic_write_text

    atomic_write_text(path, yaml.safe_dump(config_to_dict(config), sort_keys=True))
