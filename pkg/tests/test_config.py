from __future__ import annotations

import pytest

from dstpipe.backends import NoiseProfile
from dstpipe.config import (
    BackendConfig,
    ConfigError,
    RunConfig,
    TrainerConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
)


def test_defaults_without_file() -> None:
    config = load_config(None)
    assert config.backend.kind == "oracle"
    assert config.selftrain.threshold == 0.98
    assert config.selftrain.max_iterations == 2
    assert config.sampler.n_incomplete == 2
    assert config.split.ratio == 1.0


def test_round_trip_through_yaml(tmp_path) -> None:
    config = config_from_dict(
        {
            "backend": {"kind": "remote", "endpoint": "http://host:8000", "timeout": 5},
            "selftrain": {"threshold": 0.9, "max_iterations": 3},
            "sampler": {"seed": 42},
            "trainer": {"command": ["train.sh"]},
            "student_profiles": [{"drop_prob": 0.3, "seed": 1}],
        }
    )
    path = tmp_path / "run.yaml"
    dump_config(config, path)
    reloaded = load_config(path)
    assert reloaded == config
    assert config_to_dict(reloaded) == config_to_dict(config)


def test_unknown_top_level_key_rejected() -> None:
    with pytest.raises(ConfigError, match="unknown top-level keys.*selfteach"):
        config_from_dict({"selfteach": {}})


def test_unknown_nested_key_rejected() -> None:
    with pytest.raises(ConfigError, match="selftrain: unknown keys.*tresh"):
        config_from_dict({"selftrain": {"tresh": 0.9}})


def test_invalid_nested_value_rejected() -> None:
    with pytest.raises(ConfigError, match="selftrain"):
        config_from_dict({"selftrain": {"threshold": 2.0}})


def test_section_must_be_mapping() -> None:
    with pytest.raises(ConfigError, match="expected a mapping"):
        config_from_dict({"backend": ["oracle"]})


def test_student_profiles_validated_eagerly() -> None:
    with pytest.raises(ConfigError, match=r"student_profiles\[1\]"):
        config_from_dict(
            {"student_profiles": [{"drop_prob": 0.1}, {"drop_prob": 7.0}]}
        )
    with pytest.raises(ConfigError, match="expected a list"):
        config_from_dict({"student_profiles": {"drop_prob": 0.1}})


def test_trainer_command_xor_endpoint() -> None:
    with pytest.raises(ConfigError, match="not both"):
        config_from_dict(
            {"trainer": {"command": ["x"], "endpoint": "http://host"}}
        )
    TrainerConfig(command=["x"])
    TrainerConfig(endpoint="http://host")


def test_remote_descriptor_requires_endpoint(monkeypatch) -> None:
    monkeypatch.delenv("DSTPIPE_ENDPOINT", raising=False)
    config = BackendConfig(kind="remote")
    with pytest.raises(ConfigError, match="endpoint"):
        config.descriptor()


def test_environment_endpoint_override(monkeypatch) -> None:
    config = BackendConfig(kind="remote", endpoint="http://configured:1")
    monkeypatch.setenv("DSTPIPE_ENDPOINT", "http://overridden:2")
    assert config.descriptor().endpoint == "http://overridden:2"
    monkeypatch.delenv("DSTPIPE_ENDPOINT")
    assert config.descriptor().endpoint == "http://configured:1"


def test_noise_profile_built_from_config() -> None:
    config = BackendConfig(kind="noisy", profile={"drop_prob": 0.25, "seed": 3})
    descriptor = config.descriptor()
    assert descriptor.profile == NoiseProfile(drop_prob=0.25, seed=3)
    bad = BackendConfig(kind="noisy", profile={"drop_prop": 0.25})
    with pytest.raises(ConfigError, match="backend.profile"):
        bad.descriptor()


def test_estimator_and_slot_backends_fall_back(monkeypatch) -> None:
    monkeypatch.delenv("DSTPIPE_ENDPOINT", raising=False)
    config = config_from_dict(
        {
            "backend": {"kind": "oracle"},
            "slot_backend": {"kind": "noisy", "profile": {"flip_verdict_prob": 0.1}},
        }
    )
    assert config.estimator_descriptor().kind == "oracle"
    assert config.slot_descriptor().kind == "noisy"


def test_missing_file_raises(tmp_path) -> None:
    with pytest.raises(ConfigError, match="missing config file"):
        load_config(tmp_path / "nope.yaml")


def test_unparseable_yaml_raises(tmp_path) -> None:
    path = tmp_path / "broken.yaml"
    path.write_text("backend: [unclosed\n")
    with pytest.raises(ConfigError, match="unparseable"):
        load_config(path)


def test_empty_file_gives_defaults(tmp_path) -> None:
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == RunConfig()
