from __future__ import annotations

import json
from pathlib import Path

import pytest
import yaml

from dstpipe.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from dstpipe.records import read_dialogues, read_jsonl
from dstpipe.testing import synthetic_corpus, write_raw_corpus


@pytest.fixture()
def canonical(tmp_path) -> Path:
    """Raw corpus ingested into canonical records."""
    corpus = synthetic_corpus(12, seed=9)
    raw = tmp_path / "raw"
    write_raw_corpus(raw, corpus[:8], corpus[8:10], corpus[10:12])
    out = tmp_path / "canonical"
    assert main(["ingest", "--corpus-root", str(raw), "--out-dir", str(out)]) == EXIT_OK
    return out


def _write_config(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


# --- end-to-end: ingest -> split -> negatives -> predict -> evaluate ---------


def test_ingest_writes_portions_and_manifest(canonical, capsys) -> None:
    capsys.readouterr()
    for name, count in (("train", 8), ("valid", 2), ("test", 2)):
        dialogues = read_dialogues(canonical / f"{name}.jsonl")
        assert len(dialogues) == count
        assert all(t.gold_turn_label is not None for d in dialogues for t in d.turns)
    manifest = json.loads((canonical / "manifest.json").read_text())
    assert manifest["schema_version"] == 1
    assert manifest["counts"] == {"train": 8, "valid": 2, "test": 2}


def test_split_subsamples_train_pool(canonical, tmp_path, capsys) -> None:
    out = tmp_path / "split"
    code = main(
        [
            "split",
            "--input", str(canonical / "train.jsonl"),
            "--valid", str(canonical / "valid.jsonl"),
            "--test", str(canonical / "test.jsonl"),
            "--ratio", "0.5",
            "--seed", "3",
            "--out-dir", str(out),
        ]
    )
    assert code == EXIT_OK
    train = read_dialogues(out / "train.jsonl")
    unlabeled = read_dialogues(out / "unlabeled.jsonl")
    assert len(train) == 4
    assert len(unlabeled) == 4
    assert all(t.gold_state is None for d in unlabeled for t in d.turns)
    assert {d.dialogue_id for d in train}.isdisjoint(
        d.dialogue_id for d in unlabeled
    )
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["counts"]["train"] == 4
    assert manifest["counts"]["turn_examples"] == sum(len(d.turns) for d in train)
    assert "sampled 4 of 8" in capsys.readouterr().out


def test_synth_negatives_writes_estimator_files(canonical, tmp_path) -> None:
    out = tmp_path / "negatives"
    code = main(
        [
            "synth-negatives",
            "--input", str(canonical / "train.jsonl"),
            "--seed", "5",
            "--out-dir", str(out),
        ]
    )
    assert code == EXIT_OK
    train = list(read_jsonl(out / "estimator_train.jsonl"))
    valid = list(read_jsonl(out / "estimator_valid.jsonl"))
    assert train and valid
    for record in train + valid:
        assert set(record) == {"input", "label"}
        assert record["label"] in (0, 1, 2)
    assert {r["label"] for r in train} == {0, 1, 2}


def test_predict_and_evaluate_oracle_is_exact(canonical, tmp_path, capsys) -> None:
    preds = tmp_path / "preds.jsonl"
    code = main(
        [
            "predict",
            "--input", str(canonical / "test.jsonl"),
            "--gold-records", str(canonical / "test.jsonl"),
            "--output", str(preds),
        ]
    )
    assert code == EXIT_OK
    records = list(read_jsonl(preds))
    gold = read_dialogues(canonical / "test.jsonl")
    assert len(records) == sum(len(d.turns) for d in gold)
    assert {"dialogue_id", "turn_index", "values", "turn_label", "state"} <= set(
        records[0]
    )

    report_path = tmp_path / "report.json"
    capsys.readouterr()
    code = main(
        [
            "evaluate",
            "--pred", str(preds),
            "--gold", str(canonical / "test.jsonl"),
            "--output", str(report_path),
        ]
    )
    assert code == EXIT_OK
    report = json.loads(report_path.read_text())
    assert report["tla"] == 1.0
    assert report["jga"] == 1.0
    assert set(report["per_domain_jga"].values()) == {1.0}
    out = capsys.readouterr().out
    assert "tla" in out and "jga" in out and "1.0000" in out


def test_pseudo_label_then_filter(canonical, tmp_path, capsys) -> None:
    ledger = tmp_path / "ledger.jsonl"
    code = main(
        [
            "pseudo-label",
            "--unlabeled", str(canonical / "valid.jsonl"),
            "--gold-records", str(canonical / "valid.jsonl"),
            "--output", str(ledger),
        ]
    )
    assert code == EXIT_OK
    records = list(read_jsonl(ledger))
    gold = read_dialogues(canonical / "valid.jsonl")
    assert len(records) == sum(len(d.turns) for d in gold)
    assert all("p_correct" not in r for r in records)

    out = tmp_path / "filtered"
    code = main(
        [
            "filter",
            "--ledger", str(ledger),
            "--threshold", "0.98",
            "--config", str(_write_config(tmp_path / "c.yaml", {})),
            "--dialogues", str(canonical / "valid.jsonl"),
            "--gold-records", str(canonical / "valid.jsonl"),
            "--out-dir", str(out),
        ]
    )
    assert code == EXIT_OK
    selected = list(read_jsonl(out / "selected.jsonl"))
    assert len(selected) == len(records)  # oracle teacher + oracle estimator
    assert list(read_jsonl(out / "rejected.jsonl")) == []
    blank_report = json.loads((out / "blank_report.json").read_text())
    assert blank_report["n_selected"] == len(records)
    assert "selected" in capsys.readouterr().out


def test_filter_threshold_boundary(tmp_path) -> None:
    ledger = tmp_path / "ledger.jsonl"
    rows = [
        {"dialogue_id": "D", "turn_index": 1, "values": ["a"], "iteration": 1,
         "p_correct": 0.99, "p_incomplete": 0.005, "p_incorrect": 0.005},
        {"dialogue_id": "D", "turn_index": 2, "values": [], "iteration": 1,
         "p_correct": 0.97, "p_incomplete": 0.015, "p_incorrect": 0.015},
    ]
    ledger.write_text("".join(json.dumps(r) + "\n" for r in rows))
    out = tmp_path / "filtered"
    code = main(
        ["filter", "--ledger", str(ledger), "--threshold", "0.98",
         "--out-dir", str(out)]
    )
    assert code == EXIT_OK
    selected = list(read_jsonl(out / "selected.jsonl"))
    rejected = list(read_jsonl(out / "rejected.jsonl"))
    assert [r["turn_index"] for r in selected] == [1]
    assert [r["turn_index"] for r in rejected] == [2]
    report = json.loads((out / "blank_report.json").read_text())
    assert report == {
        "threshold": 0.98,
        "n_selected": 1,
        "n_rejected": 1,
        "blank_rate_selected": 0.0,
    }


def test_selftrain_command(canonical, tmp_path, capsys) -> None:
    config = _write_config(
        tmp_path / "selftrain.yaml",
        {
            "selftrain": {"max_iterations": 2, "threshold": 0.98},
            "student_profiles": [
                {"drop_prob": 0.5, "seed": 1},
                {"drop_prob": 0.2, "seed": 2},
                {"drop_prob": 0.05, "seed": 3},
            ],
        },
    )
    work = tmp_path / "work"
    code = main(
        [
            "selftrain",
            "--config", str(config),
            "--labeled", str(canonical / "train.jsonl"),
            "--unlabeled", str(canonical / "valid.jsonl"),
            "--valid", str(canonical / "test.jsonl"),
            "--work-dir", str(work),
        ]
    )
    assert code == EXIT_OK
    assert (work / "iter_000" / "train_values.jsonl").exists()
    assert (work / "iter_001" / "report.json").exists()
    assert (work / "effective_config.yaml").exists()
    assert not (work / ".lock").exists()
    manifest = json.loads((work / "manifest.json").read_text())
    assert manifest["command"] == "selftrain"
    out = capsys.readouterr().out
    assert "iteration 1: selected" in out


# --- failure modes map to exit codes ------------------------------------------


def test_unknown_config_key_exits_2(canonical, tmp_path, capsys) -> None:
    config = _write_config(tmp_path / "bad.yaml", {"selftrian": {"threshold": 0.9}})
    code = main(
        [
            "synth-negatives",
            "--input", str(canonical / "train.jsonl"),
            "--config", str(config),
            "--out-dir", str(tmp_path / "out"),
        ]
    )
    assert code == EXIT_CONFIG
    assert "error: config:" in capsys.readouterr().err


def test_oracle_without_gold_records_exits_2(canonical, tmp_path, capsys) -> None:
    code = main(
        [
            "predict",
            "--input", str(canonical / "test.jsonl"),
            "--output", str(tmp_path / "p.jsonl"),
        ]
    )
    assert code == EXIT_CONFIG
    assert "requires --gold-records" in capsys.readouterr().err


def test_stripped_gold_records_name_the_file(canonical, tmp_path, capsys) -> None:
    # A split pool has its labels stripped on purpose; pointing
    # --gold-records at it must fail with the path and a usable hint.
    main(
        [
            "split",
            "--input", str(canonical / "train.jsonl"),
            "--ratio", "0.5",
            "--seed", "3",
            "--out-dir", str(tmp_path / "split"),
        ]
    )
    pool = tmp_path / "split" / "unlabeled.jsonl"
    code = main(
        [
            "pseudo-label",
            "--unlabeled", str(pool),
            "--gold-records", str(pool),
            "--output", str(tmp_path / "ledger.jsonl"),
        ]
    )
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert str(pool) in err
    assert "not a stripped pool" in err


def test_locked_work_dir_exits_2(canonical, tmp_path, capsys) -> None:
    work = tmp_path / "work"
    work.mkdir()
    (work / ".lock").write_text("12345")
    code = main(
        [
            "selftrain",
            "--labeled", str(canonical / "train.jsonl"),
            "--unlabeled", str(canonical / "valid.jsonl"),
            "--valid", str(canonical / "test.jsonl"),
            "--work-dir", str(work),
        ]
    )
    assert code == EXIT_CONFIG
    assert "locked by pid 12345" in capsys.readouterr().err
    # the stale lock is left for the operator to inspect, never auto-removed
    assert (work / ".lock").read_text() == "12345"


def test_stale_manifest_exits_4(canonical, tmp_path, capsys) -> None:
    work = tmp_path / "work"
    work.mkdir()
    (work / "manifest.json").write_text(json.dumps({"schema_version": 99}))
    code = main(
        [
            "selftrain",
            "--labeled", str(canonical / "train.jsonl"),
            "--unlabeled", str(canonical / "valid.jsonl"),
            "--valid", str(canonical / "test.jsonl"),
            "--work-dir", str(work),
        ]
    )
    assert code == EXIT_DATA
    assert "schema version 99" in capsys.readouterr().err
    assert not (work / ".lock").exists()


def test_missing_input_file_exits_4(tmp_path, capsys) -> None:
    code = main(
        [
            "evaluate",
            "--pred", str(tmp_path / "absent.jsonl"),
            "--gold", str(tmp_path / "absent.jsonl"),
        ]
    )
    assert code == EXIT_DATA
    assert "error: data:" in capsys.readouterr().err


def test_verdict_free_ledger_without_scorer_exits_2(tmp_path, capsys) -> None:
    ledger = tmp_path / "ledger.jsonl"
    ledger.write_text(
        json.dumps({"dialogue_id": "D", "turn_index": 1, "values": ["a"]}) + "\n"
    )
    code = main(
        ["filter", "--ledger", str(ledger), "--threshold", "0.98",
         "--out-dir", str(tmp_path / "out")]
    )
    assert code == EXIT_CONFIG
    assert "carry no verdict" in capsys.readouterr().err


def test_unreachable_backend_exits_3(canonical, tmp_path, capsys) -> None:
    config = _write_config(
        tmp_path / "remote.yaml",
        {"backend": {"kind": "remote", "endpoint": "http://127.0.0.1:9", "timeout": 1}},
    )
    code = main(
        [
            "pseudo-label",
            "--unlabeled", str(canonical / "valid.jsonl"),
            "--config", str(config),
            "--output", str(tmp_path / "ledger.jsonl"),
        ]
    )
    assert code == EXIT_BACKEND
    assert "error: backend:" in capsys.readouterr().err


def test_derive_labels_command(canonical, tmp_path) -> None:
    out = tmp_path / "relabeled.jsonl"
    code = main(
        ["derive-labels", "--input", str(canonical / "train.jsonl"),
         "--output", str(out)]
    )
    assert code == EXIT_OK
    assert read_dialogues(out) == read_dialogues(canonical / "train.jsonl")


def test_split_bad_ratio_exits_4(canonical, tmp_path, capsys) -> None:
    code = main(
        [
            "split",
            "--input", str(canonical / "train.jsonl"),
            "--ratio", "1.5",
            "--seed", "0",
            "--out-dir", str(tmp_path / "out"),
        ]
    )
    assert code == EXIT_DATA
    assert "ratio" in capsys.readouterr().err
