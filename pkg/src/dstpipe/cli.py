"""Command-line pipeline driver.

Subcommands mirror the pipeline stages: ingest, derive-labels, split,
synth-negatives, pseudo-label, filter, selftrain, predict, evaluate.
Every command validates inputs before writing, writes files atomically,
and exits 0 on success, 2 on configuration errors, 3 on backend or
trainer errors, and 4 on data errors.  Work directories are guarded by
a lock file and stamped with a schema-versioned manifest.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .backends import (
    BackendDescriptor,
    BackendError,
    GoldIndex,
    NoiseProfile,
    TurnRef,
    create_backend,
)
from .config import ConfigError, RunConfig, dump_config, load_config
from .corpus import (
    IngestionError,
    derive_turn_labels,
    load_portions,
    sample_split,
    turn_example_count,
)
from .metrics import estimator_f1, jga, per_domain_jga, render_report, tla
from .negsample import synth_dataset, write_estimator_records
from .pipeline import predict_corpus
from .records import (
    RecordError,
    SCHEMA_VERSION,
    atomic_write_text,
    read_dialogues,
    read_jsonl,
    write_dialogues,
    write_jsonl,
)
from .selftrain import (
    CommandTrainerHook,
    HttpTrainerHook,
    SelfTrainError,
    TrainerHookError,
    run_self_training,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DATA = 4


class LockError(RuntimeError):
    """Another run owns the work directory."""


@contextlib.contextmanager
def work_dir_lock(work_dir: Path):
    """One run per work dir, enforced via an exclusive lock file."""
    work_dir.mkdir(parents=True, exist_ok=True)
    lock_path = work_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        owner = lock_path.read_text().strip() or "unknown"
        raise LockError(
            f"work dir {work_dir} is locked by pid {owner}; "
            "remove the .lock file if that run is gone"
        ) from None
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock_path.unlink()


def write_manifest(out_dir: Path, command: str, **params) -> None:
    manifest = {"schema_version": SCHEMA_VERSION, "tool": f"dstpipe {__version__}",
                "command": command, **params}
    atomic_write_text(
        out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def check_manifest(work_dir: Path) -> None:
    path = work_dir / "manifest.json"
    if not path.is_file():
        return
    manifest = json.loads(path.read_text())
    found = manifest.get("schema_version")
    if found != SCHEMA_VERSION:
        raise RecordError(
            f"{path}: schema version {found} does not match {SCHEMA_VERSION}; "
            "stale work dir, start a fresh one"
        )


def _gold_index(paths: list[str]) -> GoldIndex:
    dialogues = []
    for path in paths:
        for dialogue in read_dialogues(path):
            if any(t.gold_turn_label is None for t in dialogue.turns):
                try:
                    dialogue = derive_turn_labels(dialogue)
                except ValueError as exc:
                    raise RecordError(
                        f"{path}: {exc}; gold records must keep their labels "
                        "(pass the labeled source file, not a stripped pool)"
                    ) from exc
            dialogues.append(dialogue)
    return GoldIndex(dialogues)


def _make_backend(descriptor: BackendDescriptor, gold_paths: list[str]):
    gold = None
    if descriptor.kind in ("oracle", "noisy"):
        if not gold_paths:
            raise ConfigError(
                f"{descriptor.kind} backend requires --gold-records with labels"
            )
        gold = _gold_index(gold_paths)
    return create_backend(descriptor, gold)


def cmd_ingest(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    portions = load_portions(args.corpus_root)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, dialogues in portions.items():
        labeled = [derive_turn_labels(d) for d in dialogues]
        write_dialogues(out_dir / f"{name}.jsonl", labeled)
        counts[name] = len(labeled)
    write_manifest(out_dir, "ingest", corpus_root=str(args.corpus_root), counts=counts)
    print(
        f"ingested {sum(counts.values())} dialogues "
        f"(train {counts['train']}, valid {counts['valid']}, test {counts['test']})"
    )
    return EXIT_OK


def cmd_derive_labels(args: argparse.Namespace) -> int:
    dialogues = [derive_turn_labels(d) for d in read_dialogues(args.input)]
    write_dialogues(args.output, dialogues)
    print(f"derived labels for {dialogues and sum(len(d.turns) for d in dialogues)} turns "
          f"across {len(dialogues)} dialogues")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    pool = read_dialogues(args.input)
    valid = read_dialogues(args.valid) if args.valid else []
    test = read_dialogues(args.test) if args.test else []
    split = sample_split(pool, args.ratio, args.seed, valid=valid, test=test)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dialogues(out_dir / "train.jsonl", split.train)
    write_dialogues(out_dir / "unlabeled.jsonl", split.unlabeled)
    write_dialogues(out_dir / "valid.jsonl", split.valid)
    write_dialogues(out_dir / "test.jsonl", split.test)
    write_manifest(
        out_dir,
        "split",
        ratio=split.ratio,
        seed=split.seed,
        train_dialogues=sorted(d.dialogue_id for d in split.train),
        counts={
            "train": len(split.train),
            "unlabeled": len(split.unlabeled),
            "valid": len(split.valid),
            "test": len(split.test),
            "turn_examples": turn_example_count(split),
        },
    )
    print(
        f"sampled {len(split.train)} of {len(pool)} dialogues "
        f"({turn_example_count(split)} turn examples) at ratio {args.ratio} seed {args.seed}"
    )
    return EXIT_OK


def cmd_synth_negatives(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    sampler = config.sampler
    if args.seed is not None:
        from dataclasses import replace

        sampler = replace(sampler, seed=args.seed)
    dialogues = read_dialogues(args.input)
    train, valid = synth_dataset(dialogues, sampler)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_estimator_records(
        out_dir / "estimator_train.jsonl", train, dialogues, config.prompt
    )
    write_estimator_records(
        out_dir / "estimator_valid.jsonl", valid, dialogues, config.prompt
    )
    write_manifest(
        out_dir,
        "synth-negatives",
        seed=sampler.seed,
        counts={"train": len(train), "valid": len(valid)},
    )
    print(f"synthesized {len(train)} train and {len(valid)} valid estimator examples")
    return EXIT_OK


def cmd_pseudo_label(args: argparse.Namespace) -> int:
    from .selftrain import TurnLookup, pseudo_label

    config = load_config(args.config)
    backend = _make_backend(config.backend.descriptor(), args.gold_records)
    unlabeled = read_dialogues(args.unlabeled)
    lookup = TurnLookup(unlabeled)
    pool = [TurnRef(d.dialogue_id, t.turn_index) for d in unlabeled for t in d.turns]
    examples, n_failed = pseudo_label(
        backend,
        pool,
        lookup,
        config.prompt,
        iteration=args.iteration,
        max_workers=config.backend.max_concurrency,
    )
    write_jsonl(args.output, [e.to_record() for e in examples])
    print(f"pseudo-labeled {len(examples)} turns ({n_failed} failures)")
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    records = list(read_jsonl(args.ledger))
    needs_scoring = [r for r in records if "p_correct" not in r]
    if needs_scoring:
        if not args.config or not args.dialogues:
            raise ConfigError(
                f"{len(needs_scoring)} ledger records carry no verdict; pass "
                "--config and --dialogues to score them here"
            )
        from .prompting import build_estimator_input
        from .selftrain import TurnLookup

        config = load_config(args.config)
        estimator = _make_backend(config.estimator_descriptor(), args.gold_records)
        lookup = TurnLookup(read_dialogues(args.dialogues))
        for record in needs_scoring:
            ref = TurnRef(record["dialogue_id"], record["turn_index"])
            history, current = lookup.context(ref)
            built = build_estimator_input(
                history, current, list(record["values"]), config.prompt
            )
            verdict = estimator.estimate_values(built, ref)
            record["p_correct"] = verdict.p_correct
            record["p_incomplete"] = verdict.p_incomplete
            record["p_incorrect"] = verdict.p_incorrect
    for record in records:
        record["selected"] = record["p_correct"] >= args.threshold
    selected = [r for r in records if r["selected"]]
    rejected = [r for r in records if not r["selected"]]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_dir / "selected.jsonl", selected)
    write_jsonl(out_dir / "rejected.jsonl", rejected)
    blank_rate = (
        sum(1 for r in selected if not r["values"]) / len(selected) if selected else 0.0
    )
    atomic_write_text(
        out_dir / "blank_report.json",
        json.dumps(
            {
                "threshold": args.threshold,
                "n_selected": len(selected),
                "n_rejected": len(rejected),
                "blank_rate_selected": blank_rate,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
    )
    print(
        f"threshold {args.threshold}: {len(selected)} selected, "
        f"{len(rejected)} rejected, blank rate {blank_rate:.3f}"
    )
    return EXIT_OK


def cmd_selftrain(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    labeled = read_dialogues(args.labeled)
    unlabeled = read_dialogues(args.unlabeled)
    valid = read_dialogues(args.valid)
    # Oracle and noisy backends must be able to answer pool turns too, so
    # by default gold covers every file in play (desk-scale runs keep the
    # pool's annotations around; only its role is "unlabeled").
    gold_paths = args.gold_records or [args.labeled, args.unlabeled, args.valid]

    estimator = _make_backend(config.estimator_descriptor(), gold_paths)
    teacher_descriptor = config.backend.descriptor()
    if config.student_profiles:
        # A desk-scale schedule: students are noisy oracles of varying
        # quality, standing in for checkpoints of increasing maturity.
        gold = _gold_index(gold_paths)
        roster = [
            create_backend(
                BackendDescriptor(
                    kind="noisy",
                    profile=NoiseProfile(**profile),
                    max_concurrency=teacher_descriptor.max_concurrency,
                ),
                gold,
            )
            for profile in config.student_profiles
        ]
        students = roster
    else:
        students = [_make_backend(teacher_descriptor, gold_paths)]

    hook = None
    if config.trainer.command:
        hook = CommandTrainerHook(config.trainer.command, timeout=config.trainer.timeout)
    elif config.trainer.endpoint:
        hook = HttpTrainerHook(config.trainer.endpoint, timeout=config.trainer.timeout)

    work_dir = Path(args.work_dir)
    with work_dir_lock(work_dir):
        check_manifest(work_dir)
        write_manifest(
            work_dir,
            "selftrain",
            threshold=config.selftrain.threshold,
            max_iterations=config.selftrain.max_iterations,
        )
        dump_config(config, work_dir / "effective_config.yaml")
        reports = run_self_training(
            labeled=labeled,
            unlabeled=unlabeled,
            valid=valid,
            students=students,
            estimator=estimator,
            hook=hook,
            config=config.selftrain,
            work_dir=work_dir,
            prompt_config=config.prompt,
            estimator_train_file=args.estimator_train_file,
        )
    for report in reports:
        print(
            f"iteration {report.iteration}: selected {report.n_selected} "
            f"of {report.n_pseudo_labeled}, validation TLA {report.validation_tla:.4f}"
            + (f" [stopped: {report.reason}]" if report.stopped else "")
        )
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    dialogues = read_dialogues(args.input)
    value_backend = _make_backend(config.backend.descriptor(), args.gold_records)
    slot_backend = _make_backend(config.slot_descriptor(), args.gold_records)
    predictions = predict_corpus(
        dialogues,
        value_backend,
        slot_backend,
        config.prompt,
        max_workers=config.backend.max_concurrency,
    )
    records = []
    for dialogue in dialogues:
        for prediction in predictions[dialogue.dialogue_id]:
            records.append(
                {
                    "dialogue_id": prediction.ref.dialogue_id,
                    "turn_index": prediction.ref.turn_index,
                    "values": list(prediction.values),
                    "turn_label": [[s, v] for s, v in prediction.turn_label],
                    "state": dict(prediction.belief),
                }
            )
    write_jsonl(args.output, records)
    print(f"predicted {len(records)} turns across {len(dialogues)} dialogues")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    gold = read_dialogues(args.gold)
    by_dialogue: dict[str, list[dict]] = {}
    for record in read_jsonl(args.pred):
        by_dialogue.setdefault(record["dialogue_id"], []).append(record)
    for records in by_dialogue.values():
        records.sort(key=lambda r: r["turn_index"])

    gold_values = []
    pred_values = []
    gold_states = {}
    pred_states = {}
    for dialogue in gold:
        records = by_dialogue.get(dialogue.dialogue_id)
        if records is None:
            raise RecordError(f"predictions missing dialogue {dialogue.dialogue_id}")
        if len(records) != len(dialogue.turns):
            raise RecordError(
                f"dialogue {dialogue.dialogue_id}: prediction covers "
                f"{len(records)} turns, gold has {len(dialogue.turns)}"
            )
        for turn, record in zip(dialogue.turns, records):
            if turn.gold_turn_label is None or turn.gold_state is None:
                raise RecordError(
                    f"dialogue {dialogue.dialogue_id}: gold file lacks labels"
                )
            gold_values.append([v for _, v in turn.gold_turn_label])
            pred_values.append(list(record["values"]))
        gold_states[dialogue.dialogue_id] = [dict(t.gold_state) for t in dialogue.turns]
        pred_states[dialogue.dialogue_id] = [dict(r["state"]) for r in records]

    results = [tla(pred_values, gold_values), jga(pred_states, gold_states)]
    domain_results = per_domain_jga(pred_states, gold_states)
    report = {
        "tla": results[0].value,
        "jga": results[1].value,
        "n_turns": results[0].n,
        "per_domain_jga": {k: v.value for k, v in domain_results.items()},
        "per_dialogue_jga": dict(results[1].per_dialogue or {}),
    }
    if args.output:
        atomic_write_text(
            args.output, json.dumps(report, indent=2, sort_keys=True) + "\n"
        )
    print(render_report(results))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dstpipe",
        description="dialogue state tracking pipeline: generate, filter, self-train",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a raw corpus into canonical records")
    p.add_argument("--corpus-root", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("derive-labels", help="fill turn labels from gold states")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_derive_labels)

    p = sub.add_parser("split", help="seeded dialogue-level subsample")
    p.add_argument("--input", required=True, help="labeled training pool records")
    p.add_argument("--valid", help="validation records, passed through")
    p.add_argument("--test", help="test records, passed through")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("synth-negatives", help="synthesize estimator training data")
    p.add_argument("--input", required=True, help="labeled records")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_negatives)

    p = sub.add_parser("pseudo-label", help="teacher-label an unlabeled pool")
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--config")
    p.add_argument("--gold-records", action="append", default=[])
    p.add_argument("--iteration", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("filter", help="threshold a scored pseudo-label ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--config")
    p.add_argument("--dialogues", help="records for scoring a verdict-free ledger")
    p.add_argument("--gold-records", action="append", default=[])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("selftrain", help="run the self-training loop")
    p.add_argument("--config")
    p.add_argument("--labeled", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--gold-records", action="append", default=[])
    p.add_argument("--estimator-train-file")
    p.add_argument("--work-dir", required=True)
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("predict", help="generate values, slots, and states")
    p.add_argument("--input", required=True)
    p.add_argument("--config")
    p.add_argument("--gold-records", action="append", default=[])
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold records")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, LockError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, TrainerHookError, SelfTrainError) as exc:
        print(f"error: backend: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (IngestionError, RecordError, FileNotFoundError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
