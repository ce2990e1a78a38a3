from __future__ import annotations

import pytest

from dstpipe.prompting import (
    PromptConfig,
    build_estimator_input,
    build_generator_input,
    build_slot_prompts,
    value_prompt_sentence,
)

from conftest import make_turn

CFG = PromptConfig()

PREFIX = "get the requests that the user confirmed or mentioned in this turn"


def test_first_turn_generator_input_exact() -> None:
    current = make_turn(1, "i need a hotel")
    built = build_generator_input([], current, CFG)
    assert built.text == f"{PREFIX} [HISTORY] [TURN]  ; i need a hotel"


def test_generator_input_orders_segments() -> None:
    history = [
        make_turn(1, "i need a hotel in the centre"),
        make_turn(2, "cheap please", system="any price range ?"),
    ]
    current = make_turn(3, "book it for monday", system="the cb1 fits .")
    built = build_generator_input(history, current, CFG)
    assert built.text == (
        f"{PREFIX} [HISTORY]  ; i need a hotel in the centre ; "
        "any price range ? ; cheap please [TURN] "
        "the cb1 fits . ; book it for monday"
    )
    assert built.text.index("[HISTORY]") < built.text.index("[TURN]")
    assert built.text.rstrip().endswith("book it for monday")


def test_generator_history_truncates_oldest_first() -> None:
    history = [
        make_turn(1, "alpha " * 40),
        make_turn(2, "bravo bravo", system="sys two"),
        make_turn(3, "charlie charlie", system="sys three"),
    ]
    current = make_turn(4, "delta", system="sys four")
    small = PromptConfig(max_history_chars=220)
    built = build_generator_input(history, current, small)
    assert len(built.text) <= 220
    assert "alpha" not in built.text
    assert "charlie" in built.text
    assert "delta" in built.text


def test_generator_never_truncates_current_turn() -> None:
    current = make_turn(1, "word " * 60)
    tight = PromptConfig(max_history_chars=50)
    built = build_generator_input([], current, tight)
    assert "word" in built.text
    assert built.text.startswith(PREFIX)


def test_value_prompt_sentence_empty() -> None:
    assert (
        value_prompt_sentence([], CFG)
        == "there are no values mentioned in this turn."
    )


def test_value_prompt_sentence_joins_comma_space() -> None:
    assert (
        value_prompt_sentence(["friday", "5", "12:30"], CFG)
        == "all the values mentioned in this turn are friday, 5, 12:30."
    )


def test_estimator_input_ends_with_sentence() -> None:
    history = [make_turn(1, "i want a cheap restaurant")]
    current = make_turn(2, "book for friday at 12:30 for 5", system="which day ?")
    built = build_estimator_input(history, current, ["friday", "5", "12:30"], CFG)
    assert built.text.endswith(
        "all the values mentioned in this turn are friday, 5, 12:30."
    )
    assert built.value_count == 3
    empty = build_estimator_input(history, current, [], CFG)
    assert empty.text.endswith("there are no values mentioned in this turn.")
    assert empty.value_count == 0


def test_estimator_input_separates_dialogue_and_sentence() -> None:
    history = [make_turn(1, "first turn")]
    current = make_turn(2, "second turn", system="reply one")
    built = build_estimator_input(history, current, ["x"], CFG)
    assert " ; first turn . reply one ; second turn [SEP] " in built.text


def test_estimator_input_dedupes_candidates() -> None:
    built = build_estimator_input([], make_turn(1, "hi"), ["a", "a", "b"], CFG)
    assert built.values == ("a", "b")
    assert "are a, b." in built.text


def test_slot_prompts_forward_and_inverse() -> None:
    current = make_turn(1, "i need a hotel in the centre")
    pair = build_slot_prompts([], current, "centre", CFG, domain_slot="hotel-area")
    assert pair.forward == (
        " ; i need a hotel in the centre [SEP] "
        "what is the slot type of centre [SEP]"
    )
    assert pair.inverse == (
        " ; i need a hotel in the centre [SEP] "
        "what is the value of hotel-area [SEP]"
    )
    assert pair.value == "centre"


def test_slot_prompts_without_slot_have_no_inverse() -> None:
    pair = build_slot_prompts([], make_turn(1, "hi"), "centre", CFG)
    assert pair.inverse is None


def test_slot_prompts_training_requires_slot() -> None:
    with pytest.raises(ValueError, match="domain_slot"):
        build_slot_prompts([], make_turn(1, "hi"), "centre", CFG, training=True)


def test_slot_prompts_reject_empty_value() -> None:
    with pytest.raises(ValueError, match="value"):
        build_slot_prompts([], make_turn(1, "hi"), "", CFG)


def test_prompt_config_rejects_duplicate_markers() -> None:
    with pytest.raises(ValueError):
        PromptConfig(history_marker="[X]", turn_marker="[X]")


def test_prompt_config_rejects_bad_budget() -> None:
    with pytest.raises(ValueError):
        PromptConfig(max_history_chars=0)


def test_prompt_config_rejects_template_without_placeholder() -> None:
    with pytest.raises(ValueError):
        PromptConfig(values_template="all the values are fixed.")
