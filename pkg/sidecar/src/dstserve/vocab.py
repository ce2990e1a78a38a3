"""Word-level tokenizer construction from corpus text.

The serving models use a whitespace/punctuation word-level vocabulary
built from the corpus the server will see, so checkpoints can be created
entirely offline.  Marker strings that the client embeds in prompts
(``[HISTORY]``, ``[TURN]``, ``[SEP]``) are registered as special tokens
— a word-level pre-tokenizer would otherwise split them into brackets
and letters.  Words outside the vocabulary map to ``[UNK]``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Iterator

from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from transformers import PreTrainedTokenizerFast

PAD, UNK, EOS, CLS = "[PAD]", "[UNK]", "[EOS]", "[CLS]"
MARKERS = ("[HISTORY]", "[TURN]", "[SEP]")

# Fixed phrasing the client wraps around dialogue text.  These words must
# be in-vocabulary even when the corpus never uses them, or every request
# would start with a run of [UNK] tokens.
CLIENT_PHRASES = (
    "get the requests that the user confirmed or mentioned in this turn",
    "there are no values mentioned in this turn .",
    "all the values mentioned in this turn are , .",
    "what is the slot type of",
    "what is the value of",
    "none",
    ". , ; : | - ? !",
)


def iter_strings(value: object) -> Iterator[str]:
    """Yield every string inside a JSON-like structure."""
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from iter_strings(key)
            yield from iter_strings(item)
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from iter_strings(item)


def build_tokenizer(texts: Iterable[str]) -> PreTrainedTokenizerFast:
    """Build a word-level tokenizer covering ``texts``.

    The vocabulary is the sorted set of pre-tokenized words, so it does
    not depend on the order the corpus was read in.
    """
    splitter = Whitespace()
    words: set[str] = set()
    for text in texts:
        words.update(piece for piece, _ in splitter.pre_tokenize_str(text))
    for phrase in CLIENT_PHRASES:
        words.update(piece for piece, _ in splitter.pre_tokenize_str(phrase))
    words -= {PAD, UNK, EOS, CLS, *MARKERS}

    vocab = {PAD: 0, UNK: 1, EOS: 2, CLS: 3}
    for word in sorted(words):
        vocab[word] = len(vocab)
    core = Tokenizer(WordLevel(vocab, unk_token=UNK))
    core.pre_tokenizer = Whitespace()
    return PreTrainedTokenizerFast(
        tokenizer_object=core,
        pad_token=PAD,
        unk_token=UNK,
        eos_token=EOS,
        cls_token=CLS,
        additional_special_tokens=list(MARKERS),
    )


def load_tokenizer(path: str | Path) -> PreTrainedTokenizerFast:
    return PreTrainedTokenizerFast.from_pretrained(str(path))
