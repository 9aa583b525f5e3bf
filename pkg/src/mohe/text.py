"""Tokenization, vocabularies and fixed-length encoding."""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
TOKEN_MODES = ("word", "char", "bigram")

DESCRIPTION_MAX_LENGTH = 120
# Universal, Penn Treebank and IPADIC (Mecab) spellings of noun / adjective / adverb.
DESCRIPTION_TAGS = frozenset({
    "NOUN", "PROPN", "ADJ", "ADV",
    "NN", "NNS", "NNP", "NNPS", "JJ", "JJR", "JJS", "RB", "RBR", "RBS",
    "名詞", "形容詞", "副詞",
})

_WORD = re.compile(r"\w+")
_SPACE = re.compile(r"\s+")


def tokenize(text: str, mode: str) -> list[str]:
    text = unicodedata.normalize("NFKC", text)
    if mode == "word":
        return _WORD.findall(text.lower())
    if mode == "char":
        return list(_SPACE.sub(" ", text).strip())
    if mode == "bigram":
        words = _WORD.findall(text.lower())
        return [f"{a}_{b}" for a, b in zip(words, words[1:])]
    raise ValueError(f"unknown token mode {mode!r}; expected one of {TOKEN_MODES}")


@dataclass
class Vocab:
    index: dict[str, int] = field(default_factory=lambda: {PAD_TOKEN: PAD, UNK_TOKEN: UNK})
    min_freq: int = 1
    max_size: int | None = None

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)

    def tokens(self) -> list[str]:
        """Tokens ordered by index."""
        return sorted(self.index, key=self.index.__getitem__)


def build_vocab(corpus: Iterable[list[str]], min_freq: int = 1, max_size: int | None = None) -> Vocab:
    """Frequency-ranked vocabulary; ties broken lexicographically."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    if max_size is not None and max_size < 2:
        raise ValueError("max_size must leave room for PAD and UNK")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[:max_size - 2]
    vocab = Vocab(min_freq=min_freq, max_size=max_size)
    for i, tok in enumerate(kept, start=2):
        vocab.index[tok] = i
    return vocab


@dataclass(frozen=True)
class EncodedSequence:
    indices: np.ndarray
    true_length: int


def encode(tokens: list[str], vocab: Vocab, length: int) -> EncodedSequence:
    """Map to indices, keep the first ``length`` tokens, right-pad with PAD."""
    if length < 1:
        raise ValueError("encoded length must be >= 1")
    out = np.full(length, PAD, dtype=np.int64)
    kept = tokens[:length]
    out[:len(kept)] = [vocab.lookup(t) for t in kept]
    return EncodedSequence(out, len(kept))


def prepare_description(tagged_tokens: Iterable[tuple[str, str]],
                        max_length: int = DESCRIPTION_MAX_LENGTH) -> list[str]:
    """Keep nouns, adjectives and adverbs, first occurrence only, at most ``max_length``."""
    seen = set()
    out = []
    for token, tag in tagged_tokens:
        if tag not in DESCRIPTION_TAGS or token in seen:
            continue
        seen.add(token)
        out.append(token)
        if len(out) == max_length:
            break
    return out
