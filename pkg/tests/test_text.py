from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mohe.text import PAD, UNK, build_vocab, encode, prepare_description, tokenize


def test_tokenize_examples():
    assert tokenize("Red Shoes", "word") == ["red", "shoes"]
    assert tokenize("ab c", "char") == ["a", "b", " ", "c"]
    assert tokenize("big red shoes", "bigram") == ["big_red", "red_shoes"]


def test_tokenize_normalizes_width_and_whitespace():
    assert tokenize("ＲＥＤ  shoe", "word") == ["red", "shoe"]
    assert tokenize("a \t\n b", "char") == ["a", " ", "b"]
    assert tokenize("one", "bigram") == []
    with pytest.raises(ValueError):
        tokenize("x", "trigram")


def test_bigram_pairs_oracle():
    words = "the quick brown fox jumps".split()
    assert tokenize(" ".join(words), "bigram") == [words[i] + "_" + words[i + 1] for i in range(len(words) - 1)]


def test_vocab_min_freq():
    v = build_vocab([["a", "a", "b"], ["a"]], min_freq=2)
    assert v.index == {"<pad>": 0, "<unk>": 1, "a": 2}


def test_vocab_tie_break():
    v = build_vocab([["b", "a", "b", "a"]])
    assert v.index["a"] == 2 and v.index["b"] == 3


def test_vocab_max_size():
    v = build_vocab([list("aaabbc")], max_size=4)
    assert v.tokens() == ["<pad>", "<unk>", "a", "b"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from(list("abcdefgh")), max_size=12), max_size=20), st.integers(1, 3))
def test_vocab_matches_counting_oracle(corpus, min_freq):
    v = build_vocab(corpus, min_freq)
    counts = Counter(t for doc in corpus for t in doc)
    expected = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])) if counts[t] >= min_freq]
    assert v.tokens()[2:] == expected
    assert sorted(v.index.values()) == list(range(len(v)))


def test_encode_examples():
    vocab = build_vocab([["a"]])
    e = encode(["a"], vocab, 3)
    np.testing.assert_array_equal(e.indices, [2, PAD, PAD])
    assert e.true_length == 1
    assert encode(["zzz"], vocab, 2).indices[0] == UNK


def test_encode_truncates_to_input_length():
    toks = [f"t{i}" for i in range(70)]
    vocab = build_vocab([toks])
    e = encode(toks, vocab, 60)
    assert e.true_length == 60
    np.testing.assert_array_equal(e.indices, [vocab.lookup(t) for t in toks[:60]])


def test_prepare_description_examples():
    assert prepare_description([("fast", "ADV"), ("the", "DET"), ("fast", "ADV"), ("shoe", "NOUN")]) == ["fast", "shoe"]
    assert prepare_description([("the", "DET"), ("a", "DET")]) == []
    tokens = [(f"w{i}", "NOUN") for i in range(200)]
    assert prepare_description(tokens) == [f"w{i}" for i in range(120)]
