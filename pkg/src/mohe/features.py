"""Turn item records into the integer arrays a model consumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MetaThreadSpec, ModelConfig, ThreadSpec
from .records import ItemRecord, join_path
from .text import Vocab, build_vocab, encode, prepare_description, tokenize


def item_tokens(item: ItemRecord, key: str) -> list[str]:
    """Tokens of ``item`` for a vocabulary key (a token mode or a metadata source)."""
    if key in ("word", "char", "bigram"):
        return tokenize(item.title, key)
    if key == "shop_tag":
        head = [f"shop:{item.shop_id}"] if item.shop_id is not None else []
        return head + [f"tag:{t}" for t in item.tag_ids]
    if key == "description":
        return prepare_description(item.description_tokens)
    raise KeyError(key)


def item_label(item: ItemRecord, level: int | None) -> str:
    return join_path(item.path_at(level))


@dataclass
class Featurizer:
    """Vocabularies and label space fitted on a training split."""

    vocabs: dict[str, Vocab]
    labels: list[str]
    label_level: int | None = None

    @classmethod
    def fit(cls, items: list[ItemRecord], config: ModelConfig | None, label_level: int | None = None,
            vocab_keys=None) -> Featurizer:
        if not items:
            raise ValueError("cannot fit on an empty item list")
        if vocab_keys is None:
            specs = [*config.threads, *config.meta_threads]
            vocab_keys = sorted({s.vocab_key for s in specs})
        min_freq = config.vocab_min_freq if config else 1
        max_size = config.vocab_max_size if config else None
        vocabs = {k: build_vocab((item_tokens(it, k) for it in items), min_freq, max_size) for k in vocab_keys}
        labels = sorted({item_label(it, label_level) for it in items})
        return cls(vocabs, labels, label_level)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    @property
    def vocab_sizes(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.vocabs.items()}

    def encode_items(self, items: list[ItemRecord],
                     specs: dict[str, ThreadSpec | MetaThreadSpec]) -> dict[str, np.ndarray]:
        """Input key -> (N, L) index array."""
        out = {}
        for key, spec in specs.items():
            vocab = self.vocabs[spec.vocab_key]
            arr = np.zeros((len(items), spec.input_length), dtype=np.int64)
            for i, it in enumerate(items):
                arr[i] = encode(item_tokens(it, spec.vocab_key), vocab, spec.input_length).indices
            out[key] = arr
        return out

    def targets(self, items: list[ItemRecord]) -> np.ndarray:
        """Class indices; labels unseen in training map to -1."""
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([lookup.get(item_label(it, self.label_level), -1) for it in items], dtype=np.int64)
