"""Checkpoint bundles: a JSON manifest plus one raw little-endian float64 file per array.

Layout::

    <dir>/manifest.json
    <dir>/vocab.<key>.tsv          index <TAB> JSON-quoted token, sorted by index
    <dir>/arrays/<name>.f64        raw '<f8' values, row-major
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import Featurizer
from .model import MoHEModel, ModelConfig
from .text import Vocab

FORMAT_VERSION = 1


def _write_vocab(path: Path, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for token in vocab.tokens():
            fh.write(f"{vocab.index[token]}\t{json.dumps(token, ensure_ascii=False)}\n")


def _read_vocab(path: Path, min_freq: int, max_size) -> Vocab:
    index = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            i, tok = line.rstrip("\n").split("\t", 1)
            index[json.loads(tok)] = int(i)
    if sorted(index.values()) != list(range(len(index))):
        raise ValueError(f"{path}: vocabulary indices are not dense")
    return Vocab(index, min_freq, max_size)


def save_checkpoint(directory, model: MoHEModel, featurizer: Featurizer) -> None:
    root = Path(directory)
    (root / "arrays").mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, arr in model.param_arrays().items():
        fname = f"arrays/{name}.f64"
        np.ascontiguousarray(arr, dtype="<f8").tofile(root / fname)
        arrays[name] = {"file": fname, "shape": list(arr.shape)}
    vocabs = {}
    for key, vocab in featurizer.vocabs.items():
        fname = f"vocab.{key}.tsv"
        _write_vocab(root / fname, vocab)
        vocabs[key] = {"file": fname, "min_freq": vocab.min_freq, "max_size": vocab.max_size}
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "labels": featurizer.labels,
        "label_level": featurizer.label_level,
        "vocabs": vocabs,
        "arrays": arrays,
    }
    with open(root / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, ensure_ascii=False)
        fh.write("\n")


def load_checkpoint(directory) -> tuple[MoHEModel, Featurizer]:
    """Rebuild model and featurizer; every model array must be in the manifest with its exact shape."""
    root = Path(directory)
    with open(root / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    vocabs = {k: _read_vocab(root / v["file"], v["min_freq"], v["max_size"]) for k, v in manifest["vocabs"].items()}
    featurizer = Featurizer(vocabs, manifest["labels"], manifest["label_level"])
    config = ModelConfig.from_dict(manifest["model_config"])
    model = MoHEModel(config, featurizer.vocab_sizes, seed=manifest.get("seed", 0))
    arrays = {}
    for name, entry in manifest["arrays"].items():
        shape = tuple(entry["shape"])
        if name in model.shapes and shape != model.shapes[name]:
            raise ValueError(f"{name}: manifest shape {shape} != model shape {model.shapes[name]}")
        data = np.fromfile(root / entry["file"], dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise ValueError(f"{name}: file holds {data.size} values, manifest shape {shape}")
        arrays[name] = data.reshape(shape).astype(np.float64)
    model.load_arrays(arrays)
    return model, featurizer
