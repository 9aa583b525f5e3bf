"""F1 scores, head/torso/tail segmentation and bootstrap significance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping

import numpy as np

HEAD_SHARE = (7, 10)
TORSO_SHARE = (9, 10)


@dataclass
class F1Report:
    micro_f1: float
    macro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    def to_json(self, labels=None) -> dict:
        names = labels if labels is not None else [str(i) for i in range(len(self.f1))]
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "per_class": [
                {"label": names[i], "precision": float(self.precision[i]), "recall": float(self.recall[i]),
                 "f1": float(self.f1[i]), "support": int(self.support[i])}
                for i in range(len(self.f1))
            ],
        }


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _per_class_f1(tp, pred_count, gold_count):
    precision = _safe_div(tp, pred_count)
    recall = _safe_div(tp, gold_count)
    f1 = _safe_div(2.0 * tp, pred_count + gold_count)
    return precision, recall, f1


def compute_f1(predictions, gold, num_classes: int) -> F1Report:
    """Per-class F1 with 0/0 -> 0; macro averages only classes present in gold."""
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {gold.size} gold labels")
    for arr in (pred, gold):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"label outside [0, {num_classes})")
    hit = pred == gold
    tp = np.bincount(gold[hit], minlength=num_classes).astype(float)
    pred_count = np.bincount(pred, minlength=num_classes).astype(float)
    gold_count = np.bincount(gold, minlength=num_classes).astype(float)
    precision, recall, f1 = _per_class_f1(tp, pred_count, gold_count)
    present = gold_count > 0
    macro = float(f1[present].mean()) if present.any() else 0.0
    micro = float(hit.mean()) if hit.size else 0.0
    return F1Report(micro, macro, precision, recall, f1, gold_count.astype(np.int64))


@dataclass
class SegmentAssignment:
    segments: dict[Hashable, str]
    histogram: dict[Hashable, int]
    order: list[Hashable]

    def members(self, segment: str) -> list[Hashable]:
        return [n for n in self.order if self.segments[n] == segment]


def segment_head_torso_tail(histogram: Mapping[Hashable, int]) -> SegmentAssignment:
    """Sort by count (desc, then node id asc); head is the shortest prefix
    covering >= 70% of items, torso extends it to >= 90%, tail is the rest."""
    if any(c < 0 for c in histogram.values()):
        raise ValueError("item counts must be non-negative")
    total = sum(histogram.values())
    if total <= 0:
        raise ValueError("histogram has no items")
    order = sorted(histogram, key=lambda n: (-histogram[n], n))
    segments = {}
    cum = 0
    for node in order:
        # integer comparisons keep the 70% / 90% boundaries exact
        if cum * HEAD_SHARE[1] < HEAD_SHARE[0] * total:
            segments[node] = "head"
        elif cum * TORSO_SHARE[1] < TORSO_SHARE[0] * total:
            segments[node] = "torso"
        else:
            segments[node] = "tail"
        cum += histogram[node]
    return SegmentAssignment(segments, dict(histogram), order)


@dataclass
class BootstrapResult:
    significant: bool
    delta: float
    delta_interval: tuple[float, float]
    resamples: int
    ci: float

    def to_json(self) -> dict:
        return {"significant": self.significant, "delta": self.delta,
                "delta_interval": list(self.delta_interval), "resamples": self.resamples, "ci": self.ci}


def _resampled_macro_f1(pred: np.ndarray, gold: np.ndarray, idx: np.ndarray, num_classes: int) -> np.ndarray:
    r = idx.shape[0]
    offset = (np.arange(r) * num_classes)[:, None]
    p, g = pred[idx], gold[idx]
    size = r * num_classes
    tp = np.bincount((g + offset)[p == g], minlength=size).reshape(r, num_classes)
    pc = np.bincount((p + offset).ravel(), minlength=size).reshape(r, num_classes)
    gc = np.bincount((g + offset).ravel(), minlength=size).reshape(r, num_classes)
    f1 = _safe_div(2.0 * tp, pc + gc)
    present = gc > 0
    return (f1 * present).sum(axis=1) / np.maximum(present.sum(axis=1), 1)


def bootstrap_compare(pred_a, pred_b, gold, resamples: int = 10000, ci: float = 0.95,
                      seed: int = 0, chunk: int = 1000) -> BootstrapResult:
    """Paired bootstrap of macro-F1(a) - macro-F1(b) over resampled items.

    The difference is significant when the central ``ci`` percentile interval
    excludes zero.
    """
    a = np.asarray(pred_a, dtype=np.int64)
    b = np.asarray(pred_b, dtype=np.int64)
    g = np.asarray(gold, dtype=np.int64)
    if not a.shape == b.shape == g.shape:
        raise ValueError("prediction and gold lengths differ")
    if resamples < 1000:
        raise ValueError("use at least 1000 resamples")
    if not 0.0 < ci < 1.0:
        raise ValueError("ci must lie in (0, 1)")
    n = g.size
    c = int(max(a.max(), b.max(), g.max())) + 1
    rng = np.random.default_rng(seed)
    deltas = []
    for start in range(0, resamples, chunk):
        idx = rng.integers(0, n, size=(min(chunk, resamples - start), n))
        deltas.append(_resampled_macro_f1(a, g, idx, c) - _resampled_macro_f1(b, g, idx, c))
    deltas = np.concatenate(deltas)
    tail = (1.0 - ci) / 2.0 * 100.0
    lo, hi = np.percentile(deltas, [tail, 100.0 - tail])
    point = compute_f1(a, g, c).macro_f1 - compute_f1(b, g, c).macro_f1
    return BootstrapResult(bool(lo > 0 or hi < 0), point, (float(lo), float(hi)), resamples, ci)
