"""Seeded mini-batch training with Adam."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from .features import Featurizer
from .metrics import compute_f1
from .model import MoHEModel, ModelConfig, dropout_streams, predict_class
from .optim import AdamState, adam_step
from .records import ItemRecord

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    macro_f1: float | None = None
    micro_f1: float | None = None


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e.mean_loss for e in self.epochs]

    def write(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for e in self.epochs:
                rec = {k: (float(f"{v:.6g}") if isinstance(v, float) else v)
                       for k, v in asdict(e).items() if v is not None}
                fh.write(json.dumps(rec) + "\n")


def make_batches(n: int, batch_size: int, seed: int = 0, shuffle: bool = True,
                 rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Index batches over ``range(n)``; the last one may be short.

    With ``shuffle`` the order is ``np.random.default_rng(seed).permutation(n)``
    (or ``rng.permutation(n)`` when a generator is passed).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shuffle:
        order = (rng if rng is not None else np.random.default_rng(seed)).permutation(n)
    else:
        order = np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_step(model: MoHEModel, inputs: dict[str, np.ndarray], targets: np.ndarray,
               state: AdamState, rngs) -> float:
    model.zero_grad()
    with ag.Tape() as tape:
        heads = model.forward(inputs, train=True, rngs=rngs)
        loss = model.loss(heads, targets)
    ag.backward(loss, tape)
    adam_step(model.param_arrays(), model.grads(), state)
    return float(loss.data)


def evaluate(model: MoHEModel, inputs: dict[str, np.ndarray], targets: np.ndarray):
    known = targets >= 0
    pred = predict_class(model.predict_proba(inputs))
    return compute_f1(pred[known], targets[known], model.config.num_classes)


def fit_arrays(model: MoHEModel, inputs: dict[str, np.ndarray], targets: np.ndarray, cfg: TrainConfig,
               valid: tuple[dict[str, np.ndarray], np.ndarray] | None = None) -> TrainHistory:
    """Train ``model`` in place on pre-encoded arrays."""
    n = len(targets)
    if n == 0:
        raise ValueError("empty training set")
    if np.any(targets < 0):
        raise ValueError("training targets must be known class indices")
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = np.random.default_rng([cfg.seed, 2])
    rngs = dropout_streams(model, cfg.seed)
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        losses, sizes = [], []
        for idx in make_batches(n, cfg.batch_size, shuffle=cfg.shuffle, rng=shuffle_rng):
            batch = {k: v[idx] for k, v in inputs.items()}
            loss = train_step(model, batch, targets[idx], state, rngs)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            losses.append(loss)
            sizes.append(len(idx))
        record = EpochRecord(epoch, float(np.average(losses, weights=sizes)))
        if valid is not None and epoch % cfg.eval_every == 0:
            report = evaluate(model, *valid)
            record.macro_f1, record.micro_f1 = report.macro_f1, report.micro_f1
        log.info("epoch %d loss %.6g macro-F1 %s", epoch, record.mean_loss, record.macro_f1)
        history.epochs.append(record)
    return history


def train(config: ModelConfig, items: list[ItemRecord], train_config: TrainConfig,
          valid_items: list[ItemRecord] | None = None, label_level: int | None = None,
          featurizer: Featurizer | None = None):
    """Fit vocabularies on ``items``, build a model and train it.

    Returns ``(model, featurizer, history)``. ``config.num_classes`` is
    replaced by the size of the fitted label space.
    """
    if not items:
        raise ValueError("empty training set")
    featurizer = featurizer or Featurizer.fit(items, config, label_level)
    if config.num_classes != featurizer.num_classes:
        config = ModelConfig.from_dict({**config.to_dict(), "num_classes": featurizer.num_classes})
    model = MoHEModel(config, featurizer.vocab_sizes, seed=train_config.seed)
    specs = model.input_specs()
    inputs = featurizer.encode_items(items, specs)
    valid = None
    if valid_items:
        valid = (featurizer.encode_items(valid_items, specs), featurizer.targets(valid_items))
    history = fit_arrays(model, inputs, featurizer.targets(items), train_config, valid)
    return model, featurizer, history
