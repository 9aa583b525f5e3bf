"""Estimator threads, aggregator, MoHE-1/2, metadata threads and baselines."""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import autograd as ag
from .autograd import ConfigurationError, Tensor

FRAMEWORKS = ("ensemble", "moe", "aggregator", "mohe1", "mohe2")
META_SOURCES = ("shop_tag", "description")

_MODES = ("word", "word", "word", "char", "char", "char", "bigram")
_FILTERS = (100, 100, 100, 300, 300, 300, 100)
_LENGTHS = (60, 60, 60, 100, 100, 100, 60)
KERNEL_SIZES = {
    "ichiba": (3, 4, 5, 5, 15, 25, 3),
    "sigir": (3, 4, 5, 5, 10, 15, 3),
}


def embedding_dim_rule(num_classes: int) -> int:
    if num_classes < 1:
        raise ConfigurationError("class count must be >= 1")
    return min(math.ceil(num_classes / 2), 100)


@dataclass
class ThreadSpec:
    mode: str
    kernel_size: int
    filters: int
    input_length: int
    embed_dim: int | None = None

    @property
    def input_key(self) -> str:
        return f"{self.mode}:{self.input_length}"

    @property
    def vocab_key(self) -> str:
        return self.mode


@dataclass
class MetaThreadSpec:
    """Keyword-finder thread over metadata; the kernel size is always one."""

    source: str
    filters: int = 100
    input_length: int = 16
    embed_dim: int | None = None
    kernel_size: int = field(default=1, init=False)

    @property
    def input_key(self) -> str:
        return f"meta:{self.source}:{self.input_length}"

    @property
    def vocab_key(self) -> str:
        return self.source


def default_threads(dataset: str = "ichiba", count: int = 7) -> list[ThreadSpec]:
    """The seven baseline threads, optionally truncated to the first ``count``."""
    kernels = KERNEL_SIZES[dataset]
    specs = [ThreadSpec(m, k, p, n) for m, k, p, n in zip(_MODES, kernels, _FILTERS, _LENGTHS)]
    return specs[:count]


@dataclass
class ModelConfig:
    framework: str
    num_classes: int
    threads: list[ThreadSpec] = field(default_factory=default_threads)
    meta_threads: list[MetaThreadSpec] = field(default_factory=list)
    meta_method: int = 1
    gammas: list[float] | None = None
    dropout: float = 0.1
    slp_dim: int | None = None
    layer_norm_eps: float = 1e-5
    vocab_min_freq: int = 1
    vocab_max_size: int | None = None

    def __post_init__(self):
        self.threads = [t if isinstance(t, ThreadSpec) else ThreadSpec(**t) for t in self.threads]
        self.meta_threads = [m if isinstance(m, MetaThreadSpec) else MetaThreadSpec(**m)
                             for m in self.meta_threads]
        self.validate()

    def validate(self) -> None:
        if self.framework not in FRAMEWORKS:
            raise ConfigurationError(
                f"unknown framework {self.framework!r}; valid names: {', '.join(FRAMEWORKS)}")
        if self.num_classes < 2:
            raise ConfigurationError("need at least two classes")
        if not self.threads:
            raise ConfigurationError("need at least one estimator thread")
        for t in self.threads:
            if t.mode not in ("word", "char", "bigram"):
                raise ConfigurationError(f"unknown token mode {t.mode!r}")
            if t.kernel_size < 1 or t.filters < 1 or t.input_length < 1:
                raise ConfigurationError(f"invalid thread spec {t}")
        for m in self.meta_threads:
            if m.source not in META_SOURCES:
                raise ConfigurationError(f"unknown metadata source {m.source!r}")
        if self.meta_method not in (1, 2):
            raise ConfigurationError("meta_method must be 1 or 2")
        if self.meta_threads and self.framework == "moe":
            raise ConfigurationError("metadata threads are not defined for the moe framework")
        if self.meta_threads and self.meta_method == 2 and self.framework != "mohe2":
            raise ConfigurationError("meta_method 2 is only defined for mohe2")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        self.resolved_gammas()

    @property
    def has_aggregator(self) -> bool:
        return self.framework in ("aggregator", "mohe1", "mohe2")

    def embed_dim(self, spec) -> int:
        return spec.embed_dim or embedding_dim_rule(self.num_classes)

    def resolved_gammas(self) -> np.ndarray:
        """Loss weights for heads 1..T and the aggregator (last entry)."""
        n = len(self.threads)
        if self.framework == "moe":
            return np.zeros(n + 1)
        if self.framework == "aggregator":
            g = np.zeros(n + 1)
            g[-1] = 1.0
            return g
        if self.gammas is None:
            if self.framework == "ensemble":
                return np.append(np.full(n, 1.0 / n), 0.0)
            return np.full(n + 1, 1.0 / (n + 1))
        g = np.asarray(self.gammas, dtype=np.float64)
        if g.shape != (n + 1,):
            raise ConfigurationError(f"expected {n + 1} gammas, got {g.size}")
        if np.any(g < 0) or abs(g.sum() - 1.0) > 1e-9:
            raise ConfigurationError("gammas must be non-negative and sum to 1")
        if self.framework == "ensemble" and g[-1] != 0.0:
            raise ConfigurationError("ensemble has no aggregator head; its gamma must be 0")
        return g

    def to_dict(self) -> dict:
        d = asdict(self)
        for m in d["meta_threads"]:
            m.pop("kernel_size")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


@dataclass
class HeadOutputs:
    thread_logits: list[Tensor]
    agg_logits: Tensor | None
    V: list[Tensor]
    u: list[Tensor]
    s: list[Tensor] | None = None
    meta_u: list[Tensor] = field(default_factory=list)
    gate: Tensor | None = None
    mixture: Tensor | None = None

    @property
    def thread_probs(self) -> list[np.ndarray]:
        return [ag._softmax(z.data) for z in self.thread_logits]

    @property
    def agg_probs(self) -> np.ndarray | None:
        return None if self.agg_logits is None else ag._softmax(self.agg_logits.data)


def _component_seed(seed: int, stream: int, component: str) -> list[int]:
    return [seed, stream, zlib.crc32(component.encode())]


def dropout_streams(model: MoHEModel, seed: int) -> dict[str, np.random.Generator]:
    """One independent dropout generator per component."""
    return {c: np.random.default_rng(_component_seed(seed, 1, c)) for c in model.components}


def _glorot(rng, shape, fan_in, fan_out) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class MoHEModel:
    """Parameters and forward graph for any of the five frameworks.

    ``vocab_sizes`` maps a vocabulary key (token mode or metadata source) to
    its size. Each component draws its initial weights from its own seeded
    stream, so a thread starts identically regardless of what else is built.
    """

    def __init__(self, config: ModelConfig, vocab_sizes: Mapping[str, int], seed: int = 0):
        self.config = config
        self.vocab_sizes = dict(vocab_sizes)
        self.seed = seed
        self.shapes: dict[str, tuple[int, ...]] = {}
        self.components: list[str] = []
        self._plan()
        self.params: dict[str, Tensor] = {}
        self._init_params()

    # ---- structure -------------------------------------------------------

    @property
    def thread_specs(self) -> list[ThreadSpec]:
        if self.config.framework == "moe":
            return [self.config.threads[0]] * len(self.config.threads)
        return self.config.threads

    def _encoder_shapes(self, name: str, spec) -> int:
        if spec.vocab_key not in self.vocab_sizes:
            raise ConfigurationError(f"no vocabulary size for {spec.vocab_key!r}")
        d = self.config.embed_dim(spec)
        self.shapes[f"{name}.embedding"] = (self.vocab_sizes[spec.vocab_key], d)
        self.shapes[f"{name}.conv.kernel"] = (spec.kernel_size, d, spec.filters)
        self.shapes[f"{name}.conv.bias"] = (spec.filters,)
        self.shapes[f"{name}.ln.gain"] = (spec.filters,)
        self.shapes[f"{name}.ln.offset"] = (spec.filters,)
        self.components.append(name)
        return spec.filters

    def _plan(self) -> None:
        cfg = self.config
        c = cfg.num_classes
        meta_width = sum(self._encoder_shapes(f"meta{j}", m) for j, m in enumerate(cfg.meta_threads))
        method1_extra = meta_width if cfg.meta_method == 1 else 0
        method2_extra = meta_width if cfg.meta_method == 2 else 0
        clf_widths = []
        for t, spec in enumerate(self.thread_specs):
            name = f"thread{t}"
            width = self._encoder_shapes(name, spec)
            if cfg.framework == "mohe2":
                slp = cfg.slp_dim or spec.filters
                self.shapes[f"{name}.slp.weight"] = (slp, width + cfg.embed_dim(spec) + method2_extra)
                self.shapes[f"{name}.slp.bias"] = (slp,)
                width = slp
            clf_widths.append(width)
            self.shapes[f"{name}.clf.weight"] = (c, width + method1_extra)
            self.shapes[f"{name}.clf.bias"] = (c,)
        if cfg.has_aggregator:
            self.shapes["agg.clf.weight"] = (c, sum(clf_widths) + method1_extra)
            self.shapes["agg.clf.bias"] = (c,)
            self.components.append("agg")
        if cfg.framework == "moe":
            width = self._encoder_shapes("gate", cfg.threads[0])
            self.shapes["gate.clf.weight"] = (len(cfg.threads), width)
            self.shapes["gate.clf.bias"] = (len(cfg.threads),)

    def _init_params(self) -> None:
        rngs = {}
        for name, shape in self.shapes.items():
            component, role = name.split(".", 1)
            rng = rngs.setdefault(component, np.random.default_rng(_component_seed(self.seed, 0, component)))
            if role == "embedding":
                value = rng.uniform(-0.05, 0.05, size=shape)
            elif role == "conv.kernel":
                k, d, p = shape
                value = _glorot(rng, shape, k * d, k * p)
            elif role.endswith(".weight"):
                value = _glorot(rng, shape, shape[1], shape[0])
            elif role == "ln.gain":
                value = np.ones(shape)
            else:
                value = np.zeros(shape)
            self.params[name] = Tensor(value, requires_grad=True, name=name)

    def input_specs(self) -> dict[str, ThreadSpec | MetaThreadSpec]:
        """Input key -> a spec describing how to build that input."""
        specs = {}
        for spec in [*self.thread_specs, *self.config.meta_threads]:
            specs.setdefault(spec.input_key, spec)
        if self.config.framework == "moe":
            specs.setdefault(self.config.threads[0].input_key, self.config.threads[0])
        return specs

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {k: v.grad for k, v in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self.shapes) - set(arrays)
        extra = set(arrays) - set(self.shapes)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in arrays.items():
            if tuple(arr.shape) != self.shapes[name]:
                raise ValueError(f"{name}: shape {arr.shape} != expected {self.shapes[name]}")
            self.params[name].data = np.array(arr, dtype=np.float64)

    # ---- forward ---------------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def encode_thread(self, name: str, x, train: bool, rngs) -> tuple[Tensor, Tensor]:
        """Embedding -> dropout -> conv -> max-pool -> layer norm -> dropout."""
        rate = self.config.dropout
        rng = rngs.get(name) if rngs else None
        v = ag.dropout(ag.embedding(self._p(f"{name}.embedding"), x), rate, train, rng)
        pooled = ag.global_max_pool(ag.conv1d_same(v, self._p(f"{name}.conv.kernel"), self._p(f"{name}.conv.bias")))
        normed = ag.layer_norm(pooled, self._p(f"{name}.ln.gain"), self._p(f"{name}.ln.offset"),
                               self.config.layer_norm_eps)
        return v, ag.dropout(normed, rate, train, rng)

    def classify(self, name: str, x: Tensor) -> Tensor:
        return ag.dense(x, self._p(f"{name}.clf.weight"), self._p(f"{name}.clf.bias"))

    def mini_aggregate(self, name: str, u: Tensor, v: Tensor, meta: list[Tensor]) -> Tensor:
        """tanh single-layer perceptron over [u, mean embedding, metadata encodings]."""
        x = ag.concat([u, ag.mean_over_sequence(v), *meta])
        return ag.tanh(ag.dense(x, self._p(f"{name}.slp.weight"), self._p(f"{name}.slp.bias")))

    def forward(self, inputs: Mapping[str, np.ndarray], train: bool = False,
                rngs: Mapping[str, np.random.Generator] | None = None) -> HeadOutputs:
        cfg = self.config
        if train and cfg.dropout > 0 and rngs is None:
            raise ValueError("train mode needs dropout generators")
        meta_u = [self.encode_thread(f"meta{j}", inputs[m.input_key], train, rngs)[1]
                  for j, m in enumerate(cfg.meta_threads)]
        method1 = meta_u if cfg.meta_method == 1 else []
        method2 = meta_u if cfg.meta_method == 2 else []

        Vs, us, ss, logits = [], [], [], []
        for t, spec in enumerate(self.thread_specs):
            name = f"thread{t}"
            v, u = self.encode_thread(name, inputs[spec.input_key], train, rngs)
            Vs.append(v)
            us.append(u)
            x = u
            if cfg.framework == "mohe2":
                x = self.mini_aggregate(name, u, v, method2)
                ss.append(x)
            logits.append(self.classify(name, ag.concat([x, *method1]) if method1 else x))

        heads = HeadOutputs(logits, None, Vs, us, ss or None, meta_u)
        if cfg.has_aggregator:
            fused = ss if cfg.framework == "mohe2" else us
            heads.agg_logits = self.classify("agg", ag.concat([*fused, *method1]))
        if cfg.framework == "moe":
            _, u_gate = self.encode_thread("gate", inputs[cfg.threads[0].input_key], train, rngs)
            heads.gate = ag.softmax(self.classify("gate", u_gate))
            heads.mixture = ag.mixture(heads.gate, [ag.softmax(z) for z in logits])
        return heads

    def loss(self, heads: HeadOutputs, targets) -> Tensor:
        """Batch-mean training loss."""
        if self.config.framework == "moe":
            return ag.mean(ag.nll(heads.mixture, targets))
        return ag.mean(combined_loss(targets, heads, self.config.resolved_gammas()))

    def predict_proba(self, inputs: Mapping[str, np.ndarray], batch_size: int = 256) -> np.ndarray:
        n = len(next(iter(inputs.values())))
        out = []
        for start in range(0, n, batch_size):
            batch = {k: v[start:start + batch_size] for k, v in inputs.items()}
            out.append(predict_distribution(self.forward(batch), self.config.framework))
        return np.concatenate(out) if out else np.zeros((0, self.config.num_classes))


def combined_loss(targets, heads: HeadOutputs, gammas) -> Tensor:
    """Per-item ``gamma_agg * CE(agg) + sum_t gamma_t * CE(thread t)``.

    Heads with zero weight are skipped, so a missing aggregator is fine as
    long as its weight is zero.
    """
    g = np.asarray(gammas, dtype=np.float64)
    n = len(heads.thread_logits)
    if g.shape != (n + 1,):
        raise ConfigurationError(f"expected {n + 1} gammas, got {g.size}")
    if np.any(g < 0) or abs(g.sum() - 1.0) > 1e-9:
        raise ConfigurationError("gammas must be non-negative and sum to 1")
    terms = []
    if g[-1] != 0.0:
        if heads.agg_logits is None:
            raise ConfigurationError("aggregator weight is non-zero but there is no aggregator head")
        terms.append(ag.scale(ag.softmax_cross_entropy(heads.agg_logits, targets)[0], g[-1]))
    for gamma, z in zip(g[:-1], heads.thread_logits):
        if gamma != 0.0:
            terms.append(ag.scale(ag.softmax_cross_entropy(z, targets)[0], gamma))
    loss = terms[0]
    for term in terms[1:]:
        loss = ag.add(loss, term)
    return loss


def predict_distribution(heads: HeadOutputs, framework: str) -> np.ndarray:
    if framework == "moe":
        return heads.mixture.data
    if framework == "aggregator":
        return heads.agg_probs
    probs = heads.thread_probs
    if framework in ("mohe1", "mohe2"):
        probs = [*probs, heads.agg_probs]
    elif framework != "ensemble":
        raise ConfigurationError(f"unknown framework {framework!r}")
    return sum(probs) / len(probs)


def predict_class(dist: np.ndarray) -> np.ndarray:
    """Argmax with ties resolved to the lowest class index."""
    return np.argmax(dist, axis=-1)
