"""Central finite-difference checks of the tape gradients.

Each check builds a scalar from a set of leaf tensors, takes the analytic
gradient from one taped pass, then perturbs sampled coordinates by
``+-step`` and re-evaluates without a tape. Randomness inside the function
(dropout) must be recreated on every call so all evaluations see the same
masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .model import ModelConfig, MoHEModel, default_threads, dropout_streams

STEP = 1e-5
TOLERANCE = 1e-4
ERROR_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    points: int
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None = None


@dataclass
class SuiteResult:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def points(self) -> int:
        return sum(c.points for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def passed(self, tolerance: float = TOLERANCE) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = ERROR_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _sample_coords(grad: np.ndarray, k: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Up to ``k`` coordinates, mostly where the analytic gradient is non-zero."""
    flat = np.abs(grad).reshape(-1)
    nonzero = np.flatnonzero(flat)
    k = min(k, flat.size)
    n_live = min(len(nonzero), k - k // 4) if len(nonzero) else 0
    chosen = list(rng.choice(nonzero, size=n_live, replace=False)) if n_live else []
    rest = np.setdiff1d(np.arange(flat.size), chosen)
    chosen += list(rng.choice(rest, size=min(k - n_live, rest.size), replace=False))
    return [np.unravel_index(int(i), grad.shape) for i in chosen]


def check_function(name: str, fn: Callable[[], ag.Tensor], leaves: dict[str, ag.Tensor],
                   points_per_leaf: int, rng: np.random.Generator, step: float = STEP) -> CheckResult:
    """Compare tape and finite-difference gradients of the scalar ``fn()``."""
    for leaf in leaves.values():
        leaf.zero_grad()
    with ag.Tape() as tape:
        out = fn()
    ag.backward(out, tape)
    worst_err, worst, count = 0.0, None, 0
    for leaf_name, leaf in leaves.items():
        analytic = leaf.grad.copy()
        for coord in _sample_coords(analytic, points_per_leaf, rng):
            orig = leaf.data[coord]
            leaf.data[coord] = orig + step
            up = float(fn().data)
            leaf.data[coord] = orig - step
            down = float(fn().data)
            leaf.data[coord] = orig
            err = relative_error(float(analytic[coord]), (up - down) / (2 * step))
            count += 1
            if err > worst_err:
                worst_err, worst = err, (leaf_name, tuple(int(i) for i in coord))
    return CheckResult(name, count, worst_err, worst)


def _leaf(rng, *shape, lo=-1.0, hi=1.0) -> ag.Tensor:
    return ag.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def op_checks(seed: int = 0, points_per_leaf: int = 4) -> SuiteResult:
    """One check per differentiable op, each reduced to a scalar by a fixed random projection."""
    rng = np.random.default_rng(seed)
    suite = SuiteResult()

    weights: dict[tuple[int, ...], np.ndarray] = {}

    def project(t: ag.Tensor) -> ag.Tensor:
        if t.shape not in weights:
            weights[t.shape] = rng.standard_normal(t.shape)
        return ag.weighted_total(t, weights[t.shape])

    def run(name, fn, **leaves):
        suite.checks.append(check_function(name, fn, leaves, points_per_leaf, rng))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    run("add", lambda: project(ag.add(a, b)), a=a, b=b)
    run("scale", lambda: project(ag.scale(a, -1.7)), a=a)
    run("total", lambda: ag.scale(ag.total(ag.tanh(a)), 0.5), a=a)
    run("mean", lambda: ag.mean(ag.tanh(a)), a=a)
    run("tanh", lambda: project(ag.tanh(a)), a=a)
    c = _leaf(rng, 3, 2)
    run("concat", lambda: project(ag.concat([a, c])), a=a, c=c)
    seq = _leaf(rng, 2, 5, 3)
    run("mean_over_sequence", lambda: project(ag.mean_over_sequence(seq)), seq=seq)
    table = _leaf(rng, 6, 3)
    idx = rng.integers(0, 6, size=(2, 5))
    run("embedding", lambda: project(ag.embedding(table, idx)), table=table)
    run("dropout", lambda: project(ag.dropout(seq, 0.3, True, np.random.default_rng(seed))), seq=seq)
    for k in (1, 2, 3, 4):
        kern, bias = _leaf(rng, k, 3, 4), _leaf(rng, 4)
        run(f"conv1d_same[K={k}]", lambda kern=kern, bias=bias: project(ag.conv1d_same(seq, kern, bias)),
            seq=seq, kernels=kern, bias=bias)
    run("global_max_pool", lambda: project(ag.global_max_pool(seq)), seq=seq)
    gain, offset = _leaf(rng, 4, lo=0.5, hi=1.5), _leaf(rng, 4)
    run("layer_norm", lambda: project(ag.layer_norm(a, gain, offset)), x=a, gain=gain, offset=offset)
    w, bias = _leaf(rng, 5, 4), _leaf(rng, 5)
    run("dense", lambda: project(ag.dense(a, w, bias)), x=a, weight=w, bias=bias)
    run("softmax", lambda: project(ag.softmax(a)), logits=a)
    targets = rng.integers(0, 4, size=3)
    run("softmax_cross_entropy", lambda: project(ag.softmax_cross_entropy(a, targets)[0]), logits=a)
    run("nll", lambda: ag.mean(ag.nll(ag.softmax(a), targets)), logits=a)
    g = _leaf(rng, 3, 2)
    run("mixture", lambda: project(ag.mixture(ag.softmax(g), [ag.softmax(a), ag.softmax(b)])),
        gate=g, first=a, second=b)
    return suite


def model_check(config: ModelConfig | None = None, seed: int = 0, batch: int = 2, vocab_size: int = 30,
                points_per_param: int = 2) -> CheckResult:
    """Finite-difference check of the full training loss with dropout active."""
    if config is None:
        config = ModelConfig("mohe2", num_classes=4, threads=default_threads("ichiba", 7))
    rng = np.random.default_rng([seed, 99])
    keys = {s.vocab_key for s in [*config.threads, *config.meta_threads]}
    model = MoHEModel(config, {k: vocab_size for k in keys}, seed=seed)
    inputs = {key: rng.integers(0, vocab_size, size=(batch, spec.input_length))
              for key, spec in model.input_specs().items()}
    targets = rng.integers(0, config.num_classes, size=batch)

    def fn():
        heads = model.forward(inputs, train=True, rngs=dropout_streams(model, seed))
        return model.loss(heads, targets)

    return check_function(f"{config.framework} loss", fn, model.params, points_per_param, rng)


def run_suite(seed: int = 0, points_per_leaf: int = 4, points_per_param: int = 2) -> SuiteResult:
    suite = op_checks(seed, points_per_leaf)
    suite.checks.append(model_check(seed=seed, points_per_param=points_per_param))
    return suite
