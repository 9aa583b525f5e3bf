"""Reverse-mode automatic differentiation over a small, fixed operator set.

Tensors wrap float64 numpy arrays. Operations executed while a :class:`Tape`
is active are recorded in execution order; :func:`backward` replays that
record in reverse. Outside a tape the same functions act as plain numpy
forward code, which is what inference uses.

Most sequence ops accept an optional leading batch axis, so ``(L, D)`` and
``(B, L, D)`` inputs are both valid.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ConfigurationError(ValueError):
    """Shapes or hyperparameters that cannot describe a valid computation."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; tapes may nest, the innermost one records.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> Tape:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)


_ACTIVE: list[Tape] = []


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = ()
    out._backward = None
    if out.requires_grad and _ACTIVE:
        out._parents = parents
        out._backward = backward
        _ACTIVE[-1].nodes.append(out)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf reached.

    Leaves are tensors created with ``requires_grad=True``; their gradients
    add to whatever is already stored, so callers zero them between steps.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if not any(node is loss for node in reversed(tape.nodes)):
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = parent.grad + pg if parent.grad is not None else pg.copy()
            else:
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


# --------------------------------------------------------------------------
# elementwise and structural ops
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"add: shapes differ {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar."""
    shape = a.shape
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def weighted_total(a: Tensor, weights) -> Tensor:
    """``sum(a * weights)`` for a constant weight array of the same shape."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != a.shape:
        raise ConfigurationError(f"weighted_total: shapes differ {a.shape} vs {w.shape}")
    return _result(np.array((a.data * w).sum()), (a,), lambda g: (g * w,), "weighted_total")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.shape
    return _result(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, g / n),), "mean")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ConfigurationError("concat of an empty list")
    sizes = [p.shape[-1] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=-1))

    return _result(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), bw, "concat")


def mean_over_sequence(x: Tensor) -> Tensor:
    """Column mean over the sequence axis: (L, D) -> (D,), (B, L, D) -> (B, D)."""
    axis = x.data.ndim - 2
    length = x.shape[axis]

    def bw(g):
        return (np.repeat(np.expand_dims(g, axis) / length, length, axis=axis),)

    return _result(x.data.mean(axis=axis), (x,), bw, "mean_over_sequence")


# --------------------------------------------------------------------------
# network layers
# --------------------------------------------------------------------------

def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise ConfigurationError(f"embedding index outside [0, {vocab})")

    def bw(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (dt,)

    return _result(table.data[idx], (table,), bw, "embedding")


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity in inference mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def conv1d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Zero-padded 1-D convolution whose output length equals the input length.

    ``kernels`` has shape (K, D, P). Output position ``l`` sees inputs
    ``l - (K-1)//2 .. l + K//2``; for even K the extra zero goes on the right.
    """
    k, d, p = kernels.shape
    if k < 1:
        raise ConfigurationError("kernel size must be >= 1")
    if x.shape[-1] != d:
        raise ConfigurationError(f"input depth {x.shape[-1]} != kernel depth {d}")
    if bias.shape != (p,):
        raise ConfigurationError(f"bias shape {bias.shape} != ({p},)")
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    b, length, _ = xd.shape
    left = (k - 1) // 2
    padded = np.pad(xd, ((0, 0), (left, k - 1 - left), (0, 0)))
    # (B, L, D, K) -> (B, L, K, D)
    cols = sliding_window_view(padded, k, axis=1).transpose(0, 1, 3, 2).reshape(b * length, k * d)
    w = kernels.data.reshape(k * d, p)
    out = (cols @ w + bias.data).reshape(b, length, p)

    def bw(g):
        g2 = g.reshape(b * length, p)
        dw = (cols.T @ g2).reshape(k, d, p)
        db = g2.sum(axis=0)
        dcols = (g2 @ w.T).reshape(b, length, k, d)
        dpad = np.zeros_like(padded)
        for j in range(k):
            dpad[:, j:j + length, :] += dcols[:, :, j, :]
        dx = dpad[:, left:left + length, :]
        return (dx if batched else dx[0], dw, db)

    return _result(out if batched else out[0], (x, kernels, bias), bw, "conv1d_same")


def global_max_pool(x: Tensor) -> Tensor:
    """Max over the sequence axis; ties send the gradient to the lowest index."""
    axis = x.data.ndim - 2
    if x.shape[axis] < 1:
        raise ValueError("global_max_pool over an empty sequence")
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (dx,)

    return _result(out, (x,), bw, "global_max_pool")


def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis with the population variance."""
    if x.shape[-1] != gain.shape[0] or gain.shape != offset.shape:
        raise ConfigurationError("layer_norm: gain/offset do not match the feature axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        dxhat = g * gain.data
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return _result(gain.data * xhat + offset.data, (x, gain, offset), bw, "layer_norm")


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``W @ x + b`` with ``W`` of shape (out, in)."""
    n_out, n_in = weight.shape
    if x.shape[-1] != n_in or bias.shape != (n_out,):
        raise ConfigurationError(
            f"dense: input {x.shape}, weight {weight.shape}, bias {bias.shape} do not fit")
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        dw = g.reshape(-1, n_out).T @ x.data.reshape(-1, n_in)
        return (g @ weight.data, dw, g.sum(axis=lead))

    return _result(x.data @ weight.data.T + bias.data, (x, weight, bias), bw, "dense")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: Tensor) -> Tensor:
    p = _softmax(logits.data)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (logits,), bw, "softmax")


def _check_targets(targets, n_classes: int, shape: tuple[int, ...]) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != shape:
        raise ValueError(f"targets shape {t.shape} does not match {shape}")
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise ValueError(f"target outside [0, {n_classes})")
    return t


def softmax_cross_entropy(logits: Tensor, targets) -> tuple[Tensor, np.ndarray]:
    """Per-item ``-log softmax(logits)[target]`` and the probabilities.

    A (C,) input yields a scalar loss; a (B, C) input yields a (B,) vector.
    """
    c = logits.shape[-1]
    if c < 2:
        raise ConfigurationError("softmax_cross_entropy needs at least two classes")
    t = _check_targets(targets, c, logits.shape[:-1])
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - log_norm
    p = np.exp(logp)
    loss = -np.take_along_axis(logp, t[..., None], axis=-1)[..., 0]
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)

    def bw(g):
        return ((p - onehot) * np.asarray(g)[..., None],)

    return _result(loss, (logits,), bw, "softmax_cross_entropy"), p


def nll(probs: Tensor, targets) -> Tensor:
    """Per-item ``-log probs[target]`` for inputs that already are distributions."""
    t = _check_targets(targets, probs.shape[-1], probs.shape[:-1])
    picked = np.take_along_axis(probs.data, t[..., None], axis=-1)[..., 0]

    def bw(g):
        d = np.zeros_like(probs.data)
        np.put_along_axis(d, t[..., None], (-np.asarray(g) / picked)[..., None], axis=-1)
        return (d,)

    with np.errstate(divide="ignore"):
        loss = -np.log(picked)
    return _result(loss, (probs,), bw, "nll")


def mixture(gate: Tensor, experts: list[Tensor]) -> Tensor:
    """Gate-weighted sum of expert distributions: ``sum_t gate[..., t] * experts[t]``."""
    if gate.shape[-1] != len(experts):
        raise ConfigurationError(f"gate width {gate.shape[-1]} != {len(experts)} experts")
    stacked = np.stack([e.data for e in experts], axis=-2)  # (..., T, C)
    out = (gate.data[..., None] * stacked).sum(axis=-2)

    def bw(g):
        dgate = (stacked * g[..., None, :]).sum(axis=-1)
        return (dgate, *(g * gate.data[..., i:i + 1] for i in range(len(experts))))

    return _result(out, (gate, *experts), bw, "mixture")
