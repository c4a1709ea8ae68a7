"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A Tensor wraps an ndarray plus the closure that routes its output gradient
to its parents. Ops build the graph eagerly; Tensor.backward() runs the
tape in reverse topological order, accumulating gradients additively across
fan-out. Every op validates operand shapes (ShapeError names both sides)
and checks its output for NaN/Inf (NumericError names the op).

The engine is deliberately small: only what the instruction language model
and the graph encoder need, plus a finite-difference checker used by the
tests to validate every backward rule.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CheckpointError, ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)

EPS = 1e-12
MASK_FILL = -1e9


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"op {op!r} produced non-finite values")


class Tensor:
    """Node of the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, *,
                 parents: tuple["Tensor", ...] = (),
                 backward_fn: Callable[[np.ndarray], None] | None = None,
                 op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward_fn = backward_fn
        _check_finite(self.data, op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Populate .grad on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # small conveniences; the real API is the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, op=f"param:{name}")
        self.name = name


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False, op="const")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str,
          backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs,
                  parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to the given (broadcast-source) shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), "mul", backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: cannot broadcast {a.shape} with {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data ** 2), b.shape))

    return _make(data, (a, b), "div", backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), "scale", backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: cannot broadcast {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(data, (a, b), "matmul", backward)


def add_bias(x, bias) -> Tensor:
    """Row-wise bias add; bias must be 1-d and match the last axis."""
    x, bias = _as_tensor(x), _as_tensor(bias)
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit {x.shape}")
    return add(x, bias)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - data ** 2))

    return _make(data, (x,), "tanh", backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    z = x.data
    data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.clip(z, 0, None))),
                    np.exp(np.clip(z, None, 0)) /
                    (1.0 + np.exp(np.clip(z, None, 0))))

    def backward(g):
        _accumulate(x, g * data * (1.0 - data))

    return _make(data, (x,), "sigmoid", backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(x) -> Tensor:
    """tanh-approximation GELU."""
    x = _as_tensor(x)
    z = x.data
    inner = _GELU_C * (z + _GELU_A * z ** 3)
    t = np.tanh(inner)
    data = 0.5 * z * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * z ** 2)
        dx = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t ** 2) * dinner
        _accumulate(x, g * dx)

    return _make(data, (x,), "gelu", backward)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    data = np.sqrt(x.data)

    def backward(g):
        _accumulate(x, g * 0.5 / data)

    return _make(data, (x,), "sqrt", backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * data, axis=axis, keepdims=True)
        _accumulate(x, data * (g - inner))

    return _make(data, (x,), "softmax", backward)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape).copy())

    return _make(data, (x,), "sum", backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape) / count)

    return _make(data, (x,), "mean", backward)


def mean_pool(x, axis: int = 0) -> Tensor:
    """Mean over one axis; alias kept for readability at call sites."""
    return mean(x, axis=axis)


# ---------------------------------------------------------------------------
# structural ops


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}")

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(data, (x,), "reshape", backward)


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    data = x.data.transpose(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(g):
        _accumulate(x, g.transpose(inverse))

    return _make(data, (x,), "transpose", backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}")
    sizes = [t.shape[axis] for t in ts]

    def backward(g):
        offset = 0
        for t, size in zip(ts, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(index)])
            offset += size

    return _make(data, tuple(ts), "concat", backward)


def slice_(x, key) -> Tensor:
    """Indexing/slicing with gradient scatter back into the source."""
    x = _as_tensor(x)
    try:
        data = x.data[key]
    except IndexError:
        raise ShapeError(f"slice: index {key!r} invalid for shape {x.shape}")

    def backward(g):
        if not x.requires_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, key, g)

    return _make(np.array(data, copy=True), (x,), "slice", backward)


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of a (V, H) table by an integer id array of any shape."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding ids out of range for table of {table.shape[0]} rows")
    data = table.data[ids]

    def backward(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.ravel(),
                  g.reshape(-1, table.shape[1]))

    return _make(data, (table,), "embedding_lookup", backward)


def layer_norm(x, gamma, beta, eps: float = EPS) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    h = x.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} "
            f"do not fit input {x.shape}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(gamma, np.sum(g * xhat, axis=lead))
        _accumulate(beta, np.sum(g, axis=lead))
        gy = g * gamma.data
        term = gy - np.mean(gy, axis=-1, keepdims=True) \
            - xhat * np.mean(gy * xhat, axis=-1, keepdims=True)
        _accumulate(x, inv * term)

    return _make(data, (x, gamma, beta), "layer_norm", backward)


def cross_entropy(logits, targets, ignore_index: int = -1) -> Tensor:
    """Mean negative log-likelihood over rows whose target != ignore_index.

    logits: (N, C); targets: int array (N,). If every target is ignored the
    loss is defined as 0 (with a logged warning) and no gradient flows.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N, C) logits, got {logits.shape}")
    if targets.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy: targets {targets.shape} do not match "
            f"logits {logits.shape}")
    valid = targets != ignore_index
    n_valid = int(valid.sum())
    if n_valid == 0:
        log.warning("cross_entropy: every target is ignore_index, loss := 0")
        return constant(0.0)
    if targets[valid].min() < 0 or targets[valid].max() >= logits.shape[1]:
        raise ShapeError(
            f"cross_entropy: target out of range for {logits.shape[1]} classes")
    shifted = logits.data - np.max(logits.data, axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logp = shifted - logsumexp
    rows = np.nonzero(valid)[0]
    data = -np.mean(logp[rows, targets[rows]])

    def backward(g):
        grad = np.exp(logp)
        grad[rows, targets[rows]] -= 1.0
        grad[~valid] = 0.0
        _accumulate(logits, grad * (float(g) / n_valid))

    return _make(data, (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------------------
# composite layers


def multi_head_attention(x: Tensor, pad_mask: np.ndarray,
                         params: Mapping[str, Tensor], n_heads: int) -> Tensor:
    """Scaled dot-product self-attention with additive padding mask.

    x: (B, T, H); pad_mask: bool (B, T), True at real tokens. params must
    provide wq, bq, wk, bk, wv, bv, wo, bo with square (H, H) projections.
    """
    b, t, h = x.shape
    if h % n_heads != 0:
        raise ConfigError(f"hidden size {h} not divisible by {n_heads} heads")
    dh = h // n_heads
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if pad_mask.shape != (b, t):
        raise ShapeError(f"pad_mask {pad_mask.shape} does not match input "
                         f"({b}, {t}, {h})")

    def project(w, bias):
        y = add_bias(matmul(x, params[w]), params[bias])
        y = reshape(y, (b, t, n_heads, dh))
        return transpose(y, (0, 2, 1, 3))

    q = project("wq", "bq")
    k = project("wk", "bk")
    v = project("wv", "bv")
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    bias = np.where(pad_mask, 0.0, MASK_FILL)[:, None, None, :]
    attn = softmax(add(scores, constant(bias)), axis=-1)
    ctx = matmul(attn, v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (b, t, h))
    return add_bias(matmul(ctx, params["wo"]), params["bo"])


def gru_cell(state: Tensor, message: Tensor,
             params: Mapping[str, Tensor]) -> Tensor:
    """Gated recurrent update h' = (1 - z) * h + z * hcand.

    state, message: (N, D). params: wz, uz, bz, wr, ur, br, wh, uh, bh,
    where w* multiply the message and u* the previous state. A zero message
    with strongly negative bz leaves the state essentially unchanged.
    """
    if state.shape != message.shape:
        raise ShapeError(
            f"gru_cell: state {state.shape} vs message {message.shape}")
    z = sigmoid(add_bias(add(matmul(message, params["wz"]),
                             matmul(state, params["uz"])), params["bz"]))
    r = sigmoid(add_bias(add(matmul(message, params["wr"]),
                             matmul(state, params["ur"])), params["br"]))
    cand = tanh(add_bias(add(matmul(message, params["wh"]),
                             matmul(mul(r, state), params["uh"])), params["bh"]))
    keep = mul(sub(constant(np.ones_like(z.data)), z), state)
    return add(keep, mul(z, cand))


def l2_normalize(x, eps: float = EPS) -> Tensor:
    """x / max(||x||, eps) over the last axis."""
    x = _as_tensor(x)
    sq = sum_(mul(x, x), axis=-1, keepdims=True)
    norm = sqrt(add(sq, constant(eps)))
    return div(x, norm)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParameterSet:
    """Ordered, uniquely named collection of Parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(np.asarray(data, dtype=np.float64), name)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) - set(state)
            extra = set(state) - set(self._params)
            raise CheckpointError(
                f"parameter names differ (missing={sorted(missing)}, "
                f"unexpected={sorted(extra)})")
        for name, p in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} "
                    f"vs model {p.data.shape}")
            p.data = arr.copy()

    def copy_from(self, other: "ParameterSet") -> None:
        self.load_state(other.state())


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Update per parameter p with gradient g (None counts as zero):
        m <- b1 m + (1-b1) g           v <- b2 v + (1-b2) g^2
        p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * weight_decay * p
    """

    def __init__(self, params: Iterable[Parameter], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {betas}")
        if weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {weight_decay}")
        self.params = list(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        b1, b2 = self.betas
        self.t += 1
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g ** 2
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            update = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update
            _check_finite(p.data, "adam_step")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class FDEntry:
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class FDReport:
    max_rel_error: float
    worst_param: str
    passed: bool
    entries: list[FDEntry] = field(default_factory=list)


def finite_difference_check(loss_fn: Callable[[], Tensor],
                            params: Iterable[Parameter],
                            h: float = 1e-5, tolerance: float = 1e-4,
                            max_entries_per_param: int = 5,
                            rng: np.random.Generator | None = None) -> FDReport:
    """Compare analytic gradients of loss_fn against central differences.

    loss_fn must be deterministic and rebuild its graph on every call. For
    each parameter a random subsample of entries is perturbed by +-h. The
    relative error uses |a - n| / max(1e-8, |a| + |n|).
    """
    rng = rng or np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = {p.name: (p.grad.copy() if p.grad is not None
                         else np.zeros_like(p.data)) for p in params}
    report = FDReport(max_rel_error=0.0, worst_param="", passed=True)
    for p in params:
        flat = p.data.reshape(-1)
        size = flat.size
        take = min(max_entries_per_param, size)
        idxs = rng.choice(size, size=take, replace=False)
        for idx in idxs:
            idx = int(idx)
            orig = flat[idx]
            flat[idx] = orig + h
            up = float(loss_fn().data)
            flat[idx] = orig - h
            down = float(loss_fn().data)
            flat[idx] = orig
            numeric = (up - down) / (2 * h)
            a = float(analytic[p.name].reshape(-1)[idx])
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            report.entries.append(FDEntry(p.name, idx, a, numeric, rel))
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_param = p.name
    report.passed = report.max_rel_error <= tolerance
    return report


def save_checkpoint(state: Mapping[str, np.ndarray], stem: str | Path) -> None:
    """Write a {name: shape} JSON manifest plus one little-endian float64
    payload holding the arrays concatenated in manifest order."""
    stem = Path(stem)
    manifest = {name: list(np.asarray(arr).shape) for name, arr in state.items()}
    stem.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{stem}.json").write_text(json.dumps(manifest, indent=1))
    with open(f"{stem}.bin", "wb") as fh:
        for arr in state.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(stem: str | Path) -> dict[str, np.ndarray]:
    stem = Path(stem)
    manifest_path = Path(f"{stem}.json")
    payload_path = Path(f"{stem}.bin")
    if not manifest_path.exists() or not payload_path.exists():
        raise CheckpointError(f"checkpoint {stem} is missing files")
    manifest = json.loads(manifest_path.read_text())
    payload = np.frombuffer(payload_path.read_bytes(), dtype="<f8")
    state: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in manifest.items():
        size = int(np.prod(shape)) if shape else 1
        chunk = payload[offset:offset + size]
        if chunk.size != size:
            raise CheckpointError(
                f"checkpoint payload too short for {name!r} {tuple(shape)}")
        state[name] = chunk.reshape(shape).astype(np.float64)
        offset += size
    if offset != payload.size:
        raise CheckpointError(
            f"checkpoint payload has {payload.size - offset} trailing values")
    return state
