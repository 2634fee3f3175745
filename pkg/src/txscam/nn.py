"""Small reverse-mode autodiff kernel over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
forward order; :meth:`Tape.backward` walks that list in reverse and
accumulates gradients into every tensor that requires them. Batched
(leading-axis) shapes are allowed wherever numpy's ``matmul`` and
broadcasting rules allow them.
"""
from __future__ import annotations

import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np

MASK_FILL = -1e9
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return add(self, neg(o))

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __neg__(self):
        return neg(self)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def Param(value, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


class Tape:
    """Ordered record of differentiable operations."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeMismatch("backward needs a scalar loss")
        for out, inputs, _ in self.ops:
            out.grad = None
            for t in inputs:
                t.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self.ops):
            if out.grad is not None:
                fn(out.grad)


def _record(out: Tensor, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    if Tape._stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        Tape._stack[-1].ops.append((out, tuple(inputs), fn))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def back(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g, b.shape))
    return _record(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: a._acc(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def back(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(g * a.data, b.shape))
    return _record(out, (a, b), back)


def matmul(a, b) -> Tensor:
    """Batched matrix product; a 1-D left operand is treated as a single row."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 1 and b.data.ndim >= 2 and a.shape[0] == b.shape[-2]:
        row = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(row, row.shape[:-2] + row.shape[-1:])
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def back(g):
        if a.requires_grad:
            a._acc(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._acc(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _record(out, (a, b), back)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._acc(np.broadcast_to(g, a.shape))
    return _record(out, (a,), back)


def square_sum(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sum(a.data * a.data))
    return _record(out, (a,), lambda g: a._acc(2.0 * g * a.data))


# -- shape ------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: a._acc(g.reshape(a.shape)))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.swapaxes(a.data, ax1, ax2))
    return _record(out, (a,), lambda g: a._acc(np.swapaxes(g, ax1, ax2)))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    inv = np.argsort(axes)
    return _record(out, (a,), lambda g: a._acc(np.transpose(g, inv)))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    return _record(out, (a,), lambda g: a._acc(_unbroadcast(g, a.shape)))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    cuts = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, cuts, axis=axis)):
            if p.requires_grad:
                p._acc(gp)
    return _record(out, parts, back)


def take_rows(a, index) -> Tensor:
    """``a[index]`` along the leading axis."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out = Tensor(a.data[index])

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._acc(full)
    return _record(out, (a,), back)


def scatter_rows(a, index, n_rows: int) -> Tensor:
    """Place the rows of ``a`` at ``index`` of a zero array with ``n_rows`` rows."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    data = np.zeros((n_rows,) + a.shape[1:])
    data[index] = a.data
    out = Tensor(data)
    return _record(out, (a,), lambda g: a._acc(g[index]))


# -- element-wise activations -------------------------------------------------

def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    out = Tensor(np.where(pos, a.data, slope * a.data))
    return _record(out, (a,), lambda g: a._acc(np.where(pos, g, slope * g)))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    ex = np.exp(np.minimum(a.data, 0.0))
    out = Tensor(np.where(pos, a.data, alpha * (ex - 1.0)))
    return _record(out, (a,), lambda g: a._acc(np.where(pos, g, g * alpha * ex)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(s)
    return _record(out, (a,), lambda g: a._acc(g * s * (1.0 - s)))


# -- normalisation and reductions --------------------------------------------

def masked_fill(scores: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Copy of ``scores`` with invalid (``mask == False``) entries set to ``MASK_FILL``."""
    if mask is None:
        return scores
    return np.where(mask, scores, MASK_FILL)


def softmax(a, mask=None, axis: int = -1) -> Tensor:
    """Row softmax with max subtraction; ``mask`` marks entries that may get weight.

    Masked entries are filled with a large negative number before
    normalisation and forced to exactly zero afterwards.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = masked_fill(x, mask)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    den = e.sum(axis=axis, keepdims=True)
    s = e / np.where(den > 0, den, 1.0)
    out = Tensor(s)

    def back(g):
        a._acc(s * (g - np.sum(g * s, axis=axis, keepdims=True)))
    return _record(out, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    ls = z - lse
    out = Tensor(ls)
    sm = np.exp(ls)
    return _record(out, (a,), lambda g: a._acc(g - sm * g.sum(axis=axis, keepdims=True)))


def masked_max(a, mask, axis: int) -> Tensor:
    """Max over ``axis`` restricted to positions where ``mask`` is true."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    x = np.where(mask, a.data, -np.inf)
    arg = np.argmax(x, axis=axis)
    idx = np.expand_dims(arg, axis)
    out = Tensor(np.take_along_axis(a.data, idx, axis=axis).squeeze(axis))

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        a._acc(full)
    return _record(out, (a,), back)


def masked_mean(a, mask, axis: int) -> Tensor:
    """Mean over ``axis`` of the positions where ``mask`` is true."""
    a = as_tensor(a)
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.shape)
    cnt = np.maximum(w.sum(axis=axis, keepdims=True), 1.0)
    scale = w / cnt
    out = Tensor((a.data * scale).sum(axis=axis))
    return _record(out, (a,), lambda g: a._acc(np.expand_dims(g, axis) * scale))


def conv1d(x, weight, bias=None) -> Tensor:
    """'Same'-padded 1-D convolution.

    x: (B, L, C_in), weight: (K, C_in, C_out) with odd K, bias: (C_out,).
    Positions outside ``[0, L)`` read as zero.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    K, c_in, c_out = weight.shape
    if x.shape[-1] != c_in or K % 2 != 1:
        raise ShapeMismatch(f"conv1d input {x.shape} with kernel {weight.shape}")
    B, L, _ = x.shape
    pad = K // 2
    xp = np.zeros((B, L + 2 * pad, c_in))
    xp[:, pad:pad + L] = x.data
    cols = np.stack([xp[:, k:k + L] for k in range(K)], axis=2)  # B, L, K, C_in
    flat = cols.reshape(B, L, K * c_in)
    wflat = weight.data.reshape(K * c_in, c_out)
    y = flat @ wflat
    ins = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data
        ins.append(bias)
    out = Tensor(y)

    def back(g):
        if weight.requires_grad:
            weight._acc((flat.reshape(-1, K * c_in).T @ g.reshape(-1, c_out)).reshape(K, c_in, c_out))
        if bias is not None and bias.requires_grad:
            bias._acc(g.reshape(-1, c_out).sum(axis=0))
        if x.requires_grad:
            gcols = (g @ wflat.T).reshape(B, L, K, c_in)
            gxp = np.zeros_like(xp)
            for k in range(K):
                gxp[:, k:k + L] += gcols[:, :, k]
            x._acc(gxp[:, pad:pad + L])
    return _record(out, ins, back)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmaxed logits."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    ls = log_softmax(logits, axis=-1)
    onehot = np.zeros(ls.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return mul(sum(mul(ls, onehot)), -1.0 / len(labels))


# -- parameters, init and optimisation ----------------------------------------

def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int | None = None,
                   fan_out: int | None = None) -> np.ndarray:
    fan_in = fan_in if fan_in is not None else shape[-2] if len(shape) > 1 else shape[0]
    fan_out = fan_out if fan_out is not None else shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamSet:
    """Named collection of parameters; ``weights`` are the penalised ones."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._weights: set[str] = set()

    def add(self, name: str, value, weight: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name}")
        p = Param(value, name)
        self._params[name] = p
        if weight:
            self._weights.add(name)
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def weights(self) -> list[Tensor]:
        return [p for n, p in self._params.items() if n in self._weights]

    def is_weight(self, name: str) -> bool:
        return name in self._weights

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, p in self._params.items():
            if n not in state:
                raise ShapeMismatch(f"checkpoint lacks parameter {n}")
            v = np.asarray(state[n], dtype=np.float64)
            if v.shape != p.shape:
                raise ShapeMismatch(f"parameter {n}: checkpoint shape {v.shape} != {p.shape}")
            p.data = v.copy()


class Adam:
    """Adam with decoupled weight decay on penalised weights."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, decay_names: set[str] | None = None):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.weight_decay = weight_decay
        self.decay_names = decay_names
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if self.weight_decay and (self.decay_names is None or p.name in self.decay_names):
                p.data *= 1.0 - self.lr * self.weight_decay
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must build its loss from the current ``params`` values on every call.
    The error per entry is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise NonFiniteLoss("loss is not finite at the probe point")
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NonFiniteLoss(f"non-finite loss probing {p.name}[{i}]")
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(gflat[i] - fd) / max(1.0, abs(fd)))
    return worst


# -- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, groups: dict[str, ParamSet], meta: dict | None = None) -> None:
    doc = {"format_version": CHECKPOINT_VERSION, "meta": meta or {}, "params": {}}
    for gname, ps in groups.items():
        for p in ps:
            doc["params"][f"{gname}/{p.name}"] = {"shape": list(p.shape), "values": p.data.reshape(-1).tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for key, rec in doc["params"].items():
        gname, pname = key.split("/", 1)
        groups.setdefault(gname, {})[pname] = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
    return groups, doc.get("meta", {})
