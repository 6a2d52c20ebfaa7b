"""A small reverse-mode differentiation engine over numpy arrays.

The graph is rebuilt on every forward pass. ``Value.backward`` walks it in
reverse topological order; intermediate gradients are reset on each call
while leaf gradients accumulate until :func:`zero_grad` is called.
"""
from __future__ import annotations

import contextlib
import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

_DTYPE = np.float32


@contextlib.contextmanager
def default_dtype(dtype):
    """Dtype for parameters and for Values built from non-float data."""
    global _DTYPE
    old, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = old


def get_default_dtype():
    return _DTYPE


class ShapeError(ValueError):
    pass


class _KinkTape:
    """Branch decisions of piecewise ops, recorded once and replayed in order."""

    def __init__(self):
        self.mode: str | None = None
        self.tape: list[np.ndarray] = []
        self.pos = 0

    def __call__(self, decision: np.ndarray) -> np.ndarray:
        if self.mode == "record":
            self.tape.append(decision)
        elif self.mode == "replay":
            decision = self.tape[self.pos]
            self.pos += 1
        return decision


_kinks = _KinkTape()


@contextlib.contextmanager
def kink_tape(mode: str):
    """``record`` the branch taken by every rectifier/max, or ``replay`` the recording."""
    if mode == "record":
        _kinks.tape = []
    _kinks.mode, _kinks.pos = mode, 0
    try:
        yield
    finally:
        _kinks.mode = None


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(_DTYPE)
    return arr


class Value:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, data, parents: Sequence["Value"] = (), op: str = "", requires_grad: bool = False, name=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    # ------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Value{tag}(shape={self.shape}, op={self.op or 'leaf'})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # ---------------------------------------------------------- backward
    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node.parents:
                node.grad = np.zeros_like(node.data)
            elif node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.backward_fn is not None:
                node.backward_fn(node.grad)

    # --------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def parameter(data, name=None) -> Value:
    return Value(np.asarray(data, dtype=_DTYPE), requires_grad=True, name=name)


def constant(data, like: Value | None = None) -> Value:
    if isinstance(data, Value):
        return data
    arr = np.asarray(data)
    dtype = like.dtype if like is not None else (arr.dtype if np.issubdtype(arr.dtype, np.floating) else _DTYPE)
    return Value(arr.astype(dtype, copy=False))


def _pair(a, b) -> tuple[Value, Value]:
    if isinstance(a, Value) and isinstance(b, Value):
        return a, b
    if isinstance(a, Value):
        return a, constant(b, like=a)
    return constant(a, like=b), b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Value, b: Value) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _node(data, parents, op, backward) -> Value:
    out = Value(data, parents, op)
    if out.requires_grad:
        out.backward_fn = backward
    return out


# ------------------------------------------------------------- elementwise


def add(a, b) -> Value:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Value:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Value:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", bw)


def div(a, b) -> Value:
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out_data / b.data, b.shape))

    return _node(out_data, (a, b), "div", bw)


def square(x: Value) -> Value:
    return _node(x.data * x.data, (x,), "square", lambda g: x._accum(2.0 * x.data * g))


def exp(x: Value) -> Value:
    out_data = np.exp(x.data)
    return _node(out_data, (x,), "exp", lambda g: x._accum(g * out_data))


def log(x: Value) -> Value:
    return _node(np.log(x.data), (x,), "log", lambda g: x._accum(g / x.data))


def leaky_rect(x: Value, slope: float = 0.01) -> Value:
    pos = _kinks(x.data > 0)
    out_data = np.where(pos, x.data, slope * x.data).astype(x.dtype, copy=False)
    return _node(out_data, (x,), "leaky_rect", lambda g: x._accum(np.where(pos, g, slope * g)))


# ----------------------------------------------------------------- linear


def matmul(a, b) -> Value:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any number of leading axes."""
    a, b = _pair(a, b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            b._accum(a2.T @ g.reshape(-1, b.shape[1]))

    return _node(a.data @ b.data, (a, b), "matmul", bw)


# ------------------------------------------------------------------ shape


def concat(values: Sequence, axis: int = -1) -> Value:
    vals = [v if isinstance(v, Value) else None for v in values]
    like = next((v for v in vals if v is not None), None)
    vals = [constant(v, like=like) for v in values]
    nd = vals[0].ndim
    ax = axis % nd
    for v in vals[1:]:
        if v.ndim != nd or any(v.shape[i] != vals[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat(axis={axis}): incompatible shapes {vals[0].shape} and {v.shape}")
    sizes = [v.shape[ax] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for v, part in zip(vals, np.split(g, splits, axis=ax)):
            v._accum(part)

    return _node(np.concatenate([v.data for v in vals], axis=ax), vals, "concat", bw)


def reshape(x: Value, shape) -> Value:
    return _node(x.data.reshape(shape), (x,), "reshape", lambda g: x._accum(g.reshape(x.shape)))


def broadcast_to(x: Value, shape) -> Value:
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _node(np.ascontiguousarray(out), (x,), "broadcast_to", lambda g: x._accum(_unbroadcast(g, x.shape)))


def index(x: Value, key) -> Value:
    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        x._accum(full)

    return _node(x.data[key], (x,), "index", bw)


def gather_rows(x: Value, idx) -> Value:
    """Rows of a 2-D ``x`` picked by an integer table; output shape idx.shape + (C,)."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 2:
        raise ShapeError(f"gather_rows: expected a 2-D source, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx.ravel(), g.reshape(-1, x.shape[1]))
        x._accum(full)

    return _node(x.data[idx], (x,), "gather_rows", bw)


# -------------------------------------------------------------- reductions


def reduce_sum(x: Value, axis=None, keepdims: bool = False) -> Value:
    def bw(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))

    return _node(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), "reduce_sum", bw)


def reduce_mean(x: Value, axis=None, keepdims: bool = False) -> Value:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def bw(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        x._accum(np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=False))

    return _node(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), "reduce_mean", bw)


def reduce_max(x: Value, axis: int, keepdims: bool = False) -> Value:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    arg = _kinks(np.expand_dims(np.argmax(x.data, axis=axis), axis))
    out = np.take_along_axis(x.data, arg, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(x.data)
        np.put_along_axis(full, arg, g, axis=axis)
        x._accum(full)

    return _node(out if keepdims else np.squeeze(out, axis), (x,), "reduce_max", bw)


def softmax(x: Value, axis: int = -1) -> Value:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        x._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _node(s, (x,), "softmax", bw)


def log_softmax(x: Value, axis: int = -1) -> Value:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        x._accum(g - s * g.sum(axis=axis, keepdims=True))

    return _node(out, (x,), "log_softmax", bw)


def l2_norm(x: Value, axis: int = -1) -> Value:
    """Euclidean norm along ``axis``; the subgradient at 0 is taken as 0."""
    n = np.sqrt((x.data * x.data).sum(axis=axis))

    def bw(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        x._accum(np.expand_dims(scale, axis) * x.data)

    return _node(n, (x,), "l2_norm", bw)


# ------------------------------------------------------------- normalize


def normalize_channels(x: Value, gamma: Value, beta: Value, running_mean: np.ndarray | None = None,
                       running_var: np.ndarray | None = None, training: bool = True,
                       momentum: float = 0.1, eps: float = 1e-5) -> Value:
    """Per-channel normalization over every axis but the last.

    In training mode batch statistics are used and the running buffers (if
    given) are updated in place; otherwise the running buffers are used.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"normalize_channels: channel mismatch {x.shape} vs {gamma.shape}/{beta.shape}")
    axes = tuple(range(x.ndim - 1))
    m = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * (m / max(m - 1, 1))  # unbiased
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                dx = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
            else:
                dx = dxhat * inv
            x._accum(dx)

    return _node(out, (x, gamma, beta), "normalize_channels", bw)


# ------------------------------------------------------------------ losses


def cross_entropy(logits: Value, labels, ignore_mask=None) -> Value:
    """Mean negative log-likelihood over rows not flagged in ``ignore_mask``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} rows but {labels.shape} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    keep = np.ones(n, bool) if ignore_mask is None else ~np.asarray(ignore_mask, bool)
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every row is masked")
    weights = np.zeros((n, c), dtype=logits.dtype)
    weights[np.flatnonzero(keep), labels[keep]] = -1.0 / count
    return reduce_sum(mul(log_softmax(logits, axis=1), weights))


# ------------------------------------------------------------------ modules


class Module:
    """Attribute-walking container for parameters and buffers."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Value]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Value) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, np.ndarray) and key.startswith("running_"):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_buffers(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self) -> list[Value]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing, extra = sorted(expected - set(state)), sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, b in buffers.items():
            b[...] = state[name]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Dense(Module):
    """Fully connected layer, optionally followed by channel normalization and a leaky rectifier."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, norm: bool = True,
                 act: bool = True, slope: float = 0.01, gain: float = 1.0):
        self.n_in, self.n_out = n_in, n_out
        self.weight = parameter(glorot_uniform(rng, n_in, n_out, gain))
        self.bias = parameter(np.zeros(n_out))
        self.norm = norm
        self.act = act
        self.slope = slope
        if norm:
            self.gamma = parameter(np.ones(n_out))
            self.beta = parameter(np.zeros(n_out))
            self.running_mean = np.zeros(n_out, dtype=np.float64)
            self.running_var = np.ones(n_out, dtype=np.float64)

    def __call__(self, x: Value) -> Value:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense expects {self.n_in} input channels, got shape {x.shape}")
        y = matmul(x, self.weight) + self.bias
        if self.norm:
            y = normalize_channels(y, self.gamma, self.beta, self.running_mean, self.running_var, self.training)
        if self.act:
            y = leaky_rect(y, self.slope)
        return y


def zero_grad(params: Iterable[Value]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


class Adam:
    """Adaptive-moment optimizer acting on ``Value.grad`` in place."""

    def __init__(self, params: Sequence[Value], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float64) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(m) if p.grad is None else p.grad.astype(np.float64)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.dtype)


def optimizer_step(opt: Adam, params: Sequence[Value] | None = None, grads: Sequence[np.ndarray] | None = None) -> None:
    """Run one optimizer step, optionally installing ``grads`` first."""
    if grads is not None:
        for p, g in zip(params if params is not None else opt.params, grads):
            p.grad = np.asarray(g, dtype=p.dtype)
    opt.step()


# --------------------------------------------------------------- grad check


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max abs difference over the larger max magnitude, the latter floored at ``floor``.

    The floor keeps gradients that are exactly zero in theory (finite
    differences then return pure rounding noise) from reading as 100% error.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(loss_fn: Callable[[], Value], params: Sequence[Value], eps: float = 1e-4,
                    max_entries: int | None = None, seed: int = 0, floor: float = 1e-6,
                    freeze_kinks: bool = True) -> list[float]:
    """Compare reverse-mode gradients with central differences.

    ``loss_fn`` must rebuild the graph from ``params`` on every call. With
    ``max_entries`` only that many randomly chosen coordinates per tensor
    are probed. With ``freeze_kinks`` the perturbed evaluations reuse the
    rectifier/max branches taken at the base point, so a step that crosses
    a kink does not pollute the difference quotient. Returns one relative
    error per parameter.
    """
    rng = np.random.default_rng(seed)
    zero_grad(params)
    with kink_tape("record") if freeze_kinks else contextlib.nullcontext():
        loss = loss_fn()
    loss.backward()

    def evaluate() -> float:
        with kink_tape("replay") if freeze_kinks else contextlib.nullcontext():
            return loss_fn().item()

    errors = []
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + eps
            up = evaluate()
            flat[c] = orig - eps
            down = evaluate()
            flat[c] = orig
            numeric[j] = (up - down) / (2 * eps)
        errors.append(relative_error(analytic.reshape(-1)[coords], numeric, floor))
    return errors


# --------------------------------------------------------------- checkpoint

CHECKPOINT_VERSION = 1
_MAGIC = b"GEOSEG-CKPT\n"


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict | None = None) -> None:
    """Version byte, text header, then little-endian float32 payload.

    Header lines: ``config <json>``, then ``tensor <name> <d0xd1...> <offset> <count>``
    per tensor (offset in bytes from payload start), then ``end``.
    """
    lines = [f"config {json.dumps(config or {}, sort_keys=True)}"]
    payload = []
    offset = 0
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        a = np.ascontiguousarray(arr, dtype="<f4")
        shape = "x".join(str(s) for s in a.shape) or "scalar"
        lines.append(f"tensor {name} {shape} {offset} {a.size}")
        payload.append(a.tobytes())
        offset += a.nbytes
    lines.append("end")
    with Path(path).open("wb") as fh:
        fh.write(struct.pack("B", CHECKPOINT_VERSION))
        fh.write(_MAGIC)
        fh.write(("\n".join(lines) + "\n").encode())
        for chunk in payload:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw or raw[0] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    if not raw[1:].startswith(_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = 1 + len(_MAGIC)
    config: dict = {}
    entries = []
    while True:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode()
        pos = end + 1
        if line == "end":
            break
        kind, rest = line.split(" ", 1)
        if kind == "config":
            config = json.loads(rest)
        elif kind == "tensor":
            name, shape, offset, count = rest.split()
            dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            entries.append((name, dims, int(offset), int(count)))
        else:
            raise ValueError(f"{path}: bad header line {line!r}")
    tensors = {}
    for name, dims, offset, count in entries:
        start = pos + offset
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=start).reshape(dims).copy()
    return tensors, config
