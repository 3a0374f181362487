"""Minimal dense f32 tensors with reverse-mode automatic differentiation.

A :class:`Tape` records primitive ops while active (``with Tape() as t:``);
``Tape.backward`` replays them in reverse to accumulate gradients into
``Tensor.grad``. Outside a tape everything is plain forward numpy, which keeps
evaluation-mode code free of bookkeeping overhead.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "OptimizerError",
    "Adam",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class OptimizerError(RuntimeError):
    """Optimizer received unusable (NaN/Inf) gradients."""


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Topologically ordered record of primitive ops with backward rules."""

    def __init__(self):
        self._ops = []  # (out, parents, backward_fn) in creation order
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def backward(self, loss: "Tensor"):
        """Accumulate gradients of a scalar ``loss`` into every participant."""
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward call; rebuild the graph")
        self._consumed = True
        for out, parents, _ in self._ops:
            out.grad = None
            for p in parents:
                p.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward_fn in reversed(self._ops):
            if out.grad is None:
                continue
            for p, g in zip(parents, backward_fn(out.grad)):
                if g is None:
                    continue
                if p.grad is None:
                    p.grad = np.asarray(g, dtype=np.float32).reshape(p.data.shape).copy()
                else:
                    p.grad += g.reshape(p.data.shape)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """n-d f32 value; records itself onto the active tape when one is open."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _record(out: Tensor, parents, backward_fn):
    tape = _active_tape()
    if tape is not None:
        tape._ops.append((out, tuple(parents), backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise primitives ---------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")
    out = Tensor(a.data / b.data)
    return _record(
        out, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0
    return _record(out, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60.0, 60.0)))
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = Tensor(np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x))))
    s = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
    return _record(out, (a,), lambda g: (g * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(np.clip(a.data, -80.0, 80.0))
    out = Tensor(e)
    return _record(out, (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def cos(a: Tensor) -> Tensor:
    out = Tensor(np.cos(a.data))
    return _record(out, (a,), lambda g: (-g * np.sin(a.data),))


def sin(a: Tensor) -> Tensor:
    out = Tensor(np.sin(a.data))
    return _record(out, (a,), lambda g: (g * np.cos(a.data),))


def abs_(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    return _record(out, (a,), lambda g: (g * np.sign(a.data),))


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)
    return _record(out, (a,), lambda g: (2.0 * g * a.data,))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "maximum")
    mask = a.data >= b.data  # ties go to a
    out = Tensor(np.where(mask, a.data, b.data))
    return _record(
        out, (a, b),
        lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)),
    )


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "minimum")
    mask = a.data <= b.data
    out = Tensor(np.where(mask, a.data, b.data))
    return _record(
        out, (a, b),
        lambda g: (_unbroadcast(g * mask, a.shape), _unbroadcast(g * ~mask, b.shape)),
    )


# -- reductions, shaping ------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(np.float32),)

    return _record(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).astype(np.float32),)

    return _record(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    base = [s for i, s in enumerate(tensors[0].shape)]
    for t in tensors[1:]:
        probe = list(t.shape)
        probe[axis] = base[axis]
        if tuple(probe) != tuple(base):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {tensors[0].shape} on axis {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def backward(g):
        full = np.zeros(a.shape, dtype=np.float32)
        full[idx] = g
        return (full,)

    return _record(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not compose")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- softmax family -----------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = Tensor(x - lse)
    y = np.exp(x - lse)

    def backward(g):
        return (g - y * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), backward)


# -- gather / scatter / embeddings --------------------------------------


def gather(a: Tensor, rows) -> Tensor:
    """Select rows (axis 0) by integer index; duplicate indices allowed."""
    rows = np.asarray(rows, dtype=np.int64)
    out = Tensor(a.data[rows])

    def backward(g):
        full = np.zeros(a.shape, dtype=np.float32)
        np.add.at(full, rows, g)
        return (full,)

    return _record(out, (a,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    return gather(table, ids)


def scatter_mean(a: Tensor, rows, num_slots: int) -> Tensor:
    """Average rows of ``a`` into ``num_slots`` buckets; empty buckets are 0."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.shape[0] != a.shape[0]:
        raise ShapeError(f"scatter_mean: {rows.shape[0]} indices for {a.shape[0]} rows")
    counts = np.bincount(rows, minlength=num_slots).astype(np.float32)
    denom = np.maximum(counts, 1.0)
    sums = np.zeros((num_slots,) + a.shape[1:], dtype=np.float32)
    np.add.at(sums, rows, a.data)
    out = Tensor(sums / denom.reshape((-1,) + (1,) * (a.ndim - 1)))

    def backward(g):
        return (g[rows] / denom[rows].reshape((-1,) + (1,) * (a.ndim - 1)),)

    return _record(out, (a,), backward)


# -- batch norm ---------------------------------------------------------


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Normalize over axis 0. Mutates running stats in training mode."""
    if training:
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gamma.data + beta.data)

    if training:
        n = x.shape[0]

        def backward(g):
            dgamma = (g * xhat).sum(axis=0)
            dbeta = g.sum(axis=0)
            dxhat = g * gamma.data
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return (dx.astype(np.float32), dgamma, dbeta)
    else:

        def backward(g):
            dgamma = (g * xhat).sum(axis=0)
            dbeta = g.sum(axis=0)
            return ((g * gamma.data * inv).astype(np.float32), dgamma, dbeta)

    return _record(out, (x, gamma, beta), backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x average pooling of an (H, W) map; odd dims padded by edge replication."""
    h, w = x.shape
    padded = x
    if h % 2 or w % 2:
        padded = _edge_pad_even(x)
        h, w = padded.shape
    r = reshape(padded, (h // 2, 2, w // 2, 2))
    return mean(mean(r, axis=3), axis=1)


def _edge_pad_even(x: Tensor) -> Tensor:
    h, w = x.shape
    if h % 2:
        x = concat([x, slice_(x, 0, h - 1, h)], axis=0)
    if w % 2:
        x = concat([x, slice_(x, 1, w - 1, w)], axis=1)
    return x


# -- optimizer ----------------------------------------------------------


def adam_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One in-place Adam update with bias correction; ``state`` holds m, v, t."""
    if not np.all(np.isfinite(grad)):
        raise OptimizerError("non-finite gradient encountered")
    if "m" not in state:
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    m, v = state["m"], state["v"]
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype)


class Adam:
    """Adam over a name -> Tensor parameter dict."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {name: {} for name in params}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            try:
                adam_step(p.data, p.grad, self.state[name], self.lr,
                          self.beta1, self.beta2, self.eps)
            except OptimizerError as err:
                raise OptimizerError(f"parameter {name!r}: {err}") from None

    def state_arrays(self) -> dict:
        """Flat name -> ndarray view of the moment buffers, for checkpoints."""
        out = {}
        for name, st in self.state.items():
            if st:
                out[f"adam/{name}/m"] = st["m"]
                out[f"adam/{name}/v"] = st["v"]
        return out

    def state_steps(self) -> dict:
        return {name: st.get("t", 0) for name, st in self.state.items()}

    def load_state(self, arrays: dict, steps: dict):
        for name in self.params:
            st = {}
            if f"adam/{name}/m" in arrays:
                st = {"m": arrays[f"adam/{name}/m"].copy(),
                      "v": arrays[f"adam/{name}/v"].copy(),
                      "t": int(steps[name])}
            self.state[name] = st


# -- checkpoint format --------------------------------------------------

_MAGIC = b"SLN1"


def save_checkpoint(path: str, tensors: dict, meta: dict | None = None):
    """Write arrays + JSON meta: magic, u64 header length, header, f32 payload."""
    entries = {}
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        raw = arr.astype("<f4").tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": "f32", "offset": offset}
        offset += len(raw)
        blobs.append(raw)
    header = json.dumps({"tensors": entries, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Return (name -> f32 ndarray, meta dict)."""
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    tensors = {}
    for name, ent in header["tensors"].items():
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[name] = arr.reshape(shape).astype(np.float32).copy()
    return tensors, header["meta"]
