"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is 2-D: column vectors are ``(n, 1)``, scalars ``(1, 1)``, and
batched vectors are stacked as columns.  Operations whose inputs require a
gradient append a node to the active :class:`Tape`; :func:`backward` walks
that tape in reverse.

    >>> x = Tensor([[2.0]], requires_grad=True)
    >>> backward(sum_(elemwise_mul(x, x)))
    >>> x.grad
    array([[4.]])
"""

import contextlib
import json
import struct
import threading
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .kernels import segment_sum_cols

_local = threading.local()


def _ctx():
    if not hasattr(_local, "tape"):
        _local.tape = Tape()
        _local.grad_enabled = True
        _local.checked = False
    return _local


class Tape:
    """Ordered record of executed operations.

    ``recorded`` counts every node ever appended (it survives ``clear``),
    which makes it usable as a purity probe.
    """

    def __init__(self):
        self.nodes: list = []
        self.recorded = 0

    def append(self, node):
        self.nodes.append(node)
        self.recorded += 1

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


def current_tape() -> Tape:
    return _ctx().tape


@contextlib.contextmanager
def use_tape(tape: Tape):
    """Route recording to ``tape`` for the duration of the block."""
    ctx = _ctx()
    prev, ctx.tape = ctx.tape, tape
    try:
        yield tape
    finally:
        ctx.tape = prev


@contextlib.contextmanager
def no_grad():
    ctx = _ctx()
    prev, ctx.grad_enabled = ctx.grad_enabled, False
    try:
        yield
    finally:
        ctx.grad_enabled = prev


@contextlib.contextmanager
def checked(flag: bool = True):
    """Reject non-finite values whenever a tensor is created."""
    ctx = _ctx()
    prev, ctx.checked = ctx.checked, flag
    try:
        yield
    finally:
        ctx.checked = prev


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(-1, 1)
        elif v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        if _ctx().checked and not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite value in tensor {name or ''} of shape {v.shape}")
        self.value = v
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(v) if requires_grad else None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy())

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return elemwise_mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward_fn) -> Tensor:
    """Wrap an op output; record it when some parent needs a gradient."""
    ctx = _ctx()
    out = Tensor(value)
    if ctx.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        ctx.tape.append(out)
    return out


def _bcast_kind(a_shape, b_shape, op: str) -> str:
    if a_shape == b_shape:
        return "same"
    if b_shape == (1, 1):
        return "scalar"
    if b_shape == (a_shape[0], 1):
        return "column"
    raise ValueError(f"{op}: incompatible shapes {a_shape} and {b_shape}")


def _reduce_to(g, kind):
    if kind == "same":
        return g
    if kind == "scalar":
        return np.array([[g.sum()]])
    return g.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(A: Tensor, B: Tensor) -> Tensor:
    A, B = _as_tensor(A), _as_tensor(B)
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {A.shape} and {B.shape}")

    def bw(g):
        return g @ B.value.T, A.value.T @ g

    return _result(A.value @ B.value, (A, B), bw)


def add(A: Tensor, B) -> Tensor:
    """``A + B`` with ``B`` the same shape, a column ``(n, 1)``, or a scalar."""
    A, B = _as_tensor(A), _as_tensor(B)
    kind = _bcast_kind(A.shape, B.shape, "add")

    def bw(g):
        return g, _reduce_to(g, kind)

    return _result(A.value + B.value, (A, B), bw)


def add_const(A: Tensor, c: float) -> Tensor:
    return _result(A.value + c, (A,), lambda g: (g,))


def elemwise_mul(A: Tensor, B) -> Tensor:
    A, B = _as_tensor(A), _as_tensor(B)
    kind = _bcast_kind(A.shape, B.shape, "elemwise_mul")

    def bw(g):
        return g * B.value, _reduce_to(g * A.value, kind)

    return _result(A.value * B.value, (A, B), bw)


def scale(A: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(A.value * c, (A,), lambda g: (g * c,))


def concat_rows(*ts: Tensor) -> Tensor:
    ts = tuple(_as_tensor(t) for t in ts)
    cols = {t.shape[1] for t in ts}
    if len(cols) != 1:
        raise ValueError(f"concat_rows: column counts differ {[t.shape for t in ts]}")
    cuts = np.cumsum([t.shape[0] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=0))

    return _result(np.concatenate([t.value for t in ts], axis=0), ts, bw)


def concat_cols(*ts: Tensor) -> Tensor:
    ts = tuple(_as_tensor(t) for t in ts)
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ {[t.shape for t in ts]}")
    cuts = np.cumsum([t.shape[1] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=1))

    return _result(np.concatenate([t.value for t in ts], axis=1), ts, bw)


def relu(A: Tensor) -> Tensor:
    mask = A.value > 0
    return _result(np.where(mask, A.value, 0.0), (A,), lambda g: (g * mask,))


def sigmoid(A: Tensor) -> Tensor:
    s = _stable_sigmoid(A.value)
    return _result(s, (A,), lambda g: (g * s * (1.0 - s),))


def tanh(A: Tensor) -> Tensor:
    y = np.tanh(A.value)
    return _result(y, (A,), lambda g: (g * (1.0 - y * y),))


def cos(A: Tensor) -> Tensor:
    return _result(np.cos(A.value), (A,), lambda g: (-g * np.sin(A.value),))


def log_sigmoid(A: Tensor) -> Tensor:
    x = A.value
    y = -np.logaddexp(0.0, -x)
    return _result(y, (A,), lambda g: (g * _stable_sigmoid(-x),))


def sum_(A: Tensor) -> Tensor:
    shape = A.shape
    return _result(np.array([[A.value.sum()]]), (A,), lambda g: (np.full(shape, g[0, 0]),))


def reduce_mean(A: Tensor) -> Tensor:
    n = A.value.size
    if n == 0:
        raise ValueError("reduce_mean of an empty tensor")
    shape = A.shape
    return _result(np.array([[A.value.mean()]]), (A,), lambda g: (np.full(shape, g[0, 0] / n),))


def take_cols(A: Tensor, idx) -> Tensor:
    """Gather columns ``A[:, idx]``; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    n = A.shape[1]

    def bw(g):
        return (segment_sum_cols(g, idx, n),)

    return _result(A.value[:, idx], (A,), bw)


def segment_sum(A: Tensor, seg, n: int, weights=None) -> Tensor:
    """``out[:, seg[j]] += w[j] * A[:, j]`` with constant weights ``w``."""
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape != (A.shape[1],):
        raise ValueError(f"segment_sum: {seg.shape[0]} segment ids for {A.shape[1]} columns")
    if weights is None:
        out = segment_sum_cols(A.value, seg, n)
        return _result(out, (A,), lambda g: (g[:, seg],))
    w = np.asarray(weights, dtype=np.float64).reshape(1, -1)
    out = segment_sum_cols(A.value * w, seg, n)
    return _result(out, (A,), lambda g: (g[:, seg] * w,))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor):
    """Accumulate ``d loss / d x`` into ``x.grad`` for every reachable leaf.

    Intermediate results keep their gradient in a scratch table; only
    leaves (tensors created with ``requires_grad=True``) are written.  The
    tape is cleared afterwards.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    if loss._backward is None:
        loss.grad += 1.0
        tape.clear()
        return
    if not tape.nodes or all(node is not loss for node in reversed(tape.nodes)):
        raise RuntimeError("loss was not produced on the current tape")
    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if not p.requires_grad:
                continue
            if p._backward is None:
                p.grad += pg
            else:
                k = id(p)
                if k in grads:
                    grads[k] = grads[k] + pg
                else:
                    grads[k] = pg
    for node in tape.nodes:
        node._parents = ()
        node._backward = None
    tape.clear()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction; ``step`` zeroes the gradients it consumed."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            g.fill(0.0)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def relative_error(a, b, floor: float = 1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` maps ``x`` to a scalar tensor.  The value of ``x`` is restored.
    """
    if not x.requires_grad:
        x.requires_grad = True
        x.grad = np.zeros_like(x.value)
    x.zero_grad()
    tape = Tape()
    with use_tape(tape):
        backward(f(x))
    analytic = x.grad.copy()
    numeric = np.zeros_like(x.value)
    val = x.value
    with no_grad():
        for i in np.ndindex(*val.shape):
            old = val[i]
            val[i] = old + eps
            fp = f(x).item()
            val[i] = old - eps
            fm = f(x).item()
            val[i] = old
            numeric[i] = (fp - fm) / (2.0 * eps)
    x.zero_grad()
    if analytic.size == 0:
        return 0.0
    return float(relative_error(analytic, numeric).max())


# ---------------------------------------------------------------------------
# parameter files
# ---------------------------------------------------------------------------

MAGIC = b"HTGNCKPT"
VERSION = 1


def save_params(params: dict, path):
    """Binary parameter file: magic, version, JSON index, little-endian float64 data.

    Names are written in sorted order so equal parameters give equal bytes.
    """
    names = sorted(params)
    index = []
    off = 0
    for k in names:
        v = params[k].value if isinstance(params[k], Tensor) else np.asarray(params[k])
        index.append({"name": k, "shape": list(v.shape), "offset": off})
        off += v.size
    head = json.dumps(index, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        for k in names:
            v = params[k].value if isinstance(params[k], Tensor) else np.asarray(params[k])
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_params(path) -> dict:
    """Inverse of :func:`save_params`; returns ``name -> ndarray``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a parameter file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    index = json.loads(raw[16:16 + hlen].decode("utf-8"))
    data = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    out = {}
    for e in index:
        size = int(np.prod(e["shape"]))
        out[e["name"]] = data[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return out
