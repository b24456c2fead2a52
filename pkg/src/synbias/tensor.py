"""Dense float64 tensors with a recorded tape for reverse-mode gradients.

Operations record themselves on the tape that is active in the current
thread (``with Tape() as tape: ...``) whenever one of their inputs requires a
gradient.  Outside a tape context the same functions just compute values.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericalInstabilityError, ShapeError

_tls = threading.local()
_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "uid")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self.uid = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("op_id", "kind", "inputs", "output", "backward")

    def __init__(self, op_id, kind, inputs, output, backward):
        self.op_id = op_id
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Records are appended in execution order, so every input of a record was
    produced earlier on the tape (or is a leaf).
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_tls, "tape", None)
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.tape = self._prev

    def __len__(self) -> int:
        return len(self.records)

    def record(self, kind, inputs, output, backward) -> None:
        self.records.append(_Record(len(self.records), kind, inputs, output, backward))
        self._produced.add(output.uid)

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

        Leaves listed in ``params`` that the loss does not reach keep their
        current gradient (zero after ``zero_grad``).
        """
        backward(self, loss, params)


def current_tape() -> Tape | None:
    return getattr(_tls, "tape", None)


class no_grad:
    """Suspend recording inside the block."""

    def __enter__(self):
        self._prev = getattr(_tls, "tape", None)
        _tls.tape = None

    def __exit__(self, *exc):
        _tls.tape = self._prev


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)
    grads: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    produced = tape._produced
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.uid, None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.uid in produced:
                prev = grads.get(inp.uid)
                grads[inp.uid] = gi if prev is None else prev + gi
            else:
                inp.grad += gi
    if loss.uid not in produced and loss.requires_grad:
        loss.grad += 1.0


# ---------------------------------------------------------------------------
# primitive plumbing
# ---------------------------------------------------------------------------

def _finish(kind: str, out: np.ndarray, inputs: Sequence[Tensor], bwd: Callable) -> Tensor:
    tape = current_tape()
    if not np.all(np.isfinite(out)):
        op_id = len(tape.records) if tape is not None else -1
        raise NumericalInstabilityError(f"non-finite output from {kind} (op id {op_id})")
    needs = any(t.requires_grad for t in inputs)
    res = Tensor.__new__(Tensor)
    res.data = out
    res.name = None
    res.uid = next(_ids)
    if needs and tape is not None:
        res.requires_grad = True
        res.grad = None
        tape.record(kind, tuple(inputs), res, bwd)
    else:
        res.requires_grad = False
        res.grad = None
    return res


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _finish("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _finish("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _finish("mul", ad * bd, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    if np.any(b.data == 0):
        raise NumericalInstabilityError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return _finish("div", out, (a, b), bwd)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _finish("scale", a.data * c, (a,), lambda g: (g * c,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != (b.shape[-2] if b.ndim >= 2 else b.shape[0]):
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
    except ValueError as e:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape}: {e}") from None

    def bwd(g):
        ga = gb = None
        if bd.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * bd
            if b.requires_grad:
                gb = (ad * g[..., None]).reshape(-1, bd.shape[0]).sum(axis=0)
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if ad.ndim == 1:
                gb = _unbroadcast(ad[:, None] * g[..., None, :], bd.shape)
            elif bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _finish("matmul", out, (a, b), bwd)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis) for k in range(len(ts)))

    return _finish("concat", out, ts, bwd)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None

    def bwd(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(ts)))

    return _finish("stack", out, ts, bwd)


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as e:
        raise ShapeError(f"slice: {e} for shape {a.shape}") from None
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        if _has_array_index(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _finish("slice", np.array(out, dtype=np.float64, copy=True), (a,), bwd)


def _has_array_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
    return _finish("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _finish("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def embedding_lookup(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: id out of range for table {table.shape}")
    shape = table.shape

    def bwd(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _finish("embedding_lookup", table.data[ids], (table,), bwd)


def pick(a, idx) -> Tensor:
    """Select one entry along the last axis per leading position."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"pick: index shape {idx.shape} does not match {a.shape[:-1]}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return _finish("pick", out, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and normalisations
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish("sum", np.asarray(out), (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _finish("mean", np.asarray(out), (a,), bwd)


def softmax(a, axis: int = -1, where=None) -> Tensor:
    """Row softmax.  Entries where ``where`` is False get probability exactly 0."""
    a = as_tensor(a)
    x = a.data
    if where is not None:
        where = np.broadcast_to(np.asarray(where, dtype=bool), x.shape)
        x = np.where(where, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _finish("softmax", out, (a,), bwd)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out = x - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _finish("log_softmax", out, (a,), bwd)


def cumsum(a, axis: int = -1, reverse: bool = False) -> Tensor:
    a = as_tensor(a)
    if reverse:
        out = np.flip(np.cumsum(np.flip(a.data, axis), axis=axis), axis)
    else:
        out = np.cumsum(a.data, axis=axis)

    def bwd(g):
        if reverse:
            return (np.cumsum(g, axis=axis),)
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _finish("cumsum", np.ascontiguousarray(out), (a,), bwd)


def layer_norm(a, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    inputs = [a]
    out = xhat
    gd = bd = None
    if gamma is not None:
        gamma = as_tensor(gamma)
        gd = gamma.data
        out = out * gd
        inputs.append(gamma)
    if beta is not None:
        beta = as_tensor(beta)
        bd = beta.data
        out = out + bd
        inputs.append(beta)
    def bwd(g):
        gx_hat = g * gd if gd is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        res = [gx]
        if gamma is not None:
            res.append(_unbroadcast(g * xhat, gd.shape) if gamma.requires_grad else None)
        if beta is not None:
            res.append(_unbroadcast(g, bd.shape) if beta.requires_grad else None)
        return tuple(res)

    return _finish("layer_norm", out, inputs, bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is overflow-free for any finite input
    out = 0.5 + 0.5 * np.tanh(0.5 * a.data)
    return _finish("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _finish("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _finish("relu", a.data * pos, (a,), lambda g: (g * pos,))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    return _finish("elu", out, (a,), lambda g: (g * np.where(x > 0, 1.0, neg + alpha),))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _finish("abs", np.abs(x), (a,), lambda g: (g * np.sign(x),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _finish("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    if np.any(x <= 0):
        raise NumericalInstabilityError("log: non-positive input")
    return _finish("log", np.log(x), (a,), lambda g: (g / x,))


def identity(a) -> Tensor:
    return as_tensor(a)


_KINDS: dict[str, Callable] = {
    "matmul": matmul, "add": add, "sub": sub, "mul": mul, "div": div,
    "concat": concat, "stack": stack, "slice": slice_, "reshape": reshape,
    "transpose": transpose, "softmax": softmax, "log_softmax": log_softmax,
    "cumsum": cumsum, "sigmoid": sigmoid, "tanh": tanh, "relu": relu, "elu": elu,
    "abs": abs_, "exp": exp, "log": log, "sum": sum_, "mean": mean,
    "layer_norm": layer_norm, "embedding_lookup": embedding_lookup,
    "pick": pick, "scale": scale,
}

PRIMITIVES = tuple(_KINDS)


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Dispatch a primitive by name; ``attrs`` are passed through as keywords."""
    try:
        fn = _KINDS[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    if kind in ("concat", "stack"):
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
