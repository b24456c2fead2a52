"""Parameter containers and the small layers shared by every model."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_param(rng: np.random.Generator, shape, fan_in: int, name: str | None = None) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones_param(shape, name: str | None = None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


class Module:
    """Collects trainable tensors from attributes, recursively, in definition order."""

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
            elif isinstance(val, Module):
                out.extend(val.named_params(name + "."))
            elif isinstance(val, (list, tuple)) and val and isinstance(val[0], Module):
                for i, m in enumerate(val):
                    out.extend(m.named_params(f"{name}.{i}."))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {n}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
            p.zero_grad()


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.weight = uniform_param(rng, (d_in, d_out), d_in)
        self.bias = zeros_param((d_out,)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return T.add(y, self.bias) if self.bias is not None else y


class Embedding(Module):
    def __init__(self, rng, num: int, dim: int):
        # no fan-in for a lookup table; unit-scale uniform keeps LN inputs well conditioned
        self.weight = uniform_param(rng, (num, dim), 1)

    def __call__(self, ids) -> Tensor:
        return T.embedding_lookup(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = ones_param((dim,))
        self.beta = zeros_param((dim,))
        self._eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self._eps)


class LSTMCell(Module):
    """Standard LSTM cell; gate order (input, forget, output, candidate)."""

    def __init__(self, rng, d_in: int, hidden: int):
        self.w_x = uniform_param(rng, (d_in, 4 * hidden), d_in)
        self.w_h = uniform_param(rng, (hidden, 4 * hidden), hidden)
        self.bias = zeros_param((4 * hidden,))
        self._hidden = hidden

    def __call__(self, x, h, c, x_proj=None):
        H = self._hidden
        pre = T.add(x_proj if x_proj is not None else T.matmul(x, self.w_x), T.matmul(h, self.w_h))
        pre = T.add(pre, self.bias)
        i = T.sigmoid(pre[..., 0:H])
        f = T.sigmoid(pre[..., H:2 * H])
        o = T.sigmoid(pre[..., 2 * H:3 * H])
        g = T.tanh(pre[..., 3 * H:4 * H])
        c_new = T.add(T.mul(f, c), T.mul(i, g))
        h_new = T.mul(o, T.tanh(c_new))
        return h_new, c_new


class BiLSTM(Module):
    """One or more stacked bidirectional layers over a (B, T, D) batch."""

    def __init__(self, rng, d_in: int, hidden: int, layers: int = 1):
        self.fwd = []
        self.bwd = []
        d = d_in
        for _ in range(layers):
            self.fwd.append(LSTMCell(rng, d, hidden))
            self.bwd.append(LSTMCell(rng, d, hidden))
            d = 2 * hidden
        self._hidden = hidden

    def __call__(self, x: Tensor, lengths=None) -> Tensor:
        """Right-padded batches: the backward pass starts at each sequence's last real token."""
        B, L, _ = x.shape
        H = self._hidden
        live = None
        if lengths is not None and np.any(np.asarray(lengths) < L):
            live = (np.arange(L)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
        for cf, cb in zip(self.fwd, self.bwd):
            xf = T.matmul(x, cf.w_x)
            xb = T.matmul(x, cb.w_x)
            zeros = np.zeros((B, H))
            h, c = zeros, zeros
            outs_f = []
            for t in range(L):
                h, c = cf(None, h, c, x_proj=xf[:, t])
                outs_f.append(h)
            h, c = zeros, zeros
            outs_b = [None] * L
            for t in reversed(range(L)):
                h_new, c_new = cb(None, h, c, x_proj=xb[:, t])
                if live is not None and not live[:, t].all():
                    k = live[:, t:t + 1]
                    h_new = T.add(T.mul(h_new, k), T.mul(h, 1.0 - k))
                    c_new = T.add(T.mul(c_new, k), T.mul(c, 1.0 - k))
                h, c = h_new, c_new
                outs_b[t] = h
            x = T.concat([T.stack(outs_f, axis=1), T.stack(outs_b, axis=1)], axis=-1)
        return x


def pair_features(h1, h2) -> Tensor:
    """[h1; h2; h1 * h2; |h1 - h2|]"""
    return T.concat([h1, h2, T.mul(h1, h2), T.abs_(T.sub(h1, h2))], axis=-1)


class PairRelationHead(Module):
    """One-hidden-layer ReLU MLP over the four-block pair feature."""

    def __init__(self, rng, dim: int, num_classes: int = 7):
        self.hidden = Linear(rng, 4 * dim, 2 * dim)
        self.out = Linear(rng, 2 * dim, num_classes)

    def __call__(self, h1, h2) -> Tensor:
        return self.out(T.relu(self.hidden(pair_features(h1, h2))))


def pair_relation_head(h1, h2, head: PairRelationHead) -> Tensor:
    return head(h1, h2)
