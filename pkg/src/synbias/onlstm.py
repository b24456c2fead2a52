"""ON-LSTM: LSTM with cummax master gates and syntactic-distance readout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, VocabularyError
from .nn import Embedding, Linear, Module, PairRelationHead, uniform_param, zeros_param
from .tensor import Tensor
from .trees import distance_to_tree  # noqa: F401  (re-exported for callers)


@dataclass
class OnLstmConfig:
    input_dim: int
    hidden_dim: int
    chunk_factor: int
    num_layers: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        if self.hidden_dim % self.chunk_factor:
            raise ContractError(
                f"hidden_dim {self.hidden_dim} is not divisible by chunk_factor {self.chunk_factor}")

    @property
    def master_dim(self) -> int:
        return self.hidden_dim // self.chunk_factor


@dataclass
class OnLstmStepOutput:
    h: Tensor
    c: Tensor
    master_forget: Tensor
    master_input: Tensor
    distance: Tensor


def cummax(logits, axis: int = -1) -> Tensor:
    logits = T.as_tensor(logits)
    if logits.shape[axis] == 0:
        raise ContractError("cummax of an empty vector")
    return T.cumsum(T.softmax(logits, axis=axis), axis=axis)


def expand_chunks(g, chunk: int) -> Tensor:
    """Repeat each master-gate entry ``chunk`` times along the last axis."""
    g = T.as_tensor(g)
    lead = g.shape[:-1]
    rep = T.mul(T.reshape(g, lead + (g.shape[-1], 1)), np.ones((1,) * len(lead) + (1, chunk)))
    return T.reshape(rep, lead + (g.shape[-1] * chunk,))


def combine_master_gates(mf, mi, f, i):
    """Return (f_hat, i_hat, overlap) from chunk-expanded master gates and LSTM gates."""
    mf, mi, f, i = (T.as_tensor(x) for x in (mf, mi, f, i))
    if not (mf.shape == mi.shape == f.shape == i.shape):
        raise ContractError(f"gate shapes differ: {mf.shape}, {mi.shape}, {f.shape}, {i.shape}")
    w = T.mul(mf, mi)
    f_hat = T.add(T.mul(f, w), T.sub(mf, w))
    i_hat = T.add(T.mul(i, w), T.sub(mi, w))
    return f_hat, i_hat, w


class OnLstmCell(Module):
    """Gate layout of the fused projection: [mf (Dm) | mi (Dm) | i | f | o | c_hat]."""

    def __init__(self, rng, d_in: int, hidden: int, chunk: int):
        if hidden % chunk:
            raise ContractError("hidden size must be a multiple of the chunk factor")
        dm = hidden // chunk
        width = 2 * dm + 4 * hidden
        self.w_x = uniform_param(rng, (d_in, width), d_in)
        self.w_h = uniform_param(rng, (hidden, width), hidden)
        self.bias = zeros_param((width,))
        self._hidden = hidden
        self._chunk = chunk
        self._dm = dm

    def step(self, x, h_prev, c_prev, x_proj=None) -> OnLstmStepOutput:
        D, dm, C = self._hidden, self._dm, self._chunk
        pre = T.add(x_proj if x_proj is not None else T.matmul(x, self.w_x), T.matmul(h_prev, self.w_h))
        pre = T.add(pre, self.bias)
        mf = cummax(pre[..., 0:dm])
        mi = T.sub(1.0, cummax(pre[..., dm:2 * dm]))
        o0 = 2 * dm
        i = T.sigmoid(pre[..., o0:o0 + D])
        f = T.sigmoid(pre[..., o0 + D:o0 + 2 * D])
        o = T.sigmoid(pre[..., o0 + 2 * D:o0 + 3 * D])
        c_hat = T.tanh(pre[..., o0 + 3 * D:o0 + 4 * D])
        f_hat, i_hat, _ = combine_master_gates(expand_chunks(mf, C), expand_chunks(mi, C), f, i)
        c = T.add(T.mul(f_hat, c_prev), T.mul(i_hat, c_hat))
        h = T.mul(o, T.tanh(c))
        dist = T.sub(float(dm), T.sum_(mf, axis=-1))
        return OnLstmStepOutput(h, c, mf, mi, dist)


def onlstm_step(x_t, h_prev, c_prev, cell: OnLstmCell) -> OnLstmStepOutput:
    return cell.step(x_t, h_prev, c_prev)


class OnLstmEncoder(Module):
    def __init__(self, rng, vocab_size: int, config: OnLstmConfig):
        self.config = config
        self.embed = Embedding(rng, vocab_size, config.input_dim)
        self.cells = []
        d = config.input_dim
        for _ in range(config.num_layers):
            self.cells.append(OnLstmCell(rng, d, config.hidden_dim, config.chunk_factor))
            d = config.hidden_dim
        self._vocab = vocab_size

    def forward(self, ids: np.ndarray, lengths: np.ndarray | None = None):
        """Run all layers over a (B, T) id batch.

        Returns per-layer lists of hidden states (each (B, T, D)) and per-layer
        distance tensors of shape (B, T); column t holds the estimate taken
        while reading token t.  Padded steps (t >= length) keep the state frozen.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.size and (ids.min() < 0 or ids.max() >= self._vocab):
            raise VocabularyError(f"token id outside vocabulary of size {self._vocab}")
        B, L = ids.shape
        D = self.config.hidden_dim
        x = self.embed(ids)
        hiddens, dists = [], []
        for cell in self.cells:
            xp = T.matmul(x, cell.w_x)
            h = Tensor(np.zeros((B, D)))
            c = Tensor(np.zeros((B, D)))
            hs, ds = [], []
            for t in range(L):
                out = cell.step(None, h, c, x_proj=xp[:, t])
                if lengths is not None and np.any(lengths <= t):
                    keep = (lengths <= t).astype(np.float64)[:, None]
                    h = T.add(T.mul(h, keep), T.mul(out.h, 1.0 - keep))
                    c = T.add(T.mul(c, keep), T.mul(out.c, 1.0 - keep))
                else:
                    h, c = out.h, out.c
                hs.append(h)
                ds.append(out.distance)
            x = T.stack(hs, axis=1)
            hiddens.append(x)
            dists.append(T.stack(ds, axis=1))
        return hiddens, dists


def encode_sequence(tokens, encoder: OnLstmEncoder):
    """Encode one sentence; returns (per-layer hidden arrays, per-layer distances)."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ContractError("encode_sequence needs a non-empty 1-D token sequence")
    with T.no_grad():
        hiddens, dists = encoder.forward(ids[None])
    # the estimate at step t belongs to the boundary before token t; t=0 has none
    return [h.data[0] for h in hiddens], [d.data[0, 1:].copy() for d in dists]


PARSE_LAYER = 1   # second layer, or the last one when there are fewer


def parse_distances(dists: list) -> Tensor:
    """Pick the layer whose distances are used for parsing."""
    return dists[min(PARSE_LAYER, len(dists) - 1)]


class OnLstmLM(Module):
    """Next-token language model on top of the encoder (untied output layer)."""

    def __init__(self, rng, vocab_size: int, config: OnLstmConfig):
        self.encoder = OnLstmEncoder(rng, vocab_size, config)
        self.out = Linear(rng, config.hidden_dim, vocab_size)

    def loss(self, ids: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, int]:
        """Summed NLL of tokens 1..len-1 given their prefixes, and the count of targets."""
        ids = np.asarray(ids)
        hiddens, _ = self.encoder.forward(ids[:, :-1], lengths - 1)
        logp = T.log_softmax(self.out(hiddens[-1]), axis=-1)
        tgt = ids[:, 1:]
        valid = (np.arange(tgt.shape[1])[None, :] < (lengths - 1)[:, None]).astype(np.float64)
        nll = T.scale(T.sum_(T.mul(T.pick(logp, tgt), valid)), -1.0)
        return nll, int(valid.sum())


class OnLstmClassifier(Module):
    def __init__(self, rng, vocab_size: int, config: OnLstmConfig, num_classes: int):
        self.encoder = OnLstmEncoder(rng, vocab_size, config)
        self.hidden = Linear(rng, config.hidden_dim, 2 * config.hidden_dim)
        self.out = Linear(rng, 2 * config.hidden_dim, num_classes)

    def logits(self, ids, lengths) -> Tensor:
        hiddens, _ = self.encoder.forward(ids, lengths)
        final = hiddens[-1][:, -1]
        return self.out(T.relu(self.hidden(final)))


class OnLstmPairClassifier(Module):
    def __init__(self, rng, vocab_size: int, config: OnLstmConfig, num_classes: int = 7):
        self.encoder = OnLstmEncoder(rng, vocab_size, config)
        self.head = PairRelationHead(rng, config.hidden_dim, num_classes)

    def logits(self, ids1, len1, ids2, len2) -> Tensor:
        L = max(ids1.shape[1], ids2.shape[1])
        B = ids1.shape[0]
        both = np.zeros((B + ids2.shape[0], L), dtype=np.int64)
        both[:B, : ids1.shape[1]] = ids1
        both[B:, : ids2.shape[1]] = ids2
        hiddens, _ = self.encoder.forward(both, np.concatenate([len1, len2]))
        final = hiddens[-1][:, -1]
        return self.head(final[:B], final[B:])
