"""Unsupervised Dependency Graph Network.

A head-selective parser produces p[i, j] = P(token i depends on token j); the
fuzzy-or of p and its transpose gives a soft undirected mask that gates message
passing in a stack of competitive, gated multi-channel layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import tensor as T
from .errors import ContractError
from .nn import BiLSTM, Embedding, LayerNorm, Linear, Module, uniform_param, zeros_param
from .tensor import Tensor

ACTIVATIONS = {"tanh": T.tanh, "identity": T.identity, "relu": T.relu, "elu": T.elu}
COMPETITION_MODES = ("softmax", "sigmoid", "single")
POSITION_MODES = ("relative", "absolute")


@dataclass
class UdgnConfig:
    vocab_size: int
    dim: int = 64
    parser_hidden: int = 32
    num_tags: int = 32
    bilstm_layers: int = 1
    layers: int = 2
    channels: int = 4
    activation: str = "tanh"
    gates: bool = True
    competition: str = "softmax"
    position: str = "relative"
    max_len: int = 64

    def __post_init__(self):
        if self.competition == "single":
            self.channels = 1
        if self.dim % self.channels:
            raise ContractError(f"dim {self.dim} is not divisible by {self.channels} channels")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.competition not in COMPETITION_MODES:
            raise ContractError(f"unknown competition mode {self.competition!r}")
        if self.position not in POSITION_MODES:
            raise ContractError(f"unknown position mode {self.position!r}")


@dataclass
class DepParse:
    p: np.ndarray        # (T, T) head probabilities, rows sum to 1, zero diagonal
    m: np.ndarray        # (T, T) symmetric soft mask
    heads: np.ndarray    # (T,) 0-based head index, -1 for the root


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class Parser(Module):
    def __init__(self, rng, config: UdgnConfig):
        D, H = config.dim, config.parser_hidden
        self.word = Embedding(rng, config.vocab_size, D)
        self.tags = Embedding(rng, config.num_tags, D)
        self.tag_logits = uniform_param(rng, (config.vocab_size, config.num_tags), 1)
        self.bilstm = BiLSTM(rng, D, H, config.bilstm_layers)
        # a head-side bias adds the same score to every candidate head, so it would cancel
        self.head_proj = Linear(rng, 2 * H, H, bias=False)
        self.dep_proj = Linear(rng, 2 * H, H)
        self._hidden = H


def soft_tag_embed(ids, parser: Parser) -> Tensor:
    """Word embedding plus the tag-probability-weighted mixture of tag embeddings."""
    ids = np.asarray(ids, dtype=np.int64)
    tag_p = T.softmax(T.embedding_lookup(parser.tag_logits, ids), axis=-1)
    return T.add(parser.word(ids), T.matmul(tag_p, parser.tags.weight))


def _valid_mask(lengths, L):
    return np.arange(L)[None, :] < np.asarray(lengths)[:, None]


def parser_forward(ids, parser: Parser, lengths=None) -> Tensor:
    """Head distribution p[b, i, j] over the other (non-padding) tokens of each sentence."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    B, L = ids.shape
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths)
    if np.any(lengths < 2):
        raise ContractError("a sentence needs at least two tokens to have a head")
    h = parser.bilstm(soft_tag_embed(ids, parser), lengths)
    hd = parser.dep_proj(h)
    hh = parser.head_proj(h)
    scores = T.scale(T.matmul(hd, T.transpose(hh)), 1.0 / math.sqrt(parser._hidden))
    valid = _valid_mask(lengths, L)
    allowed = valid[:, None, :] & ~np.eye(L, dtype=bool)[None]
    # padding rows still need one admissible entry; they are zeroed afterwards
    allowed[:, :, 0] |= ~valid
    p = T.softmax(scores, axis=-1, where=allowed)
    return T.mul(p, valid[:, :, None].astype(np.float64))


def dependency_mask(p) -> Tensor:
    """m = p + p^T - p * p^T (probability that an edge exists in either direction)."""
    p = T.as_tensor(p)
    if np.any(p.data < 0) or np.any(p.data > 1):
        raise ContractError("head probabilities must lie in [0, 1]")
    pt = T.transpose(p)
    return T.sub(T.add(p, pt), T.mul(p, pt))


# ---------------------------------------------------------------------------
# dependency graph network
# ---------------------------------------------------------------------------

class DgnLayer(Module):
    def __init__(self, rng, config: UdgnConfig):
        D, K = config.dim, config.channels
        self.channel_proj = Linear(rng, D, 4 * D)
        # no output bias, so a zero mask leaves the residual stream untouched
        self.out = Linear(rng, D, D, bias=False)
        self.bias_left = zeros_param((K,))
        self.bias_right = zeros_param((K,))
        self._config = config


def channel_weights(h, layer: DgnLayer, m=None) -> tuple[Tensor, Tensor]:
    """Return (a_hat, a) with shapes (B, K, T, T): channel probabilities and masked weights."""
    q, k, _, _ = _split_channels(h, layer)
    return _competition(q, k, layer, m)


def _split_channels(h, layer: DgnLayer):
    cfg = layer._config
    K = cfg.channels
    d = cfg.dim // K
    B, L, _ = h.shape
    proj = layer.channel_proj(h)                       # (B, L, 4D) laid out as K groups of [q k v g]
    proj = T.transpose(T.reshape(proj, (B, L, K, 4 * d)), (0, 2, 1, 3))   # (B, K, L, 4d)
    return (proj[..., 0:d], proj[..., d:2 * d], proj[..., 2 * d:3 * d], proj[..., 3 * d:4 * d])


def _competition(q, k, layer: DgnLayer, m):
    cfg = layer._config
    L = q.shape[2]
    e = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(cfg.dim))    # (B, K, L, L)
    if cfg.position == "relative":
        left = np.tril(np.ones((L, L)), -1)    # i > j
        right = np.triu(np.ones((L, L)), 1)    # i < j
        bias = T.add(T.mul(T.reshape(layer.bias_left, (-1, 1, 1)), left),
                     T.mul(T.reshape(layer.bias_right, (-1, 1, 1)), right))
        e = T.add(e, bias)
    if cfg.competition == "sigmoid":
        a_hat = T.sigmoid(e)
    else:
        a_hat = T.softmax(e, axis=1)
    if m is None:
        return a_hat, None
    m = T.as_tensor(m)
    return a_hat, T.mul(a_hat, T.reshape(m, (m.shape[0], 1, L, L)))


def dgn_layer(h, m, layer: DgnLayer) -> Tensor:
    cfg = layer._config
    B, L, D = h.shape
    q, k, v, g = _split_channels(h, layer)
    _, a = _competition(q, k, layer, m)
    msg = T.matmul(a, ACTIVATIONS[cfg.activation](v))       # (B, K, L, d)
    if cfg.gates:
        msg = T.mul(T.sigmoid(g), msg)
    o = T.reshape(T.transpose(msg, (0, 2, 1, 3)), (B, L, D))
    return T.add(h, layer.out(o))


class Udgn(Module):
    def __init__(self, rng, config: UdgnConfig):
        self.config = config
        self.parser = Parser(rng, config)
        self.embed = Embedding(rng, config.vocab_size, config.dim)
        if config.position == "absolute":
            self.pos = uniform_param(rng, (config.max_len, config.dim), 1)
        self.layers = [DgnLayer(rng, config) for _ in range(config.layers)]
        self.norm = LayerNorm(config.dim)
        self.head = Linear(rng, config.dim, config.vocab_size)

    def forward(self, ids, lengths=None, mask_override=None):
        """Return (contextual embeddings, vocabulary logits, p, m) for a (B, T) batch."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        B, L = ids.shape
        p = parser_forward(ids, self.parser, lengths)
        m = dependency_mask(p) if mask_override is None else T.as_tensor(mask_override)
        h = self.embed(ids)
        if self.config.position == "absolute":
            if L > self.config.max_len:
                raise ContractError(f"sentence longer than max_len={self.config.max_len}")
            h = T.add(h, self.pos[:L])
        for layer in self.layers:
            h = dgn_layer(h, m, layer)
        logits = self.head(self.norm(h))
        return h, logits, p, m

    def mlm_loss(self, ids, lengths, targets, positions) -> tuple[Tensor, int]:
        _, logits, _, _ = self.forward(ids, lengths)
        return masked_nll(logits, targets, positions)

    def parse(self, ids) -> DepParse:
        """Soft parse and Chu-Liu tree for one unpadded sentence."""
        with T.no_grad():
            p = parser_forward(np.asarray(ids)[None], self.parser)
            m = dependency_mask(p[0])
        return DepParse(p.data[0], m.data, extract_chuliu(p.data[0]))


def masked_nll(logits, targets, positions) -> tuple[Tensor, int]:
    """Summed negative log-likelihood of ``targets`` at the True entries of ``positions``."""
    positions = np.asarray(positions, dtype=bool)
    n = int(positions.sum())
    if n == 0:
        raise ContractError("no masked positions to score")
    lp = T.pick(T.log_softmax(logits, axis=-1), np.where(positions, targets, 0))
    return T.scale(T.sum_(T.mul(lp, positions.astype(np.float64))), -1.0), n


def udgn_forward(ids, model: Udgn, lengths=None):
    return model.forward(ids, lengths)


# ---------------------------------------------------------------------------
# tree extraction
# ---------------------------------------------------------------------------

def extract_argmax(p) -> np.ndarray:
    """Independent argmax head per token (0-based, ties to the smallest index); may contain cycles."""
    return np.argmax(np.asarray(p), axis=1)


def edge_scores(p) -> np.ndarray:
    """score[i, j] = log(p[i, j] + 1e-12) for head j of dependent i; -inf on the diagonal."""
    p = np.asarray(p, dtype=np.float64)
    s = np.log(p + 1e-12)
    np.fill_diagonal(s, -np.inf)
    return s


def tree_weight(scores: np.ndarray, heads) -> float:
    total = 0.0
    for i, h in enumerate(heads):
        if h >= 0:
            total += scores[i, h]
    return total


def _find_cycle(heads, root):
    n = len(heads)
    color = [0] * n
    for start in range(n):
        if color[start]:
            continue
        path = []
        v = start
        while v != -1 and v != root and color[v] == 0:
            color[v] = 1
            path.append(v)
            v = heads[v]
        if v != -1 and v != root and color[v] == 1 and v in path:
            return path[path.index(v):]
        for u in path:
            color[u] = 2
    return None


def max_arborescence(scores: np.ndarray, root: int) -> np.ndarray:
    """Chu-Liu/Edmonds maximum spanning arborescence; scores[d, h] weighs edge h -> d."""
    n = scores.shape[0]
    s = np.array(scores, dtype=np.float64)
    s[:, :] = np.where(np.eye(n, dtype=bool), -np.inf, s)
    s[root, :] = -np.inf
    heads = np.full(n, -1)
    for d in range(n):
        if d != root:
            heads[d] = int(np.argmax(s[d]))
    cycle = _find_cycle(list(heads), root)
    if cycle is None:
        return heads
    cyc = set(cycle)
    rest = [v for v in range(n) if v not in cyc]
    idx = {v: k for k, v in enumerate(rest)}
    c = len(rest)
    m = c + 1
    sub = np.full((m, m), -np.inf)
    enter_from = {}      # contracted head h' -> dependent inside the cycle
    leave_to = {}        # dependent d' outside -> head inside the cycle
    for d in rest:
        for h in rest:
            if d != h:
                sub[idx[d], idx[h]] = s[d, h]
        best_h = max(cycle, key=lambda h: (s[d, h], -h))
        sub[idx[d], c] = s[d, best_h]
        leave_to[d] = best_h
    for h in rest:
        best_val, best_d = -np.inf, None
        for d in cycle:
            val = s[d, h] - s[d, heads[d]]
            if best_d is None or val > best_val:
                best_val, best_d = val, d
        sub[c, idx[h]] = best_val
        enter_from[h] = best_d
    sub_heads = max_arborescence(sub, idx[root])
    out = np.full(n, -1)
    for d in rest:
        hh = sub_heads[idx[d]]
        if hh == -1:
            continue
        out[d] = leave_to[d] if hh == c else rest[hh]
    for d in cycle:
        out[d] = heads[d]
    h_in = rest[sub_heads[c]]
    out[enter_from[h_in]] = h_in
    return out


def extract_chuliu(p) -> np.ndarray:
    """Best rooted spanning tree over all root choices; returns 0-based heads with -1 at the root."""
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    if n < 2 or p.shape != (n, n):
        raise ContractError("extract_chuliu needs a square matrix over at least two tokens")
    scores = edge_scores(p)
    best, best_w = None, -np.inf
    for r in range(n):
        heads = max_arborescence(scores, r)
        w = tree_weight(scores, heads)
        if w > best_w:
            best, best_w = heads, w
    return best


def to_conll_heads(heads) -> np.ndarray:
    """0-based heads with -1 root -> 1-based heads with 0 root."""
    return np.asarray(heads) + 1


# ---------------------------------------------------------------------------
# channel / dependency-type correlation
# ---------------------------------------------------------------------------

def channel_type_pcc(channel_probs, type_indicators) -> np.ndarray:
    """Pearson correlation between every channel column and every type column.

    Pairs with a zero-variance column are NaN (undefined).
    """
    A = np.asarray(channel_probs, dtype=np.float64)
    Y = np.asarray(type_indicators, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if A.shape[0] != Y.shape[0] or A.shape[0] < 2:
        raise ContractError("need the same number (>= 2) of edges for channels and types")
    Ac = A - A.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    cov = Ac.T @ Yc / A.shape[0]
    sa = np.sqrt((Ac * Ac).mean(axis=0))
    sy = np.sqrt((Yc * Yc).mean(axis=0))
    out = np.full(cov.shape, np.nan)
    for k, l in product(range(A.shape[1]), range(Y.shape[1])):
        if sa[k] > 0 and sy[l] > 0:
            out[k, l] = cov[k, l] / (sa[k] * sy[l])
    return out


def gold_edge_channel_probs(a_hat: np.ndarray, heads) -> np.ndarray:
    """Channel probabilities for child -> parent propagation on each gold edge.

    ``a_hat`` is (K, T, T) with a_hat[k, i, j] the weight of channel k carrying
    information from j to i; for child c with parent h the entry is a_hat[:, h, c].
    ``heads`` are 0-based with -1 for the root, which contributes no edge.
    """
    rows = [a_hat[:, h, c] for c, h in enumerate(heads) if h >= 0]
    return np.array(rows)
