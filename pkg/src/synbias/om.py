"""Ordered Memory: a soft stack driven by masked stick-breaking attention.

Slots are numbered 1..N in the usual description; arrays here index them
0..N-1, so "slot N" (the bottom of the stack, always available) is index N-1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, VocabularyError
from .nn import Embedding, LayerNorm, Linear, Module, PairRelationHead, pair_features, pair_relation_head, uniform_param, zeros_param  # noqa: F401
from .tensor import Tensor
from .trees import Tree

log = logging.getLogger(__name__)


@dataclass
class OmConfig:
    slots: int = 8
    dim: int = 64
    input_dim: int = 64
    att_hidden: int = 64
    cell_hidden: int = 128

    def __post_init__(self):
        if self.slots < 2:
            raise ContractError("Ordered Memory needs at least 2 slots")
        if min(self.dim, self.input_dim, self.att_hidden, self.cell_hidden) <= 0:
            raise ContractError("all dimensions must be positive")


@dataclass
class OmState:
    memory: Tensor       # (B, N, D)
    candidates: Tensor   # (B, N, D)
    cum: Tensor          # (B, N) cumulative attention of the previous step


@dataclass
class OmTrace:
    p: np.ndarray                      # (B, T, N)
    output: Tensor                     # (B, D), last candidate slot after the final step
    memories: list = field(default_factory=list)   # optional per-step (M_t, M^_t) arrays


class OrderedMemory(Module):
    def __init__(self, rng, vocab_size: int, config: OmConfig):
        N, D = config.slots, config.dim
        self.config = config
        self.embed = Embedding(rng, vocab_size, config.input_dim)
        self.proj = Linear(rng, config.input_dim, D)
        # one affine shared by the input projection and the cell output
        self.ln = LayerNorm(D)
        # score network over [candidate; input]; an output bias would cancel in the normalisation
        self.att_w1 = uniform_param(rng, (2 * D, config.att_hidden), 2 * D)
        self.att_b1 = zeros_param((config.att_hidden,))
        self.att_w2 = uniform_param(rng, (config.att_hidden,), config.att_hidden)
        # cell MLP over [candidate below; memory slot]
        self.cell_w1 = uniform_param(rng, (2 * D, config.cell_hidden), 2 * D)
        self.cell_b1 = zeros_param((config.cell_hidden,))
        self.cell_w2 = uniform_param(rng, (config.cell_hidden, 4 * D), config.cell_hidden)
        self.cell_b2 = zeros_param((4 * D,))
        self.mem0 = uniform_param(rng, (N, D), D)
        self.cand0 = uniform_param(rng, (N, D), D)
        self._vocab = vocab_size

    def initial_state(self, batch: int) -> OmState:
        N = self.config.slots
        ones = np.ones((batch, 1, 1))
        return OmState(T.mul(self.mem0, ones), T.mul(self.cand0, ones), Tensor(np.zeros((batch, N))))


def project_input(x, om: OrderedMemory) -> Tensor:
    """LN(W x + b) with the shared affine."""
    return om.ln(om.proj(x))


def masked_attention(x_tilde, candidates, cum_prev, om: OrderedMemory, x_score=None) -> Tensor:
    """Distribution over slots; slot i is weighted by the previous cumulative mass at slot i+1."""
    D, N = om.config.dim, om.config.slots
    w_cand = om.att_w1[:D]
    if x_score is None:
        x_score = T.matmul(x_tilde, om.att_w1[D:])
    hid = T.tanh(T.add(T.add(T.matmul(candidates, w_cand), T.reshape(x_score, (-1, 1, x_score.shape[-1]))),
                       om.att_b1))
    alpha = T.scale(T.matmul(hid, om.att_w2), 1.0 / math.sqrt(N))
    # the shift only guards exp(); it cancels in the ratio, so it is held constant
    beta = T.exp(T.sub(alpha, alpha.data.max(axis=-1, keepdims=True)))
    cum_prev = T.as_tensor(cum_prev)
    B = cum_prev.shape[0]
    mask = T.concat([cum_prev[:, 1:], np.ones((B, 1))], axis=-1)
    masked = T.mul(beta, mask)
    return T.div(masked, T.sum_(masked, axis=-1, keepdims=True))


def gated_recursive_cell(slot, below, om: OrderedMemory, slot_proj=None) -> Tensor:
    """Compose a memory slot with the candidate directly below it."""
    D = om.config.dim
    if slot_proj is None:
        slot_proj = T.matmul(slot, om.cell_w1[D:])
    hid = T.relu(T.add(T.add(slot_proj, T.matmul(below, om.cell_w1[:D])), om.cell_b1))
    out = T.add(T.matmul(hid, om.cell_w2), om.cell_b2)
    gates = T.sigmoid(out[..., 0:3 * D])
    vg = gates[..., 0:D]
    hg = gates[..., D:2 * D]
    cg = gates[..., 2 * D:3 * D]
    u = out[..., 3 * D:4 * D]
    mixed = T.add(T.add(T.mul(vg, below), T.mul(hg, slot)), T.mul(cg, u))
    return om.ln(mixed)


def om_step(x_tilde, state: OmState, om: OrderedMemory, forced_p=None, x_score=None):
    """One step of the memory update; returns (new state, p_t)."""
    N = om.config.slots
    if forced_p is None:
        p = masked_attention(x_tilde, state.candidates, state.cum, om, x_score=x_score)
    else:
        p = T.as_tensor(forced_p)
    cum = T.cumsum(p, axis=-1)
    rcum = T.cumsum(p, axis=-1, reverse=True)
    B = p.shape[0]
    r3 = T.reshape(rcum, (B, N, 1))
    memory = T.add(T.mul(state.memory, T.sub(1.0, r3)), T.mul(state.candidates, r3))
    c3 = T.reshape(cum, (B, N, 1))
    keep_x = T.sub(1.0, c3)
    below = x_tilde
    cands = []
    for i in range(N):
        o = gated_recursive_cell(memory[:, i], below, om)
        below = T.add(T.mul(x_tilde, keep_x[:, i]), T.mul(o, c3[:, i]))
        cands.append(below)
    return OmState(memory, T.stack(cands, axis=1), cum), p


def _freeze(old: Tensor, new: Tensor, keep: np.ndarray) -> Tensor:
    return T.add(T.mul(old, keep), T.mul(new, 1.0 - keep))


def om_forward(ids, om: OrderedMemory, lengths=None, forced_p=None, record_memory: bool = False) -> OmTrace:
    """Run the memory over a (B, T) id batch (or a single 1-D sequence).

    ``forced_p`` (B, T, N) replaces the attention distributions, which turns the
    model into a discrete stack machine when the rows are one-hot.  Steps past a
    sequence's length leave its state unchanged.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    B, L = ids.shape
    if L == 0:
        raise ContractError("om_forward needs a non-empty sequence")
    if ids.min() < 0 or ids.max() >= om._vocab:
        raise VocabularyError(f"token id outside vocabulary of size {om._vocab}")
    lengths = np.full(B, L) if lengths is None else np.asarray(lengths)
    D = om.config.dim
    xt = project_input(om.embed(ids), om)
    xs = T.matmul(xt, om.att_w1[D:])
    state = om.initial_state(B)
    ps, mems = [], []
    for t in range(L):
        fp = None if forced_p is None else np.asarray(forced_p)[:, t]
        new, p = om_step(xt[:, t], state, om, forced_p=fp, x_score=xs[:, t])
        done = lengths <= t
        if done.any():
            k3 = done.astype(np.float64)[:, None, None]
            new = OmState(_freeze(state.memory, new.memory, k3),
                          _freeze(state.candidates, new.candidates, k3),
                          _freeze(state.cum, new.cum, k3[:, :, 0]))
        state = new
        cd = state.cum.data
        if np.any(np.diff(cd, axis=-1) < -1e-6):
            log.warning("cumulative attention lost monotonicity at step %d", t)
        ps.append(p.data)
        if record_memory:
            mems.append((state.memory.data.copy(), state.candidates.data.copy()))
    return OmTrace(np.stack(ps, axis=1), state.candidates[:, om.config.slots - 1], mems)


def om_parse(ps) -> Tree:
    """Greedy shift-reduce tree from per-step attention (argmax ties go to the lowest slot)."""
    ps = np.asarray(ps, dtype=np.float64)
    n = len(ps)
    if n == 0:
        raise ContractError("om_parse needs at least one step")
    ys = [int(np.argmax(p)) + 1 for p in ps]
    stack: list = [0]
    head = ys[0] - 1
    for i in range(1, n):
        d = ys[i] - head
        for _ in range(max(d, 0)):
            if len(stack) < 2:
                break
            right = stack.pop()
            left = stack.pop()
            stack.append((left, right))
        stack.append(i)
        head = ys[i] - 1
    while len(stack) > 1:
        right = stack.pop()
        left = stack.pop()
        stack.append((left, right))
    return stack[0]


class OmClassifier(Module):
    def __init__(self, rng, vocab_size: int, config: OmConfig, num_classes: int):
        self.om = OrderedMemory(rng, vocab_size, config)
        self.hidden = Linear(rng, config.dim, 2 * config.dim)
        self.out = Linear(rng, 2 * config.dim, num_classes)

    def logits(self, ids, lengths) -> Tensor:
        h = om_forward(ids, self.om, lengths).output
        return self.out(T.relu(self.hidden(h)))

    def trace(self, ids, lengths) -> OmTrace:
        with T.no_grad():
            return om_forward(ids, self.om, lengths)


class OmPairClassifier(Module):
    def __init__(self, rng, vocab_size: int, config: OmConfig, num_classes: int = 7):
        self.om = OrderedMemory(rng, vocab_size, config)
        self.head = PairRelationHead(rng, config.dim, num_classes)

    def logits(self, ids1, len1, ids2, len2) -> Tensor:
        L = max(ids1.shape[1], ids2.shape[1])
        both = np.zeros((ids1.shape[0] + ids2.shape[0], L), dtype=np.int64)
        both[: ids1.shape[0], : ids1.shape[1]] = ids1
        both[ids1.shape[0]:, : ids2.shape[1]] = ids2
        h = om_forward(both, self.om, np.concatenate([len1, len2])).output
        B = ids1.shape[0]
        return self.head(h[:B], h[B:])
