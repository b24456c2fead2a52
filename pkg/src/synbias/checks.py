"""Finite-difference gradient checks of whole (tiny) models."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .gradcheck import grad_check
from .om import OmClassifier, OmConfig
from .onlstm import OnLstmConfig, OnLstmLM
from .rng import make_rng
from .udgn import Udgn, UdgnConfig

TOLERANCE = 1e-4


def generic_point(model, seed: int, scale: float = 1.0) -> None:
    """Move every parameter to a uniform(-scale, scale) draw.

    At initialisation several gradients are ~1e-8 (zero initial states, zero
    biases), where central differences are dominated by rounding; a generic
    point keeps the comparison meaningful.
    """
    rng = make_rng(seed + 7)
    for _, p in model.named_params():
        p.data = rng.uniform(-scale, scale, size=p.shape)


def _report(model, loss_fn, seed: int) -> tuple[float, str]:
    generic_point(model, seed)
    named = model.named_params()
    err, at = grad_check(lambda rng: loss_fn(), [p for _, p in named], seed=seed, return_worst=True)
    where = "" if at is None else f"{named[at[0]][0]}[{at[1]}]"
    return err, where


def onlstm_gradcheck(dim: int = 8, chunk: int = 2, vocab: int = 6, length: int = 4, seed: int = 0):
    model = OnLstmLM(make_rng(seed), vocab, OnLstmConfig(dim, dim, chunk))
    ids = make_rng(seed + 1).integers(0, vocab, size=(2, length))
    lens = np.array([length, length - 1])
    return _report(model, lambda: model.loss(ids, lens)[0], seed)


def om_gradcheck(slots: int = 3, dim: int = 8, vocab: int = 6, length: int = 4, seed: int = 0):
    cfg = OmConfig(slots=slots, dim=dim, input_dim=dim, att_hidden=dim, cell_hidden=dim)
    model = OmClassifier(make_rng(seed), vocab, cfg, 3)
    ids = make_rng(seed + 1).integers(0, vocab, size=(2, length))
    lens = np.array([length, length - 1])
    labels = np.array([0, 2])

    def loss():
        logp = T.log_softmax(model.logits(ids, lens), axis=-1)
        return T.scale(T.sum_(T.pick(logp, labels)), -1.0)

    return _report(model, loss, seed)


def udgn_gradcheck(layers: int = 2, channels: int = 2, dim: int = 4, length: int = 4, vocab: int = 6,
                   seed: int = 0, **overrides):
    cfg = UdgnConfig(vocab, dim=dim, parser_hidden=3, num_tags=2, layers=layers, channels=channels, **overrides)
    model = Udgn(make_rng(seed), cfg)
    ids = make_rng(seed + 1).integers(0, vocab, size=(2, length))
    lens = np.array([length, length - 1])
    positions = np.array([[True, False, True, False], [False, True, False, False]])[:, :length]
    return _report(model, lambda: model.mlm_loss(ids, lens, ids, positions)[0], seed)


MODEL_CHECKS = {"onlstm": onlstm_gradcheck, "om": om_gradcheck, "udgn": udgn_gradcheck}
