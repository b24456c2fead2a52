"""Training loops and evaluation for the classifiers and the masked/causal language models."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericalInstabilityError, TrainingDivergedError
from .metrics import SPAN_CONVENTION, accuracy, bucketed_accuracy, uas_uuas, uf1
from .nn import Module
from .om import OmClassifier, OmConfig, OmPairClassifier, om_forward, om_parse
from .onlstm import OnLstmClassifier, OnLstmConfig, OnLstmLM, OnLstmPairClassifier, parse_distances
from .optim import Adam, clip_grad_norm
from .rng import derive
from .tasks.text import Vocab, mask_tokens
from .trees import distance_to_tree
from .udgn import Udgn, UdgnConfig, extract_argmax, extract_chuliu, parser_forward, to_conll_heads

log = logging.getLogger(__name__)

TASKS = ("listops", "logic", "mlm", "lm")
MODELS = ("om", "onlstm", "udgn")


@dataclass
class TrainConfig:
    task: str = "listops"
    model: str = "om"
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 1
    checkpoint: str = ""
    max_grad_norm: float = 5.0
    # model sizes
    dim: int = 64
    slots: int = 8
    att_hidden: int = 64
    cell_hidden: int = 128
    chunk_factor: int = 4
    layers: int = 2
    channels: int = 4
    parser_hidden: int = 32
    num_tags: int = 32
    bilstm_layers: int = 1
    activation: str = "tanh"
    gates: bool = True
    competition: str = "softmax"
    position: str = "relative"
    # data
    mask_rate: float = 0.3
    min_freq: int = 1
    dataset_id: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {MODELS}")
        for name in ("epochs", "batch_size", "lr", "eval_every", "max_grad_norm", "dim", "slots",
                     "att_hidden", "cell_hidden", "chunk_factor", "layers", "channels",
                     "parser_hidden", "num_tags", "bilstm_layers", "min_freq"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError("mask_rate must lie strictly between 0 and 1")
        allowed = {"listops": ("om", "onlstm"), "logic": ("om", "onlstm"), "mlm": ("udgn",), "lm": ("onlstm",)}
        if self.model not in allowed[self.task]:
            raise ConfigError(f"task {self.task!r} does not support model {self.model!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_flat(cls, values: dict) -> "TrainConfig":
        """Build from string (or typed) values, e.g. parsed ``key=value`` lines."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        return cls(**kwargs)


def _coerce(key: str, raw, typ: str):
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


@dataclass
class MetricReport:
    metrics: dict
    dataset_id: str
    seed: int
    config: dict
    buckets: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=dict)
    epochs_completed: int = 0
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# ---------------------------------------------------------------------------
# data containers and batching
# ---------------------------------------------------------------------------

@dataclass
class ClassificationData:
    ids: list                      # list of int sequences
    labels: np.ndarray
    ids2: list | None = None       # second sentence for pair tasks
    keys: list | None = None       # bucket key per example (e.g. operator count)
    trees: list | None = None      # gold constituency trees for UF1

    def __len__(self) -> int:
        return len(self.ids)

    def lengths(self) -> np.ndarray:
        lens = np.array([len(s) for s in self.ids])
        if self.ids2 is not None:
            lens = np.maximum(lens, [len(s) for s in self.ids2])
        return lens


@dataclass
class TextData:
    ids: list
    heads: list | None = None      # gold heads, 1-based with 0 = root

    def __len__(self) -> int:
        return len(self.ids)

    def lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.ids])


def pad_batch(seqs, pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def length_batches(lengths, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Group examples of similar length; batch order (and ties) are shuffled when ``rng`` is given."""
    lengths = np.asarray(lengths)
    n = len(lengths)
    tie = rng.permutation(n) if rng is not None else np.arange(n)
    order = np.lexsort((tie, lengths))
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def build_model(cfg: TrainConfig, vocab_size: int, num_classes: int = 0) -> Module:
    rng = derive(cfg.seed, 0)
    if cfg.model == "om":
        oc = OmConfig(cfg.slots, cfg.dim, cfg.dim, cfg.att_hidden, cfg.cell_hidden)
        cls = OmPairClassifier if cfg.task == "logic" else OmClassifier
        return cls(rng, vocab_size, oc, num_classes)
    if cfg.model == "onlstm":
        lc = OnLstmConfig(cfg.dim, cfg.dim, cfg.chunk_factor, cfg.layers)
        if cfg.task == "lm":
            return OnLstmLM(rng, vocab_size, lc)
        cls = OnLstmPairClassifier if cfg.task == "logic" else OnLstmClassifier
        return cls(rng, vocab_size, lc, num_classes)
    uc = UdgnConfig(vocab_size, dim=cfg.dim, parser_hidden=cfg.parser_hidden, num_tags=cfg.num_tags,
                    bilstm_layers=cfg.bilstm_layers, layers=cfg.layers, channels=cfg.channels,
                    activation=cfg.activation, gates=cfg.gates, competition=cfg.competition,
                    position=cfg.position)
    return Udgn(rng, uc)


# ---------------------------------------------------------------------------
# generic loop
# ---------------------------------------------------------------------------

_COMPAT_KEYS = ("task", "model", "dim", "slots", "att_hidden", "cell_hidden", "chunk_factor", "layers",
                "channels", "parser_hidden", "num_tags", "bilstm_layers", "activation", "gates",
                "competition", "position")


def _fit(model: Module, cfg: TrainConfig, batches: Callable, batch_loss: Callable, evaluate: Callable,
         log_path=None, resume: bool = False, meta: dict | None = None) -> MetricReport:
    params = model.params()
    opt = Adam(params, cfg.lr)
    meta = dict(meta or {})
    start = 0
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else None
    if resume:
        if ckpt is None or not ckpt.exists():
            raise ConfigError("resume requested but no checkpoint exists")
        arrays, saved = load_checkpoint(ckpt)
        _check_compatible(saved, cfg, meta)
        model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
        opt.load_state_arrays(arrays)
        start = int(saved["epoch"])
    columns = None
    metrics: dict = {}
    buckets: dict = {}
    status = "ok"
    epoch = start
    for epoch in range(start, cfg.epochs):
        rng = derive(cfg.seed, 1, epoch)
        total, count = 0.0, 0
        for batch in batches(rng):
            model.zero_grad()
            try:
                with T.Tape() as tape:
                    loss_sum, n = batch_loss(batch, rng)
                    loss = T.scale(loss_sum, 1.0 / n)
                    tape.backward(loss, params)
            except NumericalInstabilityError as exc:
                status = f"diverged at epoch {epoch + 1}: {exc}"
                break
            if not math.isfinite(loss_sum.item()):
                status = f"diverged at epoch {epoch + 1}: non-finite loss"
                break
            clip_grad_norm(params, cfg.max_grad_norm)
            opt.step()
            total += loss_sum.item()
            count += n
        if status != "ok":
            log.error("%s; keeping the last good checkpoint", status)
            break
        epoch_loss = total / max(count, 1)
        last = epoch + 1 == cfg.epochs
        if (epoch + 1) % cfg.eval_every == 0 or last:
            metrics, buckets = evaluate()
        row = {"epoch": epoch + 1, "loss": epoch_loss, **{k: v for k, v in sorted(metrics.items())}}
        if log_path is not None:
            columns = _append_csv(log_path, row, columns, fresh=(epoch == start and not resume))
        log.info("epoch %d loss %.6f %s", epoch + 1, epoch_loss, metrics)
        if ckpt is not None:
            m = {**meta, "config": cfg.to_dict(), "epoch": epoch + 1, "loss": epoch_loss}
            save_checkpoint(ckpt, {**model.state_dict(), **opt.state_arrays()}, m)
        epoch += 1
    report = MetricReport(metrics=dict(metrics), dataset_id=cfg.dataset_id, seed=cfg.seed,
                          config=cfg.to_dict(), buckets=buckets,
                          conventions={"uf1": SPAN_CONVENTION, "uas": "micro over tokens",
                                       "uuas": "micro over gold non-root edges", "perplexity": "natural base"},
                          epochs_completed=epoch, status=status)
    if status != "ok":
        raise TrainingDivergedError(status, report)
    return report


def _check_compatible(saved: dict, cfg: TrainConfig, meta: dict) -> None:
    old = saved.get("config", {})
    for key in _COMPAT_KEYS:
        if key in old and old[key] != getattr(cfg, key):
            raise ConfigError(f"checkpoint was trained with {key}={old[key]!r}, config has {getattr(cfg, key)!r}")
    if "vocab" in meta and saved.get("vocab") != meta["vocab"]:
        raise ConfigError("checkpoint vocabulary differs from the dataset vocabulary")


def _append_csv(path, row: dict, columns, fresh: bool):
    path = Path(path)
    if columns is None:
        columns = list(row)
    mode = "w" if fresh or not path.exists() else "a"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(columns)
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    return columns


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def _classifier_logits(model, data: ClassificationData, idx, pad_id: int):
    ids, lens = pad_batch([data.ids[i] for i in idx], pad_id)
    if data.ids2 is None:
        return model.logits(ids, lens)
    ids2, lens2 = pad_batch([data.ids2[i] for i in idx], pad_id)
    return model.logits(ids, lens, ids2, lens2)


def _nll(logits, labels) -> T.Tensor:
    return T.scale(T.sum_(T.pick(T.log_softmax(logits, axis=-1), labels)), -1.0)


def induced_trees(model, data: ClassificationData, idx, pad_id: int) -> list:
    """Unsupervised trees read off the model for single-sentence inputs."""
    ids, lens = pad_batch([data.ids[i] for i in idx], pad_id)
    out = []
    with T.no_grad():
        if isinstance(model, OmClassifier):
            trace = om_forward(ids, model.om, lens)
            for b, n in enumerate(lens):
                out.append(om_parse(trace.p[b, :n]))
        else:
            _, dists = model.encoder.forward(ids, lens)
            d = parse_distances(dists).data
            for b, n in enumerate(lens):
                out.append(distance_to_tree(d[b, 1:n], int(n)))
    return out


def evaluate_classifier(model, data: ClassificationData, pad_id: int, batch_size: int = 128) -> tuple[dict, dict]:
    preds = np.zeros(len(data), dtype=np.int64)
    pred_trees = [None] * len(data)
    want_trees = data.trees is not None and data.ids2 is None
    for idx in length_batches(data.lengths(), batch_size, None):
        with T.no_grad():
            logits = _classifier_logits(model, data, idx, pad_id)
        preds[idx] = np.argmax(logits.data, axis=-1)
        if want_trees:
            for i, t in zip(idx, induced_trees(model, data, idx, pad_id)):
                pred_trees[i] = t
    metrics = {"accuracy": accuracy(preds, data.labels)}
    if want_trees:
        p, r, f = uf1(pred_trees, data.trees)
        metrics.update({"uf1": f, "uf1_precision": p, "uf1_recall": r})
    buckets = {}
    if data.keys is not None:
        buckets["accuracy"] = bucketed_accuracy(preds, data.labels, data.keys)
    return metrics, buckets


def predict_classifier(model, data: ClassificationData, pad_id: int, batch_size: int = 128) -> np.ndarray:
    preds = np.zeros(len(data), dtype=np.int64)
    for idx in length_batches(data.lengths(), batch_size, None):
        with T.no_grad():
            preds[idx] = np.argmax(_classifier_logits(model, data, idx, pad_id).data, axis=-1)
    return preds


def train_classifier(model, dataset: ClassificationData, config: TrainConfig, pad_id: int,
                     eval_data: ClassificationData | None = None, log_path=None, resume: bool = False,
                     meta: dict | None = None) -> MetricReport:
    """Minimise mean cross-entropy with Adam; evaluates on ``eval_data`` (or the training set)."""
    n_classes = int(model.out.bias.shape[0]) if hasattr(model, "out") else int(model.head.out.bias.shape[0])
    if len(dataset.labels) and (dataset.labels.min() < 0 or dataset.labels.max() >= n_classes):
        raise ConfigError(f"labels outside the model's {n_classes} classes")
    lengths = dataset.lengths()
    target = eval_data if eval_data is not None else dataset

    def batches(rng):
        return length_batches(lengths, config.batch_size, rng)

    def batch_loss(idx, rng):
        return _nll(_classifier_logits(model, dataset, idx, pad_id), dataset.labels[idx]), len(idx)

    return _fit(model, config, batches, batch_loss, lambda: evaluate_classifier(model, target, pad_id),
                log_path, resume, meta)


# ---------------------------------------------------------------------------
# language modelling
# ---------------------------------------------------------------------------

def evaluate_mlm(model: Udgn, data: TextData, vocab: Vocab, rate: float, seed: int,
                 batch_size: int = 64) -> tuple[dict, dict]:
    """Masked-token perplexity under a fixed corruption, plus attachment scores when gold heads exist."""
    rng = derive(seed, 2)
    total, count = 0.0, 0
    for idx in length_batches(data.lengths(), batch_size, None):
        ids, lens = pad_batch([data.ids[i] for i in idx], vocab.pad)
        mb = mask_tokens(ids, rate, rng, vocab)
        if not mb.positions.any():
            continue
        with T.no_grad():
            nll, n = model.mlm_loss(mb.inputs, lens, mb.targets, mb.positions)
        total += nll.item()
        count += n
    metrics = {"masked_ppl": math.exp(total / count) if count else float("nan")}
    if data.heads is not None:
        chu, arg = [], []
        for i, sent in enumerate(data.ids):
            with T.no_grad():
                p = parser_forward(np.asarray(sent)[None], model.parser).data[0]
            chu.append(to_conll_heads(extract_chuliu(p)))
            arg.append(to_conll_heads(extract_argmax(p)))
        metrics["uas"], metrics["uuas"] = uas_uuas(chu, data.heads)
        metrics["uas_argmax"], metrics["uuas_argmax"] = uas_uuas(arg, data.heads)
    return metrics, {}


def train_mlm(model: Udgn, corpus: TextData, config: TrainConfig, vocab: Vocab,
              eval_data: TextData | None = None, log_path=None, resume: bool = False,
              meta: dict | None = None) -> MetricReport:
    """Masked-token prediction; fresh masks are drawn every epoch from the epoch's stream."""
    if np.any(corpus.lengths() < 2):
        raise ConfigError("every sentence needs at least two tokens")
    lengths = corpus.lengths()
    target = eval_data if eval_data is not None else corpus

    def batches(rng):
        out = []
        for idx in length_batches(lengths, config.batch_size, rng):
            ids, lens = pad_batch([corpus.ids[i] for i in idx], vocab.pad)
            mb = mask_tokens(ids, config.mask_rate, rng, vocab)
            if mb.positions.any():
                out.append((mb, lens))
        return out

    def batch_loss(batch, rng):
        mb, lens = batch
        return model.mlm_loss(mb.inputs, lens, mb.targets, mb.positions)

    return _fit(model, config, batches, batch_loss,
                lambda: evaluate_mlm(model, target, vocab, config.mask_rate, config.seed),
                log_path, resume, meta)


def evaluate_lm(model: OnLstmLM, data: TextData, pad_id: int, batch_size: int = 64) -> tuple[dict, dict]:
    total, count = 0.0, 0
    for idx in length_batches(data.lengths(), batch_size, None):
        ids, lens = pad_batch([data.ids[i] for i in idx], pad_id)
        with T.no_grad():
            nll, n = model.loss(ids, lens)
        total += nll.item()
        count += n
    return {"ppl": math.exp(total / count)}, {}


def train_lm(model: OnLstmLM, corpus: TextData, config: TrainConfig, pad_id: int,
             eval_data: TextData | None = None, log_path=None, resume: bool = False,
             meta: dict | None = None) -> MetricReport:
    lengths = corpus.lengths()
    if np.any(lengths < 2):
        raise ConfigError("every sentence needs at least two tokens")
    target = eval_data if eval_data is not None else corpus

    def batches(rng):
        return length_batches(lengths, config.batch_size, rng)

    def batch_loss(idx, rng):
        ids, lens = pad_batch([corpus.ids[i] for i in idx], pad_id)
        return model.loss(ids, lens)

    return _fit(model, config, batches, batch_loss, lambda: evaluate_lm(model, target, pad_id),
                log_path, resume, meta)
