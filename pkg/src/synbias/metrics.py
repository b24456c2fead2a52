"""Accuracy, perplexity, bracketing F1 and attachment scores (all micro-averaged)."""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .errors import ContractError
from .trees import num_leaves, spans

SPAN_CONVENTION = "spans of length >= 2 including the whole sentence; micro-averaged"


def perplexity(log_probs) -> float:
    """exp(-mean log p), natural base."""
    lp = np.asarray(log_probs, dtype=np.float64).ravel()
    if lp.size == 0:
        raise ContractError("perplexity of an empty position set")
    if not np.all(np.isfinite(lp)):
        raise ContractError("log-probabilities must be finite")
    return float(math.exp(-lp.mean()))


def accuracy(pred, gold) -> float:
    pred, gold = np.asarray(pred), np.asarray(gold)
    if pred.shape != gold.shape:
        raise ContractError(f"prediction shape {pred.shape} != gold shape {gold.shape}")
    if pred.size == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean(pred == gold))


def bucketed_accuracy(pred, gold, keys) -> dict:
    """Accuracy per bucket key (e.g. operator count), in ascending key order."""
    hits: dict = defaultdict(int)
    totals: dict = defaultdict(int)
    for p, g, k in zip(pred, gold, keys):
        totals[k] += 1
        hits[k] += int(p == g)
    return {k: hits[k] / totals[k] for k in sorted(totals)}


def _as_tree_list(x) -> list:
    return [x] if isinstance(x, (tuple, int)) else list(x)


def uf1(pred_trees, gold_trees) -> tuple[float, float, float]:
    """Unlabeled bracketing precision, recall and F1 over a corpus (or a single pair)."""
    preds, golds = _as_tree_list(pred_trees), _as_tree_list(gold_trees)
    if len(preds) != len(golds):
        raise ContractError("different numbers of predicted and gold trees")
    hit = n_pred = n_gold = 0
    for p, g in zip(preds, golds):
        if num_leaves(p) != num_leaves(g):
            raise ContractError(f"leaf count mismatch: {num_leaves(p)} vs {num_leaves(g)}")
        sp, sg = set(spans(p)), set(spans(g))
        hit += len(sp & sg)
        n_pred += len(sp)
        n_gold += len(sg)
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    prec = hit / n_pred if n_pred else 0.0
    rec = hit / n_gold if n_gold else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return prec, rec, f1


def _as_head_list(x) -> list:
    x = list(x)
    if x and np.isscalar(x[0]):
        return [x]
    return x


def _undirected(heads) -> set:
    return {frozenset((i + 1, int(h))) for i, h in enumerate(heads) if h != 0 and h != i + 1}


def attachment_counts(pred_heads, gold_heads) -> tuple[int, int, int, int]:
    """(correct heads, tokens, matched undirected edges, gold non-root edges) over a corpus.

    Heads are 1-based with 0 marking the root.
    """
    preds, golds = _as_head_list(pred_heads), _as_head_list(gold_heads)
    if len(preds) != len(golds):
        raise ContractError("different numbers of predicted and gold sentences")
    correct = tokens = matched = edges = 0
    for p, g in zip(preds, golds):
        if len(p) != len(g):
            raise ContractError(f"head sequences differ in length: {len(p)} vs {len(g)}")
        if sum(1 for h in g if h == 0) != 1:
            raise ContractError("gold tree must have exactly one root")
        correct += sum(int(a == b) for a, b in zip(p, g))
        tokens += len(g)
        matched += len(_undirected(p) & _undirected(g))
        edges += len(g) - 1
    return correct, tokens, matched, edges


def uas_uuas(pred_heads, gold_heads) -> tuple[float, float]:
    """Directed attachment accuracy per token; undirected edge overlap per gold non-root edge."""
    correct, tokens, matched, edges = attachment_counts(pred_heads, gold_heads)
    if tokens == 0:
        raise ContractError("no tokens to score")
    uuas = matched / edges if edges else 1.0
    return correct / tokens, uuas
