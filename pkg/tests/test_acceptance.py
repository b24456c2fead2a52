"""Acceptance suite: one test per criterion, each printing a PASS/FAIL/SKIP line.

The training criteria (7, 8, 9) take tens of minutes on one core and only run
when ``SYNBIAS_SLOW=1``. Their epoch counts can be changed with
``SYNBIAS_LISTOPS_EPOCHS``, ``SYNBIAS_LOGIC_EPOCHS`` and ``SYNBIAS_MLM_EPOCHS``.
"""

import itertools
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

import test_cli
import test_metrics
import test_om
import test_onlstm
import test_tensor
import test_udgn
from oracles import all_trees, brute_force_arborescences, brute_force_distance_tree
from synbias.checks import MODEL_CHECKS, TOLERANCE
from synbias.gradcheck import grad_check
from synbias.rng import make_rng
from synbias.tasks import build_vocab, gen_listops, gen_logic, gen_toy_corpus, RELATIONS
from synbias.tasks.text import unigram_perplexity
from synbias.train import (ClassificationData, TextData, TrainConfig, build_model, evaluate_classifier, evaluate_mlm,
                           train_classifier, train_mlm)
from synbias.trees import distance_to_tree
from synbias.udgn import edge_scores, extract_chuliu, tree_weight

SLOW = os.environ.get("SYNBIAS_SLOW") == "1"
RESULTS: dict[int, str] = {}


@contextmanager
def criterion(number: int, title: str):
    notes: list[str] = []
    start = time.perf_counter()

    def line(status):
        extra = "; ".join(notes)
        return f"criterion {number:2d} {status}: {title} ({time.perf_counter() - start:.1f}s){' - ' + extra if extra else ''}"

    try:
        yield notes
    except pytest.skip.Exception:
        RESULTS[number] = line("SKIP")
        print(RESULTS[number])
        raise
    except BaseException:
        RESULTS[number] = line("FAIL")
        print(RESULTS[number])
        raise
    RESULTS[number] = line("PASS")
    print(RESULTS[number])


def need_slow():
    if not SLOW:
        pytest.skip("training criterion; set SYNBIAS_SLOW=1")


def env_int(name: str, default: int) -> int:
    return int(os.environ.get(name, default))


# 1-6: oracles and properties ---------------------------------------------------------------

def test_criterion_01_gradient_suite():
    start = time.perf_counter()
    with criterion(1, "gradients of every primitive and tiny model within 1e-4, under 2 min") as notes:
        worst = 0.0
        for name, make in sorted(test_tensor.PRIMITIVES.items()):
            for seed in range(20):
                fn, params = make(make_rng(seed))
                worst = max(worst, grad_check(fn, params))
        notes.append(f"primitives {worst:.2e}")
        for kind, check in MODEL_CHECKS.items():
            err, where = check()
            notes.append(f"{kind} {err:.2e}")
            worst = max(worst, err)
        assert worst < TOLERANCE
        assert time.perf_counter() - start < 120


def test_criterion_02_distance_tree_oracle():
    with criterion(2, "distance_to_tree equals brute force") as notes:
        count = 0
        for n in range(1, 6):
            for perm in itertools.permutations(range(n - 1)):
                d = [float(v) for v in perm]
                assert distance_to_tree(d, n) == brute_force_distance_tree(d, n)
                count += 1
        rng = make_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            d = list(rng.permutation(n - 1) + rng.uniform(0, 0.5, size=n - 1))
            assert distance_to_tree(d, n) == brute_force_distance_tree(d, n)
        notes.append(f"{count} exhaustive + 1000 random")
        assert len(all_trees(0, 5)) == 14


def test_criterion_03_om_discrete_equivalence():
    with criterion(3, "forced one-hot OM equals discrete stack machine (200 programs)"):
        test_om.test_forced_one_hot_runs_match_the_discrete_stack_machine()
        test_om.test_one_hot_step_is_an_exact_slot_select()


def test_criterion_04_chuliu_oracle():
    with criterion(4, "Chu-Liu equals exhaustive arborescence search, T <= 6") as notes:
        rng = make_rng(4)
        unique = 0
        for n in range(2, 7):
            for _ in range(100):
                p = test_udgn.random_p(rng, n)
                s = edge_scores(p)
                found = extract_chuliu(p)
                ranked = sorted(brute_force_arborescences(s), key=lambda x: -x[0])
                best = ranked[0][0]
                assert abs(tree_weight(s, found) - best) <= 1e-9
                if len(ranked) == 1 or ranked[1][0] < best - 1e-9:
                    unique += 1
                    assert tuple(found) == ranked[0][1]
        notes.append(f"500 matrices, {unique} with a unique optimum")


def test_criterion_05_metric_fixtures():
    with criterion(5, "metric fixtures exact to 1e-9") as notes:
        sets = [(test_metrics.UF1_FIXTURES, test_metrics.test_uf1_fixtures),
                (test_metrics.PPL_FIXTURES, test_metrics.test_perplexity_fixtures),
                (test_metrics.ATTACH_FIXTURES, test_metrics.test_attachment_fixtures)]
        for fixtures, check in sets:
            assert len(fixtures) >= 10
            for args in fixtures:
                check(*args)
        notes.append("/".join(str(len(f)) for f, _ in sets) + " fixtures")


def test_criterion_06_distribution_properties():
    with criterion(6, "distribution and mask properties over 1000 instances each"):
        test_om.test_attention_is_a_distribution_on_1000_random_instances()
        test_om.test_cumulative_masks_are_complementary_on_1000_random_distributions()
        test_udgn.test_channel_competition_sums_on_1000_random_instances()
        test_udgn.test_mask_bounds_on_1000_random_matrices()
        test_onlstm.test_cummax_is_monotone_on_1000_random_vectors()


# 7-9: desk-scale training --------------------------------------------------------------------

def _listops_data(examples, vocab):
    return ClassificationData([vocab.encode(e.tokens) for e in examples], np.array([e.label for e in examples]),
                              trees=[e.tree for e in examples])


@pytest.mark.slow
def test_criterion_07_listops_desk_scale():
    with criterion(7, "ListOps OM N=8 D=64 on 20k: accuracy >= 0.95 and UF1 >= 0.90") as notes:
        need_slow()
        train = gen_listops(make_rng(1), 20000, max_depth=4, max_length=100)
        held = gen_listops(make_rng(2), 1000, max_depth=4, max_length=100)
        vocab = build_vocab([e.tokens for e in train])
        cfg = TrainConfig(task="listops", model="om", slots=8, dim=64, epochs=env_int("SYNBIAS_LISTOPS_EPOCHS", 10),
                          batch_size=64, lr=1e-3, eval_every=1000)
        model = build_model(cfg, len(vocab), 10)
        train_classifier(model, _listops_data(train, vocab), cfg, vocab.pad)
        metrics, _ = evaluate_classifier(model, _listops_data(held, vocab), vocab.pad)
        notes.append(f"accuracy {metrics['accuracy']:.3f}, UF1 {metrics['uf1']:.3f}, {cfg.epochs} epochs")
        assert metrics["accuracy"] >= 0.95 and metrics["uf1"] >= 0.90


def _logic_data(examples, vocab):
    return ClassificationData([vocab.encode(e.left) for e in examples],
                              np.array([RELATIONS.index(e.label) for e in examples]),
                              ids2=[vocab.encode(e.right) for e in examples], keys=[e.ops for e in examples])


@pytest.mark.slow
def test_criterion_08_logic_length_generalisation():
    with criterion(8, "logic: >= 0.80 at 7 ops, non-increasing to 12, drop <= 20 points") as notes:
        need_slow()
        train = gen_logic(make_rng(1), 50000, max_ops=6)
        held = gen_logic(make_rng(2), 3000, max_ops=12, min_ops=7)
        vocab = build_vocab([e.left for e in train] + [e.right for e in train])
        cfg = TrainConfig(task="logic", model="om", slots=8, dim=64, epochs=env_int("SYNBIAS_LOGIC_EPOCHS", 3),
                          batch_size=64, lr=1e-3, eval_every=1000)
        model = build_model(cfg, len(vocab), len(RELATIONS))
        train_classifier(model, _logic_data(train, vocab), cfg, vocab.pad)
        _, buckets = evaluate_classifier(model, _logic_data(held, vocab), vocab.pad)
        acc = [buckets["accuracy"][k] for k in range(7, 13)]
        notes.append("by ops 7..12: " + " ".join(f"{a:.3f}" for a in acc))
        assert acc[0] >= 0.80
        assert all(b <= a for a, b in zip(acc, acc[1:]))
        assert acc[0] - acc[-1] <= 0.20


def _mlm_ppl(channels: int, seed: int, train, held, vocab, epochs: int) -> float:
    mk = lambda recs: TextData([vocab.encode(r["tokens"]) for r in recs])  # noqa: E731
    cfg = TrainConfig(task="mlm", model="udgn", channels=channels, epochs=epochs, seed=seed, eval_every=1000)
    model = build_model(cfg, len(vocab))
    train_mlm(model, mk(train), cfg, vocab)
    return evaluate_mlm(model, mk(held), vocab, cfg.mask_rate, seed=0)[0]["masked_ppl"]


@pytest.mark.slow
def test_criterion_09_udgn_mlm_sanity():
    with criterion(9, "UDGN masked ppl >= 20% below unigram; one channel is worse") as notes:
        need_slow()
        train = gen_toy_corpus(make_rng(1), 5000)
        held = gen_toy_corpus(make_rng(2), 500)
        vocab = build_vocab([r["tokens"] for r in train])
        unigram = unigram_perplexity([r["tokens"] for r in train], [t for r in held for t in r["tokens"]], vocab)
        epochs = env_int("SYNBIAS_MLM_EPOCHS", 10)
        seeds = (0, 1)
        full = [_mlm_ppl(4, s, train, held, vocab, epochs) for s in seeds]
        single = [_mlm_ppl(1, s, train, held, vocab, epochs) for s in seeds]
        notes.append(f"unigram {unigram:.2f}; full {[round(x, 2) for x in full]}; "
                     f"single {[round(x, 2) for x in single]}")
        assert all(f <= 0.8 * unigram for f in full)
        assert all(s > f for s, f in zip(single, full))


# 10: reproducibility ---------------------------------------------------------------------------

def test_criterion_10_manifest_reproducibility(tmp_path):
    with criterion(10, "replaying CLI manifests gives bit-identical artifacts") as notes:
        test_cli.test_manifests_replay_bit_exactly(tmp_path)
        root = tmp_path / "more"
        root.mkdir()
        assert test_cli.run("gen", "logic", "--count", 50, "--seed", 3, "--split", "B",
                            "--out", root / "lg.jsonl") == 0
        assert test_cli.run("gradcheck", "--model", "udgn", "--out", root / "gc.json") == 0
        first = test_cli.files_of(root)
        for manifest in sorted(root.glob("*.manifest.json")):
            assert test_cli.replay(manifest) == 0
        assert test_cli.files_of(root) == first
        notes.append(f"{len(first)} extra artifacts")
