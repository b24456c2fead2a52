import math

import numpy as np
import pytest

from oracles import discrete_om, random_program
from synbias import tensor as T
from synbias.checks import om_gradcheck
from synbias.errors import ContractError
from synbias.gradcheck import grad_check
from synbias.om import (OmConfig, OmState, OrderedMemory, gated_recursive_cell, masked_attention, om_forward,
                        om_parse, om_step, pair_features, pair_relation_head, PairRelationHead, project_input)
from synbias.rng import make_rng
from synbias.tensor import Tensor
from synbias.trees import is_valid


def make_om(N=3, D=4, vocab=7, seed=0, generic=False):
    om = OrderedMemory(make_rng(seed), vocab, OmConfig(N, D, D, D, 2 * D))
    if generic:
        rng = make_rng(seed + 100)
        for p in om.params():
            p.data = rng.uniform(-1, 1, size=p.shape)
    return om


def one_hot(j, N):
    v = np.zeros(N)
    v[j] = 1.0
    return v


# attention -------------------------------------------------------------------

def test_hand_evaluated_masked_attention():
    N, D = 3, 2
    om = OrderedMemory(make_rng(0), 5, OmConfig(N, D, D, 2, 4))
    om.att_w1.data[:] = 0.0
    om.att_w1.data[0, 0] = 1.0          # hidden 0 reads the first coordinate of each candidate
    om.att_b1.data[:] = 0.0
    om.att_w2.data[:] = [math.sqrt(N), 0.0]
    cands = np.zeros((1, N, D))
    cands[0, 1, 0] = math.atanh(math.log(2.0))    # alpha = [0, ln 2, 0] -> beta = [1, 2, 1]
    p = masked_attention(Tensor(np.zeros((1, D))), Tensor(cands), np.array([[0.0, 0.5, 1.0]]), om).data[0]
    np.testing.assert_allclose(p, [1 / 7, 4 / 7, 2 / 7], atol=1e-15)


def test_first_step_attends_to_the_bottom_slot():
    for seed in range(20):
        om = make_om(N=5, seed=seed, generic=True)
        rng = make_rng(seed)
        p = masked_attention(Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 5, 4))),
                             np.zeros((2, 5)), om).data
        np.testing.assert_array_equal(p, np.tile(one_hot(4, 5), (2, 1)))


def test_uniform_scores_with_full_mask_are_uniform():
    om = make_om(N=4)
    for p in (om.att_w1, om.att_b1, om.att_w2):
        p.data[:] = 0.0
    p = masked_attention(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4, 4))), np.ones((1, 4)), om).data
    np.testing.assert_allclose(p, 0.25, atol=1e-15)


def test_attention_is_a_distribution_on_1000_random_instances():
    rng = make_rng(1)
    om = make_om(N=6, generic=True)
    for _ in range(1000):
        cum = np.cumsum(rng.dirichlet(np.ones(6)), axis=-1)[None]
        p = masked_attention(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 6, 4)) * 3), cum, om).data
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p >= 0)


def test_cumulative_masks_are_complementary_on_1000_random_distributions():
    rng = make_rng(2)
    for _ in range(1000):
        N = int(rng.integers(2, 10))
        p = Tensor(rng.dirichlet(np.ones(N) * rng.uniform(0.1, 3)))
        cp = T.cumsum(p).data
        rcp = T.cumsum(p, reverse=True).data
        assert np.all(np.diff(cp) >= 0) and np.all(np.diff(rcp) <= 0)
        np.testing.assert_allclose(cp[:-1] + rcp[1:], 1.0, atol=1e-9)


# projection and cell -----------------------------------------------------------

def test_identity_projection_of_constant_input_is_zero():
    om = make_om(D=4)
    om.proj.weight.data = np.eye(4)
    om.proj.bias.data[:] = 0.0
    out = project_input(Tensor(np.full((1, 4), 3.0)), om).data
    np.testing.assert_array_equal(out, np.zeros((1, 4)))


def test_projection_is_deterministic_and_differentiable():
    om = make_om(generic=True)
    x = Tensor(make_rng(3).normal(size=(2, 4)))
    assert project_input(x, om).data.tobytes() == project_input(x, om).data.tobytes()
    w = make_rng(4).uniform(-1, 1, size=(2, 4))
    params = [om.proj.weight, om.proj.bias, om.ln.gamma, om.ln.beta]
    assert grad_check(lambda r: T.sum_(T.mul(project_input(x, om), w)), params) < 1e-4


def test_zero_second_layer_gives_half_gates():
    om = make_om(D=4, generic=True)
    om.cell_w2.data[:] = 0.0
    om.cell_b2.data[:] = 0.0
    om.ln.gamma.data[:] = 1.0
    om.ln.beta.data[:] = 0.0
    rng = make_rng(5)
    slot, below = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    out = gated_recursive_cell(Tensor(slot), Tensor(below), om).data
    expect = T.layer_norm(Tensor(0.5 * (slot + below))).data
    np.testing.assert_allclose(out, expect, atol=1e-14)


def test_cell_gradcheck_d8():
    om = make_om(D=8, generic=True)
    rng = make_rng(6)
    slot, below = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8)))
    w = rng.uniform(-1, 1, size=(2, 8))
    params = [om.cell_w1, om.cell_b1, om.cell_w2, om.cell_b2, om.ln.gamma, om.ln.beta]
    assert grad_check(lambda r: T.sum_(T.mul(gated_recursive_cell(slot, below, om), w)), params) < 1e-4


def test_cell_commutes_with_batch_permutation():
    om = make_om(generic=True)
    rng = make_rng(7)
    slot, below = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a = gated_recursive_cell(Tensor(slot), Tensor(below), om).data
    b = gated_recursive_cell(Tensor(slot[perm]), Tensor(below[perm]), om).data
    np.testing.assert_array_equal(a[perm], b)


# memory update -------------------------------------------------------------------

def _random_state(rng, N, D):
    cum = np.cumsum(rng.dirichlet(np.ones(N)))[None]
    return OmState(Tensor(rng.normal(size=(1, N, D))), Tensor(rng.normal(size=(1, N, D))), Tensor(cum))


def test_one_hot_step_is_an_exact_slot_select():
    rng = make_rng(8)
    N, D = 5, 4
    om = make_om(N=N, D=D, generic=True)
    for _ in range(100):
        state = _random_state(rng, N, D)
        j = int(rng.integers(0, N))
        x = Tensor(rng.normal(size=(1, D)))
        new, p = om_step(x, state, om, forced_p=one_hot(j, N)[None])
        mem, old_m, old_c = new.memory.data[0], state.memory.data[0], state.candidates.data[0]
        assert mem[: j + 1].tobytes() == old_c[: j + 1].tobytes()
        assert mem[j + 1:].tobytes() == old_m[j + 1:].tobytes()
        cand = new.candidates.data[0]
        for i in range(j):
            assert cand[i].tobytes() == x.data[0].tobytes()
        below = x
        for i in range(j, N):
            below = gated_recursive_cell(new.memory[:, i], below, om)
            assert cand[i].tobytes() == below.data[0].tobytes()


def test_forced_one_hot_runs_match_the_discrete_stack_machine():
    rng = make_rng(9)
    N, D = 4, 4
    om = make_om(N=N, D=D, vocab=9, generic=True)

    def cell(slot, below):
        return gated_recursive_cell(Tensor(slot[None]), Tensor(below[None]), om).data[0]

    for _ in range(200):
        length = int(rng.integers(1, 11))
        ids = rng.integers(0, 9, size=(1, length))
        ys = random_program(rng, length, N)
        forced = np.stack([one_hot(y - 1, N) for y in ys])[None]
        trace = om_forward(ids, om, forced_p=forced, record_memory=True)
        x_tilde = project_input(om.embed(ids), om).data[0]
        ref = discrete_om(x_tilde, ys, om.mem0.data, om.cand0.data, cell)
        for (m, c), (rm, rc) in zip(trace.memories, ref):
            assert m[0].tobytes() == rm.tobytes()
            assert c[0].tobytes() == rc.tobytes()
        assert trace.output.data[0].tobytes() == ref[-1][1][N - 1].tobytes()


def test_length_one_input_attends_to_bottom_slot():
    om = make_om(N=4, generic=True)
    trace = om_forward([3], om)
    np.testing.assert_array_equal(trace.p[0, 0], one_hot(3, 4))


def test_trace_distributions_and_determinism():
    om = make_om(N=5, generic=True)
    ids = make_rng(10).integers(0, 7, size=(3, 9))
    a = om_forward(ids, om, lengths=np.array([9, 4, 1]))
    b = om_forward(ids, om, lengths=np.array([9, 4, 1]))
    assert a.p.tobytes() == b.p.tobytes()
    np.testing.assert_allclose(a.p.sum(-1), 1.0, atol=1e-9)
    assert a.output.shape == (3, 4)


def test_padding_leaves_short_sequences_unchanged():
    om = make_om(N=4, generic=True)
    ids = np.array([[1, 2, 3, 0, 0], [4, 5, 6, 1, 2]])
    both = om_forward(ids, om, lengths=np.array([3, 5])).output.data[0]
    alone = om_forward(ids[:1, :3], om).output.data[0]
    np.testing.assert_allclose(both, alone, atol=1e-14)


def test_end_to_end_gradcheck():
    err, where = om_gradcheck(slots=3, dim=8, length=4)
    assert err < 1e-4, where


def test_config_and_input_validation():
    with pytest.raises(ContractError):
        OmConfig(slots=1)
    with pytest.raises(ContractError):
        om_forward(np.zeros((1, 0), dtype=int), make_om())


# parsing ------------------------------------------------------------------------

def _ps(ys, N):
    return [one_hot(y - 1, N) for y in ys]


def test_two_steps_always_merge():
    rng = make_rng(11)
    for _ in range(20):
        assert om_parse(rng.dirichlet(np.ones(4), size=2)) == (0, 1)


def test_single_step_is_a_leaf():
    assert om_parse(_ps([3], 3)) == 0


def test_reduce_before_shift():
    N = 4
    assert om_parse(_ps([N, N - 1, N], N)) == ((0, 1), 2)
    assert om_parse(_ps([N, N, N - 1], N)) == (0, (1, 2))
    assert om_parse(_ps([N, N - 1, N - 2, N], N)) == ((0, (1, 2)), 3)


def test_argmax_ties_go_to_the_lowest_slot():
    tie = np.array([0.5, 0.5, 0.0])
    assert om_parse([one_hot(2, 3), tie, one_hot(2, 3)]) == ((0, 1), 2)


def test_parse_is_a_valid_tree_on_1000_random_traces():
    rng = make_rng(12)
    for _ in range(1000):
        n, N = int(rng.integers(1, 15)), int(rng.integers(2, 8))
        assert is_valid(om_parse(rng.dirichlet(np.ones(N), size=n)), n)


def test_empty_trace_raises():
    with pytest.raises(ContractError):
        om_parse([])


# pair head ---------------------------------------------------------------------------

def test_identical_sentences_zero_the_difference_block():
    h = Tensor(make_rng(13).normal(size=(2, 4)))
    feats = pair_features(h, h).data
    np.testing.assert_array_equal(feats[:, 12:], 0.0)


def test_swapping_sentences_only_moves_asymmetric_blocks():
    rng = make_rng(14)
    h1, h2 = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    a, b = pair_features(h1, h2).data, pair_features(h2, h1).data
    np.testing.assert_array_equal(a[:, 0:4], b[:, 4:8])
    np.testing.assert_array_equal(a[:, 4:8], b[:, 0:4])
    np.testing.assert_array_equal(a[:, 8:], b[:, 8:])


def test_pair_head_gradcheck():
    rng = make_rng(15)
    head = PairRelationHead(rng, 4, 7)
    for p in head.params():
        p.data = rng.uniform(-1, 1, size=p.shape)
    h1 = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    h2 = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    w = rng.uniform(-1, 1, size=(2, 7))
    out = pair_relation_head(h1, h2, head)
    assert out.shape == (2, 7)
    assert grad_check(lambda r: T.sum_(T.mul(pair_relation_head(h1, h2, head), w)),
                      head.params() + [h1, h2]) < 1e-4
