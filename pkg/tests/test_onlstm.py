import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from synbias import tensor as T
from synbias.checks import onlstm_gradcheck
from synbias.errors import ContractError, VocabularyError
from synbias.gradcheck import grad_check
from synbias.onlstm import (OnLstmCell, OnLstmConfig, OnLstmEncoder, combine_master_gates, cummax,
                            encode_sequence, expand_chunks, onlstm_step, parse_distances)
from synbias.rng import make_rng
from synbias.tensor import Tensor
from synbias.trees import distance_to_tree, is_valid


def test_cummax_examples():
    np.testing.assert_allclose(cummax(Tensor([0.0, 0.0])).data, [0.5, 1.0], atol=1e-15)
    np.testing.assert_allclose(cummax(Tensor([math.log(2), 0.0, 0.0])).data, [0.5, 0.75, 1.0], atol=1e-15)
    np.testing.assert_allclose(cummax(Tensor([1000.0, 0.0, 0.0])).data, [1.0, 1.0, 1.0], atol=1e-9)


def test_cummax_of_empty_vector_raises():
    with pytest.raises(ContractError):
        cummax(Tensor(np.zeros(0)))


def test_cummax_is_monotone_on_1000_random_vectors():
    rng = make_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        g = cummax(Tensor(rng.normal(scale=rng.uniform(0.1, 30), size=n))).data
        assert np.all(np.diff(g) >= 0)
        assert np.all((g >= 0) & (g <= 1 + 1e-12))
        assert abs(g[-1] - 1.0) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 16), elements=st.floats(-100, 100)))
def test_cummax_property(x):
    g = cummax(Tensor(x)).data
    assert np.all(np.diff(g) >= -1e-15)
    assert abs(g[-1] - 1.0) <= 1e-12


def test_binary_master_gates():
    f_hat, i_hat, w = combine_master_gates([0, 0, 1, 1], [1, 1, 1, 0], [0.3] * 4, [0.6] * 4)
    np.testing.assert_allclose(w.data, [0, 0, 1, 0])
    np.testing.assert_allclose(f_hat.data, [0, 0, 0.3, 1])
    np.testing.assert_allclose(i_hat.data, [1, 1, 0.6, 0])


def test_full_overlap_gives_plain_lstm_gates():
    rng = make_rng(1)
    f, i = rng.uniform(size=6), rng.uniform(size=6)
    f_hat, i_hat, _ = combine_master_gates(np.ones(6), np.ones(6), f, i)
    np.testing.assert_array_equal(f_hat.data, f)
    np.testing.assert_array_equal(i_hat.data, i)


def test_zero_master_forget_erases_everything():
    rng = make_rng(2)
    f_hat, _, _ = combine_master_gates(np.zeros(5), rng.uniform(size=5), rng.uniform(size=5), rng.uniform(size=5))
    np.testing.assert_array_equal(f_hat.data, np.zeros(5))


def test_gate_shape_mismatch_raises():
    with pytest.raises(ContractError):
        combine_master_gates(np.ones(3), np.ones(4), np.ones(3), np.ones(3))


def test_combined_gates_stay_in_unit_interval():
    rng = make_rng(3)
    for _ in range(200):
        mf = cummax(Tensor(rng.normal(size=4))).data
        mi = 1 - cummax(Tensor(rng.normal(size=4))).data
        f, i = rng.uniform(size=4), rng.uniform(size=4)
        for out in combine_master_gates(mf, mi, f, i):
            assert np.all((out.data >= -1e-15) & (out.data <= 1 + 1e-15))


def test_chunk_expansion_repeats_each_entry():
    g = np.array([[0.1, 0.5, 0.9], [1.0, 2.0, 3.0]])
    out = expand_chunks(Tensor(g), 4).data
    assert out.shape == (2, 12)
    for k in range(3):
        np.testing.assert_array_equal(out[:, 4 * k:4 * k + 4], np.repeat(g[:, k:k + 1], 4, axis=1))


def test_config_requires_divisible_chunks():
    with pytest.raises(ContractError):
        OnLstmConfig(8, 10, 3)
    assert OnLstmConfig(8, 8, 2).master_dim == 4


def _zero_cell(hidden=4, chunk=2, d_in=3):
    cell = OnLstmCell(make_rng(0), d_in, hidden, chunk)
    for p in (cell.w_x, cell.w_h, cell.bias):
        p.data = np.zeros_like(p.data)
    return cell


def test_distance_estimate_from_master_forget():
    # all-zero pre-activations give f~ = cummax([0, 0]) = [0.5, 1.0] with D_m = 2
    out = onlstm_step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), _zero_cell())
    np.testing.assert_allclose(out.master_forget.data, [[0.5, 1.0]])
    np.testing.assert_allclose(out.distance.data, [0.5])


def test_saturated_master_gates_reduce_to_lstm():
    # the master input gate's last chunk is 1 - 1 = 0 by construction, so the reachable
    # saturated case is: plain LSTM update on the first chunk, pure copy on the last
    cell = _zero_cell()
    rng = make_rng(4)
    dm, D = 2, 4
    cell.bias.data[:dm] = [200.0, 0.0]
    cell.bias.data[dm:2 * dm] = [0.0, 200.0]
    cell.w_h.data[:, 2 * dm:] = rng.normal(size=(D, 4 * D))
    cell.w_x.data[:, 2 * dm:] = rng.normal(size=(3, 4 * D))
    x, h0, c0 = rng.normal(size=(1, 3)), rng.normal(size=(1, D)), rng.normal(size=(1, D))
    out = cell.step(Tensor(x), Tensor(h0), Tensor(c0))
    np.testing.assert_allclose(out.master_forget.data, 1.0, atol=1e-12)
    np.testing.assert_allclose(out.master_input.data, [[1.0, 0.0]], atol=1e-12)
    pre = x @ cell.w_x.data[:, 2 * dm:] + h0 @ cell.w_h.data[:, 2 * dm:]
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    i, f, o, c_hat = sig(pre[:, :D]), sig(pre[:, D:2 * D]), sig(pre[:, 2 * D:3 * D]), np.tanh(pre[:, 3 * D:])
    c = f * c0 + i * c_hat
    c[:, 2:] = c0[:, 2:]
    np.testing.assert_allclose(out.c.data, c, atol=1e-12)
    np.testing.assert_allclose(out.h.data, o * np.tanh(c), atol=1e-12)


def test_single_step_gradcheck():
    rng = make_rng(5)
    cell = OnLstmCell(rng, 8, 8, 2)
    for p in (cell.w_x, cell.w_h, cell.bias):
        p.data = rng.uniform(-1, 1, size=p.shape)
    x, h0 = Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8)))
    c0 = Tensor(rng.normal(size=(2, 8)))
    w = rng.uniform(-1, 1, size=(2, 8))

    def loss(r):
        out = onlstm_step(x, h0, c0, cell)
        return T.add(T.sum_(T.mul(out.h, w)), T.sum_(T.mul(out.c, w)))

    assert grad_check(loss, [cell.w_x, cell.w_h, cell.bias]) < 1e-4


def test_language_model_gradcheck_vocab_11():
    err, where = onlstm_gradcheck(dim=8, chunk=2, vocab=11)
    assert err < 1e-4, where


def _encoder(layers=3, seed=0):
    return OnLstmEncoder(make_rng(seed), 7, OnLstmConfig(6, 8, 2, layers))


def test_length_one_sentence_has_no_distances():
    _, dists = encode_sequence([3], _encoder())
    assert all(d.shape == (0,) for d in dists)


def test_encoding_is_deterministic():
    a = encode_sequence([1, 2, 3, 4], _encoder())[1]
    b = encode_sequence([1, 2, 3, 4], _encoder())[1]
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_distances_are_bounded_by_master_dim():
    for seed in range(20):
        enc = _encoder(seed=seed)
        for p in enc.params():
            p.data = make_rng(seed).uniform(-2, 2, size=p.shape)
        hiddens, dists = encode_sequence(make_rng(seed).integers(0, 7, size=5), enc)
        assert len(dists) == 3 and len(hiddens) == 3
        for d in dists:
            assert d.shape == (4,)
            assert np.all((d >= -1e-12) & (d <= 4 + 1e-12))


def test_unknown_token_raises():
    with pytest.raises(VocabularyError):
        encode_sequence([1, 99], _encoder())
    with pytest.raises(ContractError):
        encode_sequence([], _encoder())


def test_parse_layer_is_the_second_layer():
    assert parse_distances(["l0", "l1", "l2"]) == "l1"
    assert parse_distances(["only"]) == "only"


def test_padding_does_not_change_short_sequences():
    enc = _encoder()
    ids = np.array([[1, 2, 3, 0, 0], [4, 5, 6, 1, 2]])
    with T.no_grad():
        hiddens, dists = enc.forward(ids, np.array([3, 5]))
        alone_h, alone_d = enc.forward(ids[:1, :3])
    np.testing.assert_allclose(hiddens[-1].data[0, :3], alone_h[-1].data[0], atol=1e-14)
    np.testing.assert_allclose(dists[1].data[0, :3], alone_d[1].data[0], atol=1e-14)


def test_parsed_distances_form_valid_trees():
    enc = _encoder()
    rng = make_rng(9)
    for n in range(1, 9):
        _, dists = encode_sequence(rng.integers(0, 7, size=n), enc)
        assert is_valid(distance_to_tree(list(parse_distances(dists)), n), n)
