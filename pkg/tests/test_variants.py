import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carousel import gradcheck
from carousel.activation import CELL_OUTPUT, evaluate
from carousel.lstm import update_cell_state
from carousel.variants import (
    GruLayer, GruNetwork, LstmWeights, MultidimWeights, ShapeError, grid_block, gru_step,
    lstm_transform, multidim_lstm_step, multidim_memory, stacked_step,
)


def sig(x):
    return 1 / (1 + np.exp(-x))


# -- GRU -----------------------------------------------------------------------

def test_update_gate_one_freezes_state_for_100_steps():
    rng = np.random.default_rng(0)
    layer = GruLayer.random(3, 5, rng, 1.0)
    h0 = rng.normal(size=5)
    h = h0.copy()
    for x in rng.normal(0, 5, size=(100, 3)):
        h = gru_step(layer, h, x, forced={"update": 1.0}).h
    np.testing.assert_array_equal(h, h0)


def test_update_gate_zero_takes_candidate():
    rng = np.random.default_rng(1)
    layer = GruLayer.random(2, 4, rng, 1.0)
    st_ = gru_step(layer, rng.normal(size=4), rng.normal(size=2), forced={"update": 0.0})
    np.testing.assert_array_equal(st_.h, st_.candidate)


def test_reset_zero_annihilates_recurrent_sum():
    rng = np.random.default_rng(2)
    layer = GruLayer.random(2, 3, rng, 1.0)
    layer = GruLayer(layer.W_r, layer.U_r, layer.b_r, layer.W_z, layer.U_z, layer.b_z,
                     np.zeros_like(layer.W_h), layer.U_h, np.zeros(3))
    st_ = gru_step(layer, rng.normal(size=3), rng.normal(size=2), forced={"reset": 0.0})
    np.testing.assert_array_equal(st_.candidate, 0.0)


def test_candidate_uses_reset_times_whole_sum():
    rng = np.random.default_rng(3)
    L = GruLayer.random(2, 3, rng, 1.0)
    h, x = rng.normal(size=3), rng.normal(size=2)
    r = sig(L.W_r @ x + L.U_r @ h + L.b_r)
    z = sig(L.W_z @ x + L.U_z @ h + L.b_z)
    cand = np.tanh(L.W_h @ x + r * (L.U_h @ h) + L.b_h)
    out = gru_step(L, h, x)
    np.testing.assert_allclose(out.candidate, cand, rtol=1e-14)
    np.testing.assert_allclose(out.h, z * h + (1 - z) * cand, rtol=1e-14, atol=1e-16)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 5.0))
def test_gru_convexity(seed, scale):
    rng = np.random.default_rng(seed)
    layer = GruLayer.random(2, 4, rng, scale)
    h = rng.uniform(-1, 1, 4)
    for x in rng.normal(0, scale, size=(5, 2)):
        out = gru_step(layer, h, x)
        lo = np.minimum(h, out.candidate)
        hi = np.maximum(h, out.candidate)
        assert np.all((lo <= out.h) & (out.h <= hi))
        # saturated gates may round to the closed endpoints
        assert np.all((out.r >= 0) & (out.r <= 1) & (out.z >= 0) & (out.z <= 1))
        h = out.h


@pytest.mark.parametrize("seed", range(20))
def test_gru_bptt_matches_fd(seed):
    rng = np.random.default_rng(seed)
    n_in, n_h, n_out = (int(v) for v in rng.integers(1, 4, 3))
    net = GruNetwork.random(n_in, n_h, n_out, rng, 0.8)
    T = int(rng.integers(2, 21))
    x, d = rng.normal(size=(T, n_in)), rng.uniform(size=(T, n_out))
    mask = rng.random((T, n_out)) < 0.7
    rep = gradcheck.check(lambda p: net.with_params(p).error(x, d, mask), net.params,
                          -net.bptt(x, d, mask), 1e-6)
    assert rep.passed, rep.max_rel_err


def test_gru_checkpoint_round_trip():
    net = GruNetwork.random(2, 3, 1, 0, 0.5)
    back = GruNetwork.loads(net.dumps())
    np.testing.assert_array_equal(back.params, net.params)
    assert len(net.param_names()) == net.params.size


def test_gru_shape_errors():
    layer = GruLayer.random(2, 3, 0)
    with pytest.raises(ShapeError):
        gru_step(layer, np.zeros(2), np.zeros(2))
    with pytest.raises(ShapeError):
        GruNetwork.random(2, 3, 1, 0).with_params(np.zeros(3))


# -- LSTM transform and grid family ------------------------------------------------

def test_transform_zero_weights():
    h, m = lstm_transform(LstmWeights.zeros(6, 4), np.arange(6.0), np.zeros(4))
    assert not h.any() and not m.any()


def test_transform_cec():
    rng = np.random.default_rng(0)
    w = LstmWeights.random(5, 3, rng, 2.0)
    m = rng.normal(size=3)
    _, m_new = lstm_transform(w, rng.normal(size=5), m, forced={"input": 0.0, "forget": 1.0})
    np.testing.assert_array_equal(m_new, m)


def test_transform_shapes():
    rng = np.random.default_rng(1)
    for n_in, n_mem in [(1, 1), (4, 2), (7, 5)]:
        h, m = lstm_transform(LstmWeights.random(n_in, n_mem, rng), rng.normal(size=n_in), np.zeros(n_mem))
        assert h.shape == m.shape == (n_mem,)
    with pytest.raises(ShapeError):
        lstm_transform(LstmWeights.random(3, 2, rng), np.zeros(4), np.zeros(2))


def test_multidim_memory_examples():
    m1 = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(multidim_memory([np.ones(3)], [m1], np.zeros(3), np.full(3, 9.0)), m1)
    half = 0.5 * np.ones(2)
    m = multidim_memory([half, half], [np.full(2, 2.0), np.full(2, 2.0)], np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(m, [2.0, 2.0])
    with pytest.raises(ShapeError):
        multidim_memory([np.ones(2)], [np.ones(3)], np.zeros(2), np.zeros(2))


def test_multidim_memory_scalar_oracle():
    rng = np.random.default_rng(5)
    fs = [rng.uniform(size=6) for _ in range(3)]
    ms = [rng.normal(size=6) for _ in range(3)]
    i, z = rng.uniform(size=6), rng.uniform(-2, 2, 6)
    out = multidim_memory(fs, ms, i, z)
    for j in range(6):
        ref = 0.0
        for k in range(3):
            ref += fs[k][j] * ms[k][j]
        ref += i[j] * z[j]
        assert out[j] == pytest.approx(ref, rel=1e-15, abs=1e-15)


def test_multidim_memory_reduces_to_cell_update():
    rng = np.random.default_rng(6)
    f, m, i, z = rng.uniform(size=50), rng.normal(size=50), rng.uniform(size=50), rng.uniform(-2, 2, 50)
    out = multidim_memory([f], [m], i, z)
    expect = [update_cell_state(m[j], f[j], i[j], z[j]) for j in range(50)]
    np.testing.assert_array_equal(out, expect)


def test_grid_block_single_dimension_is_transform():
    rng = np.random.default_rng(7)
    w = LstmWeights.random(4, 4, rng, 1.0)
    H, m = rng.normal(size=4), rng.normal(size=4)
    hs, ms = grid_block([H], [m], [w])
    h_ref, m_ref = lstm_transform(w, H, m)
    np.testing.assert_array_equal(hs[0], h_ref)
    np.testing.assert_array_equal(ms[0], m_ref)


def test_grid_block_zero_weight_dimension():
    rng = np.random.default_rng(8)
    w1 = LstmWeights.random(6, 3, rng, 1.0)
    w2 = LstmWeights.zeros(6, 3)
    for _ in range(5):
        H = [rng.normal(0, 3, 3), rng.normal(0, 3, 3)]
        hs, ms = grid_block(H, [rng.normal(size=3), np.zeros(3)], [w1, w2])
        assert not hs[1].any() and not ms[1].any()


def test_grid_block_permutation_equivariance():
    # dyadic values keep every weighted sum exact, so reordering the
    # concatenated input cannot change a single bit
    rng = np.random.default_rng(9)
    n, size = 3, 2

    def dyadic(*shape):
        return rng.integers(-8, 9, shape) / 8

    ws = [LstmWeights(dyadic(size, n * size), dyadic(size), dyadic(size, n * size), dyadic(size),
                      dyadic(size, n * size), dyadic(size), dyadic(size, n * size), dyadic(size))
          for _ in range(n)]
    H = [dyadic(size) for _ in range(n)]
    M = [dyadic(size) for _ in range(n)]
    hs, ms = grid_block(H, M, ws)
    perm = [2, 0, 1]
    cols = np.concatenate([np.arange(k * size, (k + 1) * size) for k in perm])
    ws_p = [ws[k].permute_input(cols) for k in perm]
    hs_p, ms_p = grid_block([H[k] for k in perm], [M[k] for k in perm], ws_p)
    for j, k in enumerate(perm):
        np.testing.assert_array_equal(hs_p[j], hs[k])
        np.testing.assert_array_equal(ms_p[j], ms[k])


def test_multidim_step_merges_memories():
    rng = np.random.default_rng(10)
    w = MultidimWeights.random(3, 2, 4, 2, rng, 1.0)
    x = rng.normal(size=3)
    hp = [rng.normal(size=4) for _ in range(2)]
    mp = [rng.normal(size=4) for _ in range(2)]
    h, m = multidim_lstm_step(w, x, hp, mp)
    t = w.transform
    H = np.concatenate([w.P @ x] + hp)
    f = [sig(t.W_f[k] @ H + t.b_f[k]) for k in range(2)]
    i = sig(t.W_i @ H + t.b_i)
    o = sig(t.W_o @ H + t.b_o)
    z = 4 * sig(t.W_c @ H + t.b_c) - 2
    m_ref = f[0] * mp[0] + f[1] * mp[1] + i * z
    np.testing.assert_allclose(m, m_ref, rtol=1e-13)
    np.testing.assert_allclose(h, o * evaluate(CELL_OUTPUT, m_ref), rtol=1e-13)


def test_stacked_step_chains_layers():
    rng = np.random.default_rng(11)
    P = rng.normal(size=(2, 3))
    layers = [LstmWeights.random(2 + 4, 4, rng, 1.0), LstmWeights.random(4 + 4, 4, rng, 1.0)]
    x = rng.normal(size=3)
    h = [rng.normal(size=4) for _ in range(2)]
    m = [rng.normal(size=4) for _ in range(2)]
    hs, ms = stacked_step(layers, P, x, h, m)
    h1, m1 = lstm_transform(layers[0], np.concatenate([P @ x, h[0]]), m[0])
    h2, m2 = lstm_transform(layers[1], np.concatenate([h1, h[1]]), m[1])
    np.testing.assert_array_equal(hs[1], h2)
    np.testing.assert_array_equal(ms[0], m1)
