"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The summary lines are repeated at the end of the pytest run.
"""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from carousel import cli, gradcheck
from carousel.accum import param_vector, with_param_vector
from carousel.activation import IDENTITY, LOGISTIC, TANH
from carousel.ffnn import FeedForward, Sample, TrainConfig, squared_error
from carousel.harness import ExperimentConfig, run_seeds
from carousel.lstm import Lstm, LstmConfig, lstm_backward_step, lstm_error, update_cell_state
from carousel.rnn import bptt_epoch, rtrl_epoch, run_epoch, total_error
from carousel.topology import build_ffnn, build_lstm, build_rnn, count_connections
from carousel.vanish import carousel, error_flow_factor, self_loop
from carousel.variants import (
    GruLayer, GruNetwork, LstmWeights, grid_block, gru_step, lstm_transform, multidim_memory,
)

from oracles import brute_force_counts, enumerate_paths

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FULL = LstmConfig(learning_rate=1.0, train_forget_bias=True, train_unit_biases=True)


# -- 1 ------------------------------------------------------------------------

def _ffnn_case(rng):
    sizes = [int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))]
    spec = build_ffnn(sizes, rng, 1.0)
    samples = [Sample(rng.normal(size=sizes[0]), rng.uniform(size=sizes[2]))
               for _ in range(int(rng.integers(1, 5)))]
    net, cfg = FeedForward(spec), TrainConfig(learning_rate=1.0)
    change = sum((net.backprop(net.forward(s.input), s, cfg).vector for s in samples),
                 np.zeros(len(param_vector(spec))))
    return spec.n_units, lambda p: squared_error(with_param_vector(spec, p), samples), param_vector(spec), change


def _rnn_case(rng, rtrl):
    spec = build_rnn(int(rng.integers(1, 4)), int(rng.integers(0, 4)), int(rng.integers(1, 3)),
                     rng, 1.0, biases=True)
    T = int(rng.integers(1, 21))
    x = rng.normal(size=(T, len(spec.input_units)))
    d = rng.uniform(size=(T, len(spec.output_units)))
    cfg = TrainConfig(learning_rate=1.0)
    change = (rtrl_epoch(spec, x, d, cfg) if rtrl else bptt_epoch(spec, run_epoch(spec, x, d), cfg)).vector
    return spec.n_units, lambda p: total_error(with_param_vector(spec, p), x, d), param_vector(spec), change


def _gru_case(rng):
    n_in, n_h, n_out = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    net = GruNetwork.random(n_in, n_h, n_out, rng, 0.8)
    T = int(rng.integers(1, 21))
    x, d = rng.normal(size=(T, n_in)), rng.uniform(size=(T, n_out))
    mask = rng.random((T, n_out)) < 0.8
    return n_in + n_h + n_out, lambda p: net.with_params(p).error(x, d, mask), net.params, net.bptt(x, d, mask)


@pytest.mark.criterion(1, "gradient oracle suite")
def test_criterion_1_gradient_oracle(criterion):
    cases = {
        "ffnn_backprop": _ffnn_case,
        "bptt_epoch": lambda rng: _rnn_case(rng, False),
        "rtrl_epoch": lambda rng: _rnn_case(rng, True),
        "gru_bptt": _gru_case,
    }
    start = time.perf_counter()
    worst, failed = {}, {}
    for name, make in cases.items():
        worst[name], failed[name] = 0.0, 0
        for seed in range(20):
            units, loss, params, change = make(np.random.default_rng(seed))
            assert units <= 8
            rep = gradcheck.check(loss, params, -change, 1e-6, 1e-5)
            worst[name] = max(worst[name], rep.max_rel_err)
            failed[name] += not rep.passed
    elapsed = time.perf_counter() - start
    ok = not any(failed.values())
    detail = ", ".join(f"{k} max rel err {worst[k]:.1e} ({failed[k]}/20 over)" for k in cases)
    criterion.verdict(ok and elapsed <= 60, f"{detail}; 80 nets in {elapsed:.1f} s")


# -- 2 ------------------------------------------------------------------------

@pytest.mark.criterion(2, "BPTT and RTRL epoch changes agree")
def test_criterion_2_bptt_equals_rtrl(criterion):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        spec = build_rnn(int(rng.integers(1, 4)), int(rng.integers(0, 4)), int(rng.integers(1, 3)),
                         rng, float(rng.uniform(0.5, 2.0)), activation=[LOGISTIC, TANH][rng.integers(2)],
                         biases=True)
        assert len(spec.non_input_units) <= 6
        T = int(rng.integers(1, 21))
        x = rng.normal(size=(T, len(spec.input_units)))
        d = rng.uniform(size=(T, len(spec.output_units)))
        cfg = TrainConfig(learning_rate=float(rng.uniform(0.1, 1.0)))
        a = bptt_epoch(spec, run_epoch(spec, x, d), cfg).vector
        b = rtrl_epoch(spec, x, d, cfg).vector
        worst = max(worst, float(np.abs(a - b).max()))
    criterion.verdict(worst <= 1e-8, f"max abs difference {worst:.1e} over 50 pairs")


# -- 3 ------------------------------------------------------------------------

@pytest.mark.criterion(3, "truncated LSTM gradient")
def test_criterion_3_truncation(criterion):
    exact_worst, exact_ok = 0.0, True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        spec = build_lstm(int(rng.integers(1, 3)), 1, int(rng.integers(1, 3)), 1, rng=rng,
                          init_range=0.5, recurrent=False)
        T = int(rng.integers(2, 13))
        x = rng.normal(size=(T, len(spec.input_units)))
        d = rng.uniform(size=(T, 1))
        acc, _, _ = lstm_backward_step(spec, x, d, FULL)
        rep = gradcheck.check(lambda p: lstm_error(with_param_vector(spec, p), x, d),
                              param_vector(spec), -acc.vector, 1e-5)
        exact_worst = max(exact_worst, rep.max_rel_err)
        exact_ok &= rep.passed
    positive, differs = 0, 0
    for seed in range(100):
        rng = np.random.default_rng(500 + seed)
        spec = build_lstm(2, 2, 1, 1, rng=rng, init_range=0.5)
        x, d = rng.normal(size=(8, 2)), rng.uniform(size=(8, 1))
        acc, _, _ = lstm_backward_step(spec, x, d, FULL)
        fd = gradcheck.fd_gradient(lambda p: lstm_error(with_param_vector(spec, p), x, d), param_vector(spec))
        positive += float(acc.vector @ -fd) > 0
        differs += not gradcheck.compare(acc.vector, -fd, 1e-5).passed
    ok = exact_ok and positive >= 95 and differs > 0
    criterion.verdict(ok, f"single block max rel err {exact_worst:.1e} on 20 nets; multi-block "
                          f"positive inner product {positive}/100, {differs}/100 differ from FD")


# -- 4 ------------------------------------------------------------------------

@pytest.mark.criterion(4, "vanishing error flow")
def test_criterion_4_vanishing(criterion):
    spec = self_loop(1.0, LOGISTIC, bias=-0.5)
    trace = run_epoch(spec, np.zeros((11, 1)), initial_outputs=[0.0, 0.5])
    rep = error_flow_factor(spec, trace, 1, 1, 1, 11)
    single_ok = rep.step_factors == [0.25] * 10 and abs(rep.factor - 0.25 ** 10) <= 1e-12
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        spec = build_rnn(1, int(rng.integers(0, 2)), int(rng.integers(1, 3)), rng, 2.0,
                         activation=[LOGISTIC, TANH][rng.integers(2)])
        assert spec.n_units <= 4
        span = int(rng.integers(1, 7))
        t1 = span + int(rng.integers(1, 3))
        trace = run_epoch(spec, rng.normal(size=(t1, 1)))
        src = int(rng.choice(spec.output_units))
        sink = int(rng.choice(spec.non_input_units))
        dp = error_flow_factor(spec, trace, src, sink, t1 - span, t1).factor
        worst = max(worst, abs(dp - enumerate_paths(spec, trace, src, sink, t1 - span, t1)))
    criterion.verdict(single_ok and worst <= 1e-10,
                      f"10-step factor {rep.factor!r}; DP vs enumeration max diff {worst:.1e} on 100 nets")


# -- 5 ------------------------------------------------------------------------

@pytest.mark.criterion(5, "constant error carousel")
def test_criterion_5_cec(criterion):
    initial = math.e / 3
    trace = carousel(1001, initial)
    held = bool(np.all(trace.outputs[:, 1] == initial))
    # steps 1..1001 give a span of exactly 1000 back-flow steps
    rep = error_flow_factor(self_loop(1.0, IDENTITY), trace, 1, 1, 1, 1001)
    flow = rep.factor == 1.0 and len(rep.curve) == 1000 and set(rep.curve) == {1.0}
    criterion.verdict(held and flow, f"state held bit-exactly: {held}; factor over 1000 steps {rep.factor!r}")


# -- 6 ------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(6, "long-lag latch contrast")
def test_criterion_6_latch_contrast(criterion, tmp_path):
    lstm_cfg = ExperimentConfig.load(CONFIGS / "latch_lstm.conf")
    rnn_cfg = ExperimentConfig.load(CONFIGS / "latch_rnn.conf")
    assert lstm_cfg.task == rnn_cfg.task and lstm_cfg.task.lag == 100
    assert lstm_cfg.budget == rnn_cfg.budget <= 30_000
    assert lstm_cfg.epoch_sequences == rnn_cfg.epoch_sequences
    seeds = list(range(5))
    start = time.perf_counter()
    lstm = run_seeds(lstm_cfg, seeds, tmp_path / "lstm")
    rnn = run_seeds(rnn_cfg, seeds, tmp_path / "rnn")
    elapsed = time.perf_counter() - start
    lstm_acc = [r.final_accuracy if r else math.nan for r, _ in lstm]
    rnn_acc = [r.final_accuracy if r else math.nan for r, _ in rnn]
    lstm_hits = sum(a >= 0.99 for a in lstm_acc)
    rnn_low = sum(a <= 0.60 for a in rnn_acc)
    used = [r.sequences if r else None for r, _ in lstm]
    ok = lstm_hits >= 3 and rnn_low >= 4 and elapsed <= 600
    criterion.verdict(ok, f"LSTM final {lstm_acc} after {used} sequences ({lstm_hits}/5 >= 0.99); "
                          f"RNN-BPTT final {rnn_acc} after {rnn_cfg.budget} ({rnn_low}/5 <= 0.60); "
                          f"{elapsed:.0f} s")


# -- 7 ------------------------------------------------------------------------

@pytest.mark.criterion(7, "complexity per step and weight")
def test_criterion_7_complexity(criterion):
    weights, ops = [], []
    for B in (1, 2, 4, 8):
        net = Lstm(build_lstm(3, B, 2, 2, rng=0))
        weights.append(net.n_weights)
        ops.append(net.ops_per_step())
    r2 = float(np.corrcoef(weights, ops)[0, 1] ** 2)
    mismatches = [(B, C, In, Out) for B, C, In, Out in itertools.product(range(1, 5), repeat=4)
                  if tuple(count_connections(build_lstm(In, B, C, Out, rng=0)))
                  != brute_force_counts(build_lstm(In, B, C, Out, rng=0))]
    criterion.verdict(r2 >= 0.99 and not mismatches,
                      f"R^2 {r2:.6f}; count_connections mismatches {len(mismatches)}/256")


# -- 8 ------------------------------------------------------------------------

@pytest.mark.criterion(8, "variant reductions")
def test_criterion_8_variants(criterion):
    rng = np.random.default_rng(8)
    w = LstmWeights.random(5, 5, rng, 1.0)
    H, m = rng.normal(size=5), rng.normal(size=5)
    hs, ms = grid_block([H], [m], [w])
    h_ref, m_ref = lstm_transform(w, H, m)
    grid_ok = np.array_equal(hs[0], h_ref) and np.array_equal(ms[0], m_ref)

    layer = GruLayer.random(3, 6, rng, 1.0)
    h0 = rng.normal(size=6)
    h = h0.copy()
    for x in rng.normal(0, 5, size=(100, 3)):
        h = gru_step(layer, h, x, forced={"update": 1.0}).h
    gru_ok = np.array_equal(h, h0)

    f, mm, i, z = rng.uniform(size=64), rng.normal(size=64), rng.uniform(size=64), rng.uniform(-2, 2, 64)
    md = multidim_memory([f], [mm], i, z)
    md_ok = np.array_equal(md, [update_cell_state(mm[j], f[j], i[j], z[j]) for j in range(64)])
    criterion.verdict(grid_ok and gru_ok and md_ok,
                      f"grid N=1 bit-equal {grid_ok}; GRU frozen 100 steps {gru_ok}; "
                      f"multidim N=1 equal {md_ok}")


# -- 9 ------------------------------------------------------------------------

@pytest.mark.criterion(9, "train determinism")
def test_criterion_9_determinism(criterion, tmp_path):
    differing = []
    for trainer in ("ffnn_bp", "rnn_bptt", "rnn_rtrl", "lstm", "gru_bptt"):
        task = "counting" if trainer == "rnn_rtrl" else "latch"
        argv = ["train", "--config", str(CONFIGS / "latch_lstm.conf"), "--set", f"trainer={trainer}",
                "--set", f"task={task}", "--set", "lag=20", "--set", "epochs=3",
                "--set", "epoch_sequences=30", "--set", "eval_sequences=20", "--set", "stop_accuracy=",
                "--seed", "123", "--seed", "7"]
        runs = []
        for k, jobs in enumerate(("1", "1", "2")):
            out = tmp_path / trainer / str(k)
            assert cli.main(argv + ["--out", str(out), "--jobs", jobs]) == 0
            runs.append([(out / f"seed-{s}" / "metrics.csv").read_bytes() for s in (123, 7)])
        if not runs[0] == runs[1] == runs[2]:
            differing.append(trainer)
    criterion.verdict(not differing, f"5 trainers x 2 seeds, repeated and with --jobs 2; "
                                     f"differing: {differing or 'none'}")
