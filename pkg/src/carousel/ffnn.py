"""Perceptron learning and feed-forward backpropagation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .accum import DivergenceError, GradientAccumulator
from .activation import ActivationTable
from .topology import NetworkSpec, Role, UnsupportedTopology, instant_order, require_valid


@dataclass(frozen=True)
class Sample:
    input: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "input", np.atleast_1d(np.asarray(self.input, dtype=np.float64)))
        object.__setattr__(self, "label", np.atleast_1d(np.asarray(self.label, dtype=np.float64)))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    max_epochs: int = 1000
    stop_tolerance: float = 0.0
    batch: bool = False
    train_biases: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be a positive integer")
        if self.stop_tolerance < 0:
            raise ValueError("stop_tolerance must be nonnegative")


# --------------------------------------------------------------------------
# perceptron


def perceptron_output(weights, bias: float, x) -> int:
    """+1 if the state sum(w*x) + bias is strictly positive, otherwise -1."""
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"weights {w.shape} and input {x.shape} differ in length")
    return 1 if float(w @ x) + bias > 0 else -1


@dataclass
class PerceptronResult:
    weights: np.ndarray
    bias: float
    converged: bool
    epochs: int


def perceptron_train(samples: Sequence[Sample], config: TrainConfig, rng=None,
                     init_weights=None, init_bias: float | None = None) -> PerceptronResult:
    """Perceptron rule, sample by sample, until an error-free epoch.

    The bias is learned as the weight of a constant input of 1. Initial
    weights are drawn from U(-0.1, 0.1) unless given.
    """
    if not samples:
        raise ValueError("perceptron_train needs at least one sample")
    n = samples[0].input.size
    for s in samples:
        if s.input.size != n:
            raise ValueError("samples differ in input length")
        if s.label.size != 1 or s.label[0] not in (1.0, -1.0):
            raise ValueError("perceptron labels must be +1 or -1")
    rng = np.random.default_rng(rng)
    w = (np.array(init_weights, dtype=np.float64) if init_weights is not None
         else rng.uniform(-0.1, 0.1, n))
    b = float(init_bias) if init_bias is not None else float(rng.uniform(-0.1, 0.1))
    eta = config.learning_rate
    for epoch in range(1, config.max_epochs + 1):
        mistakes = 0
        for s in samples:
            y = perceptron_output(w, b, s.input)
            d = s.label[0]
            if y != d:
                mistakes += 1
                w = w + eta * (d - y) * s.input
                b = b + eta * (d - y)
        if mistakes == 0:
            return PerceptronResult(w, b, True, epoch)
    return PerceptronResult(w, b, False, config.max_epochs)


# --------------------------------------------------------------------------
# feed-forward networks


@dataclass
class NetworkState:
    """Forward quantities of one presentation: weighted input, state and
    output for every unit (input units carry the external input)."""

    net: np.ndarray
    state: np.ndarray
    output: np.ndarray


class FeedForward:
    """Compiled feed-forward net: dense ``W[dst, src]``, biases and the units
    grouped into dependency levels so each level is one matrix product."""

    def __init__(self, spec: NetworkSpec):
        require_valid(spec)
        try:
            order = instant_order(_all_instant(spec))
        except UnsupportedTopology:
            raise UnsupportedTopology("feed-forward pass needs a loop-free network") from None
        n = spec.n_units
        self.spec = spec
        self.src = np.array([c.src for c in spec.connections], dtype=np.intp)
        self.dst = np.array([c.dst for c in spec.connections], dtype=np.intp)
        self.W = np.zeros((n, n))
        self.W[self.dst, self.src] = spec.weights
        self.b = spec.biases
        self.inputs = np.array(spec.input_units, dtype=np.intp)
        self.outputs = np.array(spec.output_units, dtype=np.intp)
        depth = [0] * n
        for u in order:
            for c in spec.connections:
                if c.src == u:
                    depth[c.dst] = max(depth[c.dst], depth[u] + 1)
        acts = [u.activation for u in spec.units]
        self.levels = []
        for d in range(1, max(depth, default=0) + 1):
            ix = np.array([u for u in range(n) if depth[u] == d
                           and spec.units[u].role is not Role.INPUT], dtype=np.intp)
            if ix.size:
                self.levels.append((ix, ActivationTable([acts[i] for i in ix])))

    def params(self):
        return self.W[self.dst, self.src].copy(), self.b.copy()

    def add(self, acc: GradientAccumulator) -> None:
        self.W[self.dst, self.src] += acc.weights
        self.b = self.b + acc.biases
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise DivergenceError("weight update produced non-finite values")

    def to_spec(self) -> NetworkSpec:
        w, b = self.params()
        return self.spec.with_params(w, b)

    def forward(self, x) -> NetworkState:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if x.size != self.inputs.size:
            raise ValueError(f"expected {self.inputs.size} inputs, got {x.size}")
        n = self.W.shape[0]
        net = np.zeros(n)
        state = np.zeros(n)
        y = np.zeros(n)
        y[self.inputs] = x
        for ix, table in self.levels:
            net[ix] = self.W[ix] @ y
            state[ix] = net[ix] + self.b[ix]
            y[ix] = table.f(state[ix])
        return NetworkState(net, state, y)

    def backprop(self, state: NetworkState, sample: Sample, config: TrainConfig) -> GradientAccumulator:
        n = self.W.shape[0]
        if state.output.shape != (n,):
            raise ValueError("state does not belong to this network")
        if sample.label.size != self.outputs.size:
            raise ValueError("label length does not match output units")
        err = np.zeros(n)
        err[self.outputs] = sample.label - state.output[self.outputs]
        delta = np.zeros(n)
        for ix, table in reversed(self.levels):
            delta[ix] = table.df(state.state[ix]) * (err[ix] + self.W[:, ix].T @ delta)
        eta = config.learning_rate
        dw = eta * delta[self.dst] * state.output[self.src]
        db = eta * delta if config.train_biases else np.zeros(n)
        return GradientAccumulator(dw, db)


def _all_instant(spec: NetworkSpec) -> NetworkSpec:
    # A feed-forward pass has no time axis; every connection is immediate.
    return replace(spec, connections=tuple(replace(c, delay=0) for c in spec.connections))


def ffnn_forward(spec: NetworkSpec, x) -> NetworkState:
    """Propagate ``x`` from the input units through every level."""
    return FeedForward(spec).forward(x)


def ffnn_backprop_step(spec: NetworkSpec, state: NetworkState, sample: Sample,
                       config: TrainConfig) -> GradientAccumulator:
    """Weight changes ``eta * delta_dst * y_src`` for one sample.

    Output units get ``delta = f'(s)(d - y)``; every other unit gets
    ``f'(s) * sum(w * delta)`` over its successors.
    """
    return FeedForward(spec).backprop(state, sample, config)


def squared_error(spec: NetworkSpec | FeedForward, samples: Sequence[Sample]) -> float:
    """0.5 * sum over samples and output units of (d - y)^2."""
    net = spec if isinstance(spec, FeedForward) else FeedForward(spec)
    total = []
    for s in samples:
        y = net.forward(s.input).output[net.outputs]
        total.extend(((s.label - y) ** 2).tolist())
    return 0.5 * math.fsum(total)


@dataclass
class FitResult:
    spec: NetworkSpec
    errors: list[float] = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.errors[-1] if self.errors else math.inf


def train_ffnn(spec: NetworkSpec, samples: Sequence[Sample], config: TrainConfig) -> FitResult:
    """Backpropagation with per-sample updates (or summed per epoch when
    ``config.batch``). Stops once the epoch error drops below
    ``config.stop_tolerance``."""
    if not samples:
        raise ValueError("no training samples")
    net = FeedForward(spec)
    errors = []
    for _ in range(config.max_epochs):
        if config.batch:
            acc = GradientAccumulator.zeros(spec)
            for s in samples:
                acc += net.backprop(net.forward(s.input), s, config)
            net.add(acc)
        else:
            for s in samples:
                net.add(net.backprop(net.forward(s.input), s, config))
        err = squared_error(net, samples)
        errors.append(err)
        if err < config.stop_tolerance:
            break
    return FitResult(net.to_spec(), errors)
