"""Fully recurrent networks: forward dynamics, BPTT and RTRL.

Time runs over ``t0 = 0 .. T``. Row 0 of every trace array is the initial
state (outputs zero unless given); rows 1..T hold the steps driven by the
external input. Non-input units read other non-input units one step late and
input units in the same step.

Both trainers return the *weight change* ``-eta * dE_total/dw`` accumulated
over the epoch with the weights held fixed, so on identical data they agree
to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accum import DivergenceError, GradientAccumulator
from .activation import ActivationTable
from .ffnn import TrainConfig
from .topology import BLOCK_ROLES, NetworkSpec, Role, UnsupportedTopology, require_valid


class MissingTargetError(ValueError):
    """RTRL needs a finite target at every step."""


@dataclass
class EpochTrace:
    """Forward record of one epoch; arrays are indexed ``[time, unit]``."""

    inputs: np.ndarray   # (T+1, n_in); row 0 unused
    outputs: np.ndarray  # (T+1, N)
    net: np.ndarray      # (T+1, N) weighted input, bias excluded
    state: np.ndarray    # (T+1, N) net + bias, the squashing argument
    targets: np.ndarray  # (T+1, N)
    mask: np.ndarray     # (T+1, N) bool; which units have a target when

    @property
    def steps(self) -> int:
        return self.outputs.shape[0] - 1

    @property
    def errors(self) -> np.ndarray:
        return np.where(self.mask, self.targets - self.outputs, 0.0)

    def total_error(self) -> float:
        e = self.errors
        return 0.5 * math.fsum((e * e).ravel().tolist())


def expand_targets(spec: NetworkSpec, steps: int, targets=None, mask=None, units=None):
    """Lay per-unit targets out over the full unit axis.

    ``targets`` is ``(T, len(units))``; ``mask`` is ``(T,)`` or
    ``(T, len(units))`` and defaults to all-true. ``units`` defaults to the
    output units. Returns ``(T+1, N)`` arrays with an empty row 0.
    """
    units = spec.output_units if units is None else list(units)
    n = spec.n_units
    d = np.zeros((steps + 1, n))
    m = np.zeros((steps + 1, n), dtype=bool)
    if targets is not None:
        t = np.asarray(targets, dtype=np.float64).reshape(steps, len(units))
        d[1:, units] = t
        if mask is None:
            mm = np.ones((steps, len(units)), dtype=bool)
        else:
            mm = np.asarray(mask, dtype=bool)
            if mm.ndim == 1:
                mm = np.repeat(mm[:, None], len(units), axis=1)
        m[1:, units] = mm
    return d, m


class Recurrent:
    """Compiled recurrent network with its own mutable weight matrices."""

    def __init__(self, spec: NetworkSpec):
        require_valid(spec)
        for u in spec.units:
            if u.role in BLOCK_ROLES or u.role is Role.GRU_UNIT:
                raise UnsupportedTopology(f"unit {u.index} ({u.role.value}) is not a plain recurrent unit")
        roles = [u.role for u in spec.units]
        for c in spec.connections:
            if roles[c.src] is not Role.INPUT and c.delay != 1:
                raise UnsupportedTopology("recurrent connections between non-input units need delay 1")
        n = spec.n_units
        self.spec = spec
        self.n = n
        self.inputs = np.array(spec.input_units, dtype=np.intp)
        self.non_input = np.array(spec.non_input_units, dtype=np.intp)
        self.src = np.array([c.src for c in spec.connections], dtype=np.intp)
        self.dst = np.array([c.dst for c in spec.connections], dtype=np.intp)
        self.delayed = np.array([c.delay == 1 for c in spec.connections], dtype=bool)
        self.W = np.zeros((n, n))   # delayed, non-input sources
        self.V = np.zeros((n, n))   # immediate, input sources
        self._load(spec.weights)
        self.b = spec.biases
        self.table = ActivationTable([u.activation for u in spec.units], self.non_input)

    def _load(self, weights):
        self.W[:] = 0.0
        self.V[:] = 0.0
        d = self.delayed
        self.W[self.dst[d], self.src[d]] = weights[d]
        self.V[self.dst[~d], self.src[~d]] = weights[~d]

    @property
    def weights(self) -> np.ndarray:
        d = self.delayed
        out = np.empty(len(self.src))
        out[d] = self.W[self.dst[d], self.src[d]]
        out[~d] = self.V[self.dst[~d], self.src[~d]]
        return out

    def add(self, acc: GradientAccumulator) -> None:
        w = self.weights + acc.weights
        b = self.b + acc.biases
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DivergenceError("weight update produced non-finite values")
        self._load(w)
        self.b = b

    def to_spec(self) -> NetworkSpec:
        return self.spec.with_params(self.weights, self.b)

    # -- forward -----------------------------------------------------------

    def step(self, prev_outputs, x_next):
        """One update: returns ``(outputs, net, state)`` at ``t+1``."""
        y = np.zeros(self.n)
        y[self.inputs] = x_next
        net = self.W @ prev_outputs + self.V @ y
        state = net + self.b
        state[self.inputs] = 0.0
        net[self.inputs] = 0.0
        y = y + self.table.f(state)
        return y, net, state

    def _initial(self, initial_outputs):
        y0 = np.zeros(self.n)
        if initial_outputs is not None:
            init = np.asarray(initial_outputs, dtype=np.float64)
            if init.shape == (self.n,):
                y0[self.non_input] = init[self.non_input]
            elif init.shape == (self.non_input.size,):
                y0[self.non_input] = init
            else:
                raise ValueError("initial outputs must cover all units or all non-input units")
        return y0

    def run(self, inputs, targets=None, mask=None, initial_outputs=None) -> EpochTrace:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None] if self.inputs.size == 1 else x[None, :]
        if x.shape[1] != self.inputs.size:
            raise ValueError(f"expected {self.inputs.size} input columns, got {x.shape[1]}")
        T = x.shape[0]
        Y = np.zeros((T + 1, self.n))
        net = np.zeros((T + 1, self.n))
        state = np.zeros((T + 1, self.n))
        Y[0] = self._initial(initial_outputs)
        for t in range(1, T + 1):
            Y[t], net[t], state[t] = self.step(Y[t - 1], x[t - 1])
        X = np.zeros((T + 1, self.inputs.size))
        X[1:] = x
        D, M = self._targets(T, targets, mask)
        return EpochTrace(X, Y, net, state, D, M)

    def _targets(self, T, targets, mask):
        if targets is None:
            return np.zeros((T + 1, self.n)), np.zeros((T + 1, self.n), dtype=bool)
        D = np.asarray(targets, dtype=np.float64)
        if D.shape == (T + 1, self.n):
            M = np.ones_like(D, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
            if M.shape != D.shape:
                raise ValueError("mask shape must match targets")
            M = M.copy()
            M[:, self.inputs] = False
            M[0] = False
            return D, M
        return expand_targets(self.spec, T, D, mask)

    # -- BPTT --------------------------------------------------------------

    def bptt(self, trace: EpochTrace, config: TrainConfig) -> GradientAccumulator:
        """Error signals run backwards from the last step:
        ``delta(t) = f'(s(t)) * (e(t) + W^T delta(t+1))``; the weight change
        sums ``eta * delta_dst(t) * x_src(t)`` over the epoch."""
        if trace.outputs.shape[1] != self.n:
            raise ValueError("trace does not belong to this network")
        T = trace.steps
        e = trace.errors
        deltas = np.zeros((T + 2, self.n))
        WT = self.W.T
        for t in range(T, 0, -1):
            deltas[t] = self.table.df(trace.state[t]) * (e[t] + WT @ deltas[t + 1])
        d = deltas[1:T + 1]
        gW = d.T @ trace.outputs[:-1]
        gV = d.T @ trace.outputs[1:]
        return self._collect(gW, gV, d.sum(axis=0), config)

    def _collect(self, gW, gV, gb, config) -> GradientAccumulator:
        d = self.delayed
        g = np.empty(len(self.src))
        g[d] = gW[self.dst[d], self.src[d]]
        g[~d] = gV[self.dst[~d], self.src[~d]]
        eta = config.learning_rate
        gb = gb.copy()
        gb[self.inputs] = 0.0
        return GradientAccumulator(eta * g, eta * gb if config.train_biases else np.zeros(self.n))

    # -- RTRL --------------------------------------------------------------

    def rtrl(self, inputs, targets, mask=None, config: TrainConfig = TrainConfig(),
             initial_outputs=None, online: bool = False, sensitivities: list | None = None
             ) -> GradientAccumulator:
        """Forward-propagated sensitivities ``p[k, j] = dy_k/dw_j``.

        ``p`` starts at zero and follows
        ``p(t+1) = f'(s(t+1)) * (onehot(dst_j) * x_j(t+1) + W p(t))``; each step
        contributes ``eta * sum_k e_k(t) p[k, j]``. With ``online`` the
        contribution is applied to the weights immediately (the sensitivities
        keep running, as in real-time use); otherwise weights stay frozen for
        the epoch. Passing a list as ``sensitivities`` records ``p`` per step.
        """
        x = np.asarray(inputs, dtype=np.float64).reshape(-1, self.inputs.size)
        T = x.shape[0]
        D, M = self._targets(T, targets, mask)
        if not np.all(np.isfinite(D[1:][M[1:]])):
            raise MissingTargetError("non-finite target")
        if targets is None or not M[1:].any(axis=1).all():
            raise MissingTargetError("RTRL needs a target at every step")
        n_w = len(self.src)
        P = n_w + self.n
        cols = np.arange(P)
        rows = np.concatenate([self.dst, np.arange(self.n)])
        p = np.zeros((self.n, P))
        if sensitivities is not None:
            sensitivities.append(p.copy())
        y_prev = self._initial(initial_outputs)
        total = np.zeros(P)
        eta = config.learning_rate
        for t in range(1, T + 1):
            y, _, state = self.step(y_prev, x[t - 1])
            sig = np.where(self.delayed, y_prev[self.src], y[self.src])
            imm = np.zeros((self.n, P))
            imm[rows, cols] = np.concatenate([sig, np.ones(self.n)])
            p = self.table.df(state)[:, None] * (imm + self.W @ p)
            if sensitivities is not None:
                sensitivities.append(p.copy())
            e = np.where(M[t], D[t] - y, 0.0)
            step = eta * (e @ p)
            total += step
            if online:
                acc = GradientAccumulator(step[:n_w].copy(), self._bias_part(step[n_w:], config))
                self.add(acc)
            y_prev = y
        return GradientAccumulator(total[:n_w].copy(), self._bias_part(total[n_w:], config))

    def _bias_part(self, gb, config):
        gb = gb.copy()
        gb[self.inputs] = 0.0
        return gb if config.train_biases else np.zeros(self.n)


# ---------------------------------------------------------------------------
# functional surface


def rnn_step(spec: NetworkSpec, prev_outputs, external_input):
    """``(outputs, weighted_inputs)`` at t+1 from outputs at t and input at t+1."""
    net = Recurrent(spec)
    prev = net._initial(prev_outputs)
    y, weighted, _ = net.step(prev, np.asarray(external_input, dtype=np.float64))
    return y, weighted


def run_epoch(spec: NetworkSpec, inputs, targets=None, mask=None, initial_outputs=None) -> EpochTrace:
    return Recurrent(spec).run(inputs, targets, mask, initial_outputs)


def bptt_epoch(spec: NetworkSpec, trace: EpochTrace, config: TrainConfig) -> GradientAccumulator:
    return Recurrent(spec).bptt(trace, config)


def rtrl_epoch(spec: NetworkSpec, inputs, targets, config: TrainConfig, mask=None,
               initial_outputs=None, online: bool = False) -> GradientAccumulator:
    return Recurrent(spec).rtrl(inputs, targets, mask, config, initial_outputs, online)


def total_error(spec: NetworkSpec, inputs, targets, mask=None, initial_outputs=None) -> float:
    return run_epoch(spec, inputs, targets, mask, initial_outputs).total_error()
