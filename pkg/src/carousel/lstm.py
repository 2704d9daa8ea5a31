"""Memory-block networks: forward pass and the hybrid truncated gradient.

Units fall into three groups:

* input units, set from outside;
* block units (cells and their gates), which read non-input units one step
  late and input units in the same step;
* readout units (hidden and output), which read cells, hidden units and
  inputs in the same step, in dependency order.

Each step runs gates, then cell states ``s <- s * y_forget + y_in * g(net)``,
then cell outputs ``y_out * h(s)``, then the readout.

The backward pass mixes two schemes. Readout units and output gates get an
error signal local to the step. Cells, input gates and forget gates keep
running derivatives ``dS = ds_c/dw`` that decay by the forget activation,
so the gradient is ``sum_t eps_c(t) * dS(t)`` with the step-local cell error
``eps_c = y_out * h'(s) * sum_k w_kc eps_k``. No other error crosses a time
step. Because everything is carried forward, one sweep over the sequence
yields the whole gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accum import DivergenceError, GradientAccumulator
from .activation import CELL_OUTPUT, ActivationTable
from .topology import NetworkSpec, Role, UnsupportedTopology, instant_order, require_valid


def update_cell_state(s_prev: float, y_forget: float, y_in: float, g_of_net: float) -> float:
    """``s(t+1) = s(t) * y_forget + y_in * g(net_c)``; ``y_forget = 1`` is the
    plain carousel."""
    for name, v in (("y_forget", y_forget), ("y_in", y_in)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return s_prev * y_forget + y_in * g_of_net


@dataclass(frozen=True)
class LstmConfig:
    learning_rate: float = 0.1
    online: bool = False           # apply each step's change immediately
    epochs: int = 1
    train_forget_bias: bool = False
    train_unit_biases: bool = False  # cells, hidden and output units

    def __post_init__(self):
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be finite and nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")


@dataclass
class LstmState:
    """Every forward quantity at one time step.

    ``cell_state``, ``y_in``, ``y_out`` and ``y_forget`` are aligned with
    :attr:`Lstm.cells` (gate values repeated for each cell of a block).
    """

    t: int
    output: np.ndarray       # (N,) activations, inputs included
    state: np.ndarray        # (N,) squashing arguments (net + bias)
    cell_state: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray
    y_forget: np.ndarray
    # Squashed values and derivatives of the block rows (see Lstm.rows).
    block_value: np.ndarray | None = None
    block_deriv: np.ndarray | None = None


@dataclass
class TraceStore:
    """Running ``ds_c/dw`` for the weights into each cell, its input gate and
    its forget gate. Columns follow :attr:`Lstm.columns`."""

    cell: np.ndarray
    input_gate: np.ndarray
    forget_gate: np.ndarray

    @classmethod
    def zeros(cls, n_cells: int, n_cols: int) -> "TraceStore":
        return cls(np.zeros((n_cells, n_cols)), np.zeros((n_cells, n_cols)), np.zeros((n_cells, n_cols)))

    def copy(self) -> "TraceStore":
        return TraceStore(self.cell.copy(), self.input_gate.copy(), self.forget_gate.copy())


@dataclass
class IndividualError:
    """Per-step error signals, ``eps[t, unit]``. Cells hold the step-local
    cell error; :func:`cell_error_recurrence` gives the accumulated one."""

    eps: np.ndarray


@dataclass
class LstmTrace:
    states: list[LstmState]
    targets: np.ndarray      # (T+1, N)
    mask: np.ndarray         # (T+1, N)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def outputs(self) -> np.ndarray:
        return np.array([s.output for s in self.states])

    def total_error(self) -> float:
        e = np.where(self.mask, self.targets - self.outputs, 0.0)
        return 0.5 * math.fsum((e * e).ravel().tolist())


class Lstm:
    """Compiled memory-block network holding its own weights.

    Block units are rows of ``A`` over the source columns
    ``[y(t) for every unit] + [x(t+1) for every input] + [1]``; the last
    column is the bias. Readout units use ``W0[dst, src]`` over same-step
    activations.
    """

    def __init__(self, spec: NetworkSpec):
        require_valid(spec)
        if not spec.blocks:
            raise UnsupportedTopology("network has no memory blocks")
        n = spec.n_units
        roles = [u.role for u in spec.units]
        if any(r is Role.GRU_UNIT for r in roles):
            raise UnsupportedTopology("GRU units are not memory-block units")
        self.spec = spec
        self.n = n
        self.inputs = np.array(spec.input_units, dtype=np.intp)
        self.outputs = np.array(spec.output_units, dtype=np.intp)
        blocks = spec.blocks
        self.n_blocks = len(blocks)
        self.cells = np.array([c for b in blocks for c in b.cells], dtype=np.intp)
        cell_block = np.array([k for k, b in enumerate(blocks) for _ in b.cells], dtype=np.intp)
        self.has_forget = spec.forget_gates
        ig = [b.input_gate for b in blocks]
        og = [b.output_gate for b in blocks]
        fg = [b.forget_gate for b in blocks] if self.has_forget else []
        # Rows of A: cells, input gates, output gates, forget gates.
        self.rows = np.array(list(self.cells) + ig + og + fg, dtype=np.intp)
        nc, nb = self.cells.size, self.n_blocks
        self.ig_row = nc + np.arange(nb)
        self.og_row = nc + nb + np.arange(nb)
        self.fg_row = nc + 2 * nb + np.arange(nb) if self.has_forget else None
        self.cell_block = cell_block
        self.member = np.zeros((nb, nc))
        self.member[cell_block, np.arange(nc)] = 1.0
        self.n_in = self.inputs.size
        self.K = n + self.n_in + 1
        self.columns = [f"y{u}(t)" for u in range(n)] + [f"x{u}(t+1)" for u in self.inputs] + ["bias"]
        in_pos = {int(u): k for k, u in enumerate(self.inputs)}
        row_of = {int(u): r for r, u in enumerate(self.rows)}
        self.readout = np.array([u.index for u in spec.units
                                 if u.role in (Role.HIDDEN, Role.OUTPUT)], dtype=np.intp)
        readout_set = set(self.readout.tolist())

        # Where each connection's weight lives: ("A", row, col) or ("W0", dst, src).
        self._a_idx = []
        self._w_idx = []
        for k, c in enumerate(spec.connections):
            if c.dst in row_of:
                col = c.src if c.delay == 1 else n + in_pos[c.src]
                self._a_idx.append((k, row_of[c.dst], col))
            elif c.dst in readout_set:
                if c.delay != 0:
                    raise UnsupportedTopology(f"readout unit {c.dst} reads with delay")
                self._w_idx.append((k, c.dst, c.src))
            else:
                raise UnsupportedTopology(f"connection into unit {c.dst} has no place in a block network")
        self._a_idx = np.array(self._a_idx, dtype=np.intp).reshape(-1, 3)
        self._w_idx = np.array(self._w_idx, dtype=np.intp).reshape(-1, 3)
        self.A = np.zeros((self.rows.size, self.K))
        self.W0 = np.zeros((n, n))
        self.A_mask = np.zeros_like(self.A, dtype=bool)
        self.A_mask[self._a_idx[:, 1], self._a_idx[:, 2]] = True
        self.A_mask[:, -1] = True
        self.W0_mask = np.zeros_like(self.W0, dtype=bool)
        self.W0_mask[self._w_idx[:, 1], self._w_idx[:, 2]] = True
        self.b = spec.biases
        self._load(spec.weights, self.b)

        acts = [u.activation for u in spec.units]
        self.block_table = ActivationTable([acts[u] for u in self.rows])
        self.h_table = ActivationTable([CELL_OUTPUT] * nc)
        order = [u for u in instant_order(spec) if u in readout_set]
        depth = {}
        for u in order:
            preds = [c.src for c in spec.connections if c.dst == u and c.src in readout_set]
            depth[u] = 1 + max((depth[p] for p in preds), default=0)
        self.levels = []
        for d in range(1, max(depth.values(), default=0) + 1):
            ix = np.array(sorted(u for u in depth if depth[u] == d), dtype=np.intp)
            self.levels.append((ix, ActivationTable([acts[i] for i in ix])))
        self._trainable_bias = np.zeros(n, dtype=bool)

    # -- parameters ----------------------------------------------------------

    def _load(self, weights, biases):
        self.A[:] = 0.0
        self.W0[:] = 0.0
        a, w = self._a_idx, self._w_idx
        self.A[a[:, 1], a[:, 2]] = weights[a[:, 0]]
        self.W0[w[:, 1], w[:, 2]] = weights[w[:, 0]]
        self.b = np.array(biases, dtype=np.float64)
        self.A[:, -1] = self.b[self.rows]

    @property
    def weights(self) -> np.ndarray:
        out = np.empty(len(self.spec.connections))
        a, w = self._a_idx, self._w_idx
        out[a[:, 0]] = self.A[a[:, 1], a[:, 2]]
        out[w[:, 0]] = self.W0[w[:, 1], w[:, 2]]
        return out

    @property
    def n_weights(self) -> int:
        return len(self.spec.connections)

    def to_spec(self) -> NetworkSpec:
        return self.spec.with_params(self.weights, self.b)

    def bias_trainable(self, config: LstmConfig) -> np.ndarray:
        """Which unit biases receive updates under ``config``."""
        mask = np.zeros(self.n, dtype=bool)
        for b in self.spec.blocks:
            mask[b.input_gate] = mask[b.output_gate] = True
            if b.forget_gate is not None:
                mask[b.forget_gate] = config.train_forget_bias
        if config.train_unit_biases:
            mask[self.cells] = True
            mask[self.readout] = True
        return mask

    def add(self, acc: GradientAccumulator) -> None:
        w = self.weights + acc.weights
        b = self.b + acc.biases
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DivergenceError("weight update produced non-finite values")
        self._load(w, b)

    # -- forward -------------------------------------------------------------

    def initial_state(self) -> LstmState:
        nc = self.cells.size
        nr = self.rows.size
        return LstmState(0, np.zeros(self.n), np.zeros(self.n), np.zeros(nc),
                         np.zeros(nc), np.zeros(nc), np.ones(nc), np.zeros(nr), np.zeros(nr))

    def step(self, prev: LstmState, x_next, forced: dict | None = None) -> tuple[LstmState, np.ndarray]:
        """Advance one step. Returns the new state and the source column
        vector the block units read (used by the traces).

        ``forced`` may pin gate activations for every block, e.g.
        ``{"forget": 1.0, "input": 0.0}``.
        """
        x_next = np.asarray(x_next, dtype=np.float64).reshape(self.n_in)
        xb = np.empty(self.K)
        xb[:self.n] = prev.output
        xb[self.n:-1] = x_next
        xb[-1] = 1.0
        sR = self.A @ xb
        fR, dR = self.block_table.f_df(sR)
        cb = self.cell_block
        y_gate_in = fR[self.ig_row]
        y_gate_out = fR[self.og_row]
        y_gate_f = fR[self.fg_row] if self.has_forget else np.ones(self.n_blocks)
        if forced:
            y_gate_in = np.full(self.n_blocks, forced["input"]) if "input" in forced else y_gate_in
            y_gate_out = np.full(self.n_blocks, forced["output"]) if "output" in forced else y_gate_out
            y_gate_f = np.full(self.n_blocks, forced["forget"]) if "forget" in forced else y_gate_f
        nc = self.cells.size
        y_in, y_out, y_f = y_gate_in[cb], y_gate_out[cb], y_gate_f[cb]
        s = prev.cell_state * y_f + y_in * fR[:nc]
        y = np.zeros(self.n)
        y[self.inputs] = x_next
        y[self.rows] = fR
        y[self.rows[self.ig_row]] = y_gate_in
        y[self.rows[self.og_row]] = y_gate_out
        if self.has_forget:
            y[self.rows[self.fg_row]] = y_gate_f
        y[self.cells] = y_out * self.h_table.f(s)
        state = np.zeros(self.n)
        state[self.rows] = sR
        for ix, table in self.levels:
            st = self.W0[ix] @ y + self.b[ix]
            state[ix] = st
            y[ix] = table.f(st)
        return LstmState(prev.t + 1, y, state, s, y_in, y_out, y_f, fR, dR), xb

    def run(self, inputs, targets=None, mask=None, forced: dict | None = None) -> LstmTrace:
        x = _as_inputs(inputs, self.n_in)
        states = [self.initial_state()]
        for t in range(x.shape[0]):
            states.append(self.step(states[-1], x[t], forced)[0])
        D, M = self._targets(x.shape[0], targets, mask)
        return LstmTrace(states, D, M)

    def _targets(self, T, targets, mask):
        D = np.zeros((T + 1, self.n))
        M = np.zeros((T + 1, self.n), dtype=bool)
        if targets is None:
            return D, M
        d = np.asarray(targets, dtype=np.float64).reshape(T, self.outputs.size)
        if mask is None:
            m = np.ones_like(d, dtype=bool)
        else:
            m = np.asarray(mask, dtype=bool)
            if m.ndim == 1:
                m = np.repeat(m[:, None], self.outputs.size, axis=1)
            m = m.reshape(d.shape)
        if not np.all(np.isfinite(d[m])):
            raise ValueError("unmasked targets must be finite")
        D[1:, self.outputs] = np.where(m, d, 0.0)
        M[1:, self.outputs] = m
        return D, M

    # -- backward ------------------------------------------------------------

    def _trace_update(self, tr: TraceStore, prev: LstmState, cur: LstmState, xb) -> None:
        nc = self.cells.size
        dR = cur.block_deriv
        cb = self.cell_block
        g = cur.block_value[:nc]
        dg = dR[:nc]
        d_in = dR[self.ig_row][cb]
        yf = cur.y_forget[:, None]
        tr.cell *= yf
        tr.cell += (dg * cur.y_in)[:, None] * xb
        tr.input_gate *= yf
        tr.input_gate += (g * d_in)[:, None] * xb
        if self.has_forget:
            d_f = dR[self.fg_row][cb]
            tr.forget_gate *= yf
            tr.forget_gate += (prev.cell_state * d_f)[:, None] * xb

    def _local_errors(self, cur: LstmState, d, m):
        """Step-local error signals: readout ``eps``, output-gate ``eps`` per
        block and the cell error ``y_out * h'(s) * dy_c`` per cell."""
        eps = np.zeros(self.n)
        e = np.where(m, d - cur.output, 0.0)
        for ix, table in reversed(self.levels):
            eps[ix] = table.df(cur.state[ix]) * (e[ix] + self.W0[:, ix].T @ eps)
        dy = self.W0[:, self.cells].T @ eps
        hs, dhs = self.h_table.f_df(cur.cell_state)
        d_og = cur.block_deriv[self.og_row]
        eps_og = d_og * (self.member @ (hs * dy))
        local = cur.y_out * dhs * dy
        return eps, eps_og, local

    def _step_grad(self, cur: LstmState, xb, tr: TraceStore, eps, eps_og, local):
        gA = np.zeros_like(self.A)
        nc = self.cells.size
        gA[:nc] = local[:, None] * tr.cell
        gA[self.ig_row] = self.member @ (local[:, None] * tr.input_gate)
        if self.has_forget:
            gA[self.fg_row] = self.member @ (local[:, None] * tr.forget_gate)
        gA[self.og_row] = eps_og[:, None] * xb
        gW = np.outer(eps, cur.output)
        return gA, gW, eps

    def _collect(self, gA, gW, gb_readout, config: LstmConfig) -> GradientAccumulator:
        eta = config.learning_rate
        a, w = self._a_idx, self._w_idx
        gw = np.empty(self.n_weights)
        gw[a[:, 0]] = gA[a[:, 1], a[:, 2]]
        gw[w[:, 0]] = gW[w[:, 1], w[:, 2]]
        gb = np.zeros(self.n)
        gb[self.rows] = gA[:, -1]
        gb[self.readout] = gb_readout[self.readout]
        gb = np.where(self.bias_trainable(config), gb, 0.0)
        return GradientAccumulator(eta * gw, eta * gb)

    def gradient(self, inputs, targets, mask=None, config: LstmConfig = LstmConfig(),
                 forced: dict | None = None, record: bool = False):
        """One sweep over a sequence: forward, traces and weight changes.

        Returns ``(accumulator, trace, individual_error, traces)``. In online
        mode each step's change is applied before the next step and the
        accumulator holds the sum of all applied changes.
        """
        x = _as_inputs(inputs, self.n_in)
        T = x.shape[0]
        D, M = self._targets(T, targets, mask)
        tr = TraceStore.zeros(self.cells.size, self.K)
        gA = np.zeros_like(self.A)
        gW = np.zeros_like(self.W0)
        gb = np.zeros(self.n)
        total = GradientAccumulator(np.zeros(self.n_weights), np.zeros(self.n))
        states = [self.initial_state()]
        eps_log = np.zeros((T + 1, self.n)) if record else None
        for t in range(1, T + 1):
            prev = states[-1]
            cur, xb = self.step(prev, x[t - 1], forced)
            states.append(cur)
            self._trace_update(tr, prev, cur, xb)
            if not M[t].any():
                continue
            eps, eps_og, local = self._local_errors(cur, D[t], M[t])
            if record:
                eps_log[t] = eps
                eps_log[t, self.rows[self.og_row]] = eps_og
                eps_log[t, self.cells] = local
            sA, sW, sb = self._step_grad(cur, xb, tr, eps, eps_og, local)
            if config.online:
                step = self._collect(sA, sW, sb, config)
                self.add(step)
                total += step
            else:
                gA += sA
                gW += sW
                gb += sb
        if not config.online:
            total = self._collect(gA, gW, gb, config)
        trace = LstmTrace(states, D, M)
        err = IndividualError(eps_log) if record else None
        return total, trace, err, tr

    def train_sequence(self, inputs, targets, mask=None, config: LstmConfig = LstmConfig()) -> float:
        """Present one sequence, update the weights, return its error
        (measured during the presentation)."""
        acc, trace, _, _ = self.gradient(inputs, targets, mask, config)
        if not config.online:
            self.add(acc)
        return trace.total_error()

    # -- bookkeeping ---------------------------------------------------------

    def ops_per_step(self) -> int:
        """Multiply-adds per time step for forward, traces and weight
        changes, counted over existing weights only."""
        nc = self.cells.size
        a_nnz = self.A_mask.sum(axis=1)
        w_nnz = int(self.W0_mask.sum())
        forward = int(a_nnz.sum()) + w_nnz
        cb = self.cell_block
        per_cell = a_nnz[:nc] + a_nnz[self.ig_row][cb]
        if self.has_forget:
            per_cell = per_cell + a_nnz[self.fg_row][cb]
        traces = 2 * int(per_cell.sum())      # decay and injection
        grads = int(per_cell.sum()) + int(a_nnz[self.og_row].sum()) + w_nnz
        return forward + traces + grads


def _as_inputs(inputs, n_in: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if n_in == 1 else x[None, :]
    if x.shape[1] != n_in:
        raise ValueError(f"expected {n_in} input columns, got {x.shape[1]}")
    return x


# ---------------------------------------------------------------------------
# functional surface


def lstm_forward_step(spec: NetworkSpec | Lstm, prev: LstmState, external_input,
                      forced: dict | None = None) -> LstmState:
    net = spec if isinstance(spec, Lstm) else Lstm(spec)
    return net.step(prev, external_input, forced)[0]


def lstm_backward_step(spec: NetworkSpec | Lstm, inputs, targets, config: LstmConfig = LstmConfig(),
                       mask=None):
    """Hybrid weight changes for one sequence with frozen weights.

    Returns ``(GradientAccumulator, IndividualError, TraceStore)``; the
    traces are those after the last step.
    """
    net = spec if isinstance(spec, Lstm) else Lstm(spec)
    if config.online:
        raise ValueError("lstm_backward_step keeps weights frozen; use Lstm.train_sequence for online updates")
    acc, _, err, tr = net.gradient(inputs, targets, mask, config, record=True)
    return acc, err, tr


def lstm_error(spec: NetworkSpec, inputs, targets, mask=None) -> float:
    """``E_total`` of one sequence."""
    net = Lstm(spec)
    return net.run(inputs, targets, mask).total_error()


def cell_error_recurrence(net: Lstm, inputs, targets, mask=None):
    """Cell errors with the forget-weighted recurrence,
    ``eps_c(t) = local_c(t) + eps_c(t+1) * y_forget(t+1)``, alongside the
    per-step injections ``ds_c(t)/dw`` holding ``s_c(t-1)`` fixed.

    Returns ``(eps, inject)`` with ``eps`` of shape ``(T+1, n_cells)`` and
    ``inject`` a list of :class:`TraceStore` per step (index 0 empty).
    Summing ``eps[t] * inject[t]`` over time gives the same cell, input-gate
    and forget-gate changes as the forward traces.
    """
    x = _as_inputs(inputs, net.n_in)
    T = x.shape[0]
    D, M = net._targets(T, targets, mask)
    nc = net.cells.size
    states = [net.initial_state()]
    local = np.zeros((T + 1, nc))
    inject = [TraceStore.zeros(nc, net.K)]
    for t in range(1, T + 1):
        prev = states[-1]
        cur, xb = net.step(prev, x[t - 1])
        states.append(cur)
        imm = TraceStore.zeros(nc, net.K)
        net._trace_update(imm, prev, cur, xb)
        inject.append(imm)
        if M[t].any():
            local[t] = net._local_errors(cur, D[t], M[t])[2]
    eps = np.zeros((T + 2, nc))
    for t in range(T, 0, -1):
        y_f_next = states[t + 1].y_forget if t < T else np.zeros(nc)
        eps[t] = local[t] + eps[t + 1] * y_f_next
    return eps[:T + 1], inject


@dataclass
class TrainLog:
    errors: list[float] = field(default_factory=list)

    @property
    def trend(self) -> np.ndarray:
        """Running minimum of the per-epoch error."""
        return np.minimum.accumulate(np.asarray(self.errors)) if self.errors else np.zeros(0)


def lstm_train(spec: NetworkSpec, task_stream, config: LstmConfig) -> tuple[NetworkSpec, TrainLog]:
    """Train on ``task_stream`` (a sequence of samples with ``inputs``,
    ``targets`` and ``mask``) for ``config.epochs`` passes.

    Raises :class:`DivergenceError` naming the epoch and sample if any
    weight becomes non-finite.
    """
    net = Lstm(spec)
    log = TrainLog()
    samples = list(task_stream)
    for epoch in range(config.epochs):
        errs = []
        for k, s in enumerate(samples):
            try:
                errs.append(net.train_sequence(s.inputs, s.targets, s.mask, config))
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch + 1}, sample {k}: {exc}") from None
        log.errors.append(math.fsum(errs))
    return net.to_spec(), log
