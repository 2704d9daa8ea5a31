"""How much an error signal is scaled on its way back through time.

For a frozen forward trace, the factor ``d delta_v(t0) / d delta_o(t1)``
obeys ``g(t) = f'(s(t)) * (W^T g(t+1))`` with ``g(t1) = onehot(o)``; the
factor is ``g(t0)[v]``. That recursion is the sum over every unit path from
``v`` to ``o`` of the product of ``f' * w`` along the path, evaluated here by
dynamic programming in ``O(span * N^2)`` instead of ``N^span`` terms.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .activation import IDENTITY, LOGISTIC, Activation
from .rnn import EpochTrace, Recurrent
from .topology import Connection, NetworkSpec, Role, Unit


class Regime(str, enum.Enum):
    VANISHING = "vanishing"
    EXPLODING = "exploding"
    MARGINAL = "marginal"


def classify_regime(per_step_factors) -> Regime:
    """Exploding if every factor exceeds 1, vanishing if every factor is
    below 1, marginal otherwise."""
    f = np.abs(np.asarray(list(per_step_factors), dtype=np.float64))
    if f.size == 0:
        raise ValueError("need at least one per-step factor")
    if np.all(f > 1.0):
        return Regime.EXPLODING
    if np.all(f < 1.0):
        return Regime.VANISHING
    return Regime.MARGINAL


@dataclass
class FlowReport:
    factor: float
    # One entry per step back from t1, i.e. index 0 is the t1 -> t1-1 hop.
    step_factors: list[float]
    regime: Regime
    curve: list[float] = field(default_factory=list)
    entry_min: list[float] = field(default_factory=list)
    entry_max: list[float] = field(default_factory=list)
    path_regime: Regime = Regime.MARGINAL

    def to_csv(self) -> str:
        rows = ["step,factor"]
        rows += [f"{k},{v!r}" for k, v in enumerate(self.curve, 1)]
        return "\n".join(rows) + "\n"


def _path_sets(W: np.ndarray, sink: int, source: int, span: int) -> list[np.ndarray]:
    """Boolean masks of units that lie on some sink->source path at each
    time offset 0..span (offset 0 is t0)."""
    n = W.shape[0]
    edge = W != 0.0  # edge[dst, src]
    fwd = [np.zeros(n, dtype=bool)]
    fwd[0][sink] = True
    for _ in range(span):
        fwd.append(edge[:, fwd[-1]].any(axis=1))
    bwd = [np.zeros(n, dtype=bool)]
    bwd[0][source] = True
    for _ in range(span):
        bwd.append(edge[bwd[-1], :].any(axis=0))
    bwd.reverse()
    return [f & b for f, b in zip(fwd, bwd)]


def error_flow_factor(spec: NetworkSpec, trace: EpochTrace, source_output_unit: int,
                      sink_unit: int, t0: int, t_final: int) -> FlowReport:
    """Scaling of an error injected at ``source_output_unit`` at ``t_final``
    by the time it reaches ``sink_unit`` at ``t0``.

    ``step_factors`` are spectral norms of the one-step back-flow Jacobian
    restricted to units that lie on a connecting path; ``entry_min`` and
    ``entry_max`` are the smallest and largest ``|f' * w|`` over single
    path edges at each step, and ``path_regime`` applies the regime test to
    those edges individually.
    """
    if not (1 <= t0 < t_final <= trace.steps):
        raise ValueError(f"span {t0}..{t_final} outside trace of {trace.steps} steps")
    net = Recurrent(spec)
    W = net.W
    for u in (source_output_unit, sink_unit):
        if spec.units[u].role is Role.INPUT:
            raise ValueError("error flow is defined between non-input units")
    span = t_final - t0
    on_path = _path_sets(W, sink_unit, source_output_unit, span)
    g = np.zeros(net.n)
    g[source_output_unit] = 1.0
    curve, norms, lo, hi = [], [], [], []
    for k in range(1, span + 1):
        t = t_final - k
        fp = net.table.df(trace.state[t])
        J = fp[:, None] * W.T          # J[u, l] = f'_u(t) w_lu
        g = J @ g
        curve.append(float(g[sink_unit]))
        rows = on_path[t - t0]
        cols = on_path[t - t0 + 1]
        sub = J[np.ix_(rows, cols)]
        norms.append(float(np.linalg.norm(sub, 2)) if sub.size else 0.0)
        edges = np.abs(sub[W.T[np.ix_(rows, cols)] != 0.0])
        lo.append(float(edges.min()) if edges.size else 0.0)
        hi.append(float(edges.max()) if edges.size else 0.0)
    if np.all(np.asarray(lo) > 1.0):
        path_regime = Regime.EXPLODING
    elif np.all(np.asarray(hi) < 1.0):
        path_regime = Regime.VANISHING
    else:
        path_regime = Regime.MARGINAL
    return FlowReport(curve[-1], norms, classify_regime(norms), curve, lo, hi, path_regime)


def summed_output_factor(spec: NetworkSpec, trace: EpochTrace, sink_unit: int,
                         t0: int, t_final: int) -> float:
    """Sum of the flow factors from every output unit to ``sink_unit``."""
    return float(sum(error_flow_factor(spec, trace, o, sink_unit, t0, t_final).factor
                     for o in spec.output_units))


def self_loop(weight: float = 1.0, activation: Activation = LOGISTIC, bias: float = 0.0,
              input_weight: float = 0.0) -> NetworkSpec:
    """One input feeding one self-connected unit: the smallest recurrent net."""
    units = (Unit(0, Role.INPUT, IDENTITY), Unit(1, Role.OUTPUT, activation, bias))
    conns = (Connection(0, 1, input_weight, 0), Connection(1, 1, weight, 1))
    return NetworkSpec(units, conns)


def carousel(steps: int, initial: float, inputs=None) -> EpochTrace:
    """Run the constant error carousel (identity unit, self-weight 1) for
    ``steps`` steps starting from output ``initial``."""
    spec = self_loop(1.0, IDENTITY)
    x = np.zeros((steps, 1)) if inputs is None else np.asarray(inputs, dtype=np.float64).reshape(steps, 1)
    return Recurrent(spec).run(x, initial_outputs=[0.0, initial])
