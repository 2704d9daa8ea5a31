"""Independent reference computations shared by the test modules."""

import itertools

from carousel.activation import derivative
from carousel.rnn import Recurrent


def enumerate_paths(spec, trace, source, sink, t0, t1):
    """Explicit sum over every unit sequence of the products f' * w."""
    W = Recurrent(spec).W
    acts = [u.activation for u in spec.units]
    units = spec.non_input_units
    q = t1 - t0
    total = 0.0
    for middle in itertools.product(units, repeat=q - 1):
        path = (source,) + middle + (sink,)
        prod = 1.0
        for m in range(1, q + 1):
            lm, prev = path[m], path[m - 1]
            prod *= derivative(acts[lm], trace.state[t1 - m, lm]) * W[prev, lm]
        total += prod
    return total


def brute_force_counts(spec):
    """Walk the connection list: per cell the recurrent connections into the
    cell, its input gate and its forget gate; per block those into the output
    gate; input-to-cell and cell-to-output connections."""
    conns = spec.connections
    internal = 0
    for b in spec.blocks:
        for c in b.cells:
            internal += sum(1 for k in conns if k.delay == 1 and k.dst in (c, b.input_gate, b.forget_gate))
        internal += sum(1 for k in conns if k.delay == 1 and k.dst == b.output_gate)
    cells = {c for b in spec.blocks for c in b.cells}
    inputs = set(spec.input_units)
    outputs = set(spec.output_units)
    inside = sum(1 for k in conns if k.src in inputs and k.dst in cells)
    outside = sum(1 for k in conns if k.src in cells and k.dst in outputs)
    return internal, inside, outside
