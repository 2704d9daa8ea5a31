"""Network structure: units, roles, delayed connections and memory blocks.

A :class:`NetworkSpec` is immutable. Trainable values (connection weights and
unit biases) travel alongside it as two flat float64 arrays ordered like
``spec.connections`` and ``spec.units``; ``spec.with_params`` produces a new
spec carrying updated values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

from .activation import Activation, CELL_INPUT, CELL_OUTPUT, IDENTITY, LOGISTIC


class UnsupportedTopology(ValueError):
    """The operation cannot run on this kind of network."""


class Role(str, enum.Enum):
    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"
    CELL = "cell"
    INPUT_GATE = "input_gate"
    OUTPUT_GATE = "output_gate"
    FORGET_GATE = "forget_gate"
    GRU_UNIT = "gru_unit"


GATE_ROLES = frozenset({Role.INPUT_GATE, Role.OUTPUT_GATE, Role.FORGET_GATE})
BLOCK_ROLES = GATE_ROLES | {Role.CELL}


@dataclass(frozen=True)
class Unit:
    index: int
    role: Role
    activation: Activation = LOGISTIC
    bias: float = 0.0
    block: int | None = None


@dataclass(frozen=True)
class Connection:
    src: int
    dst: int
    weight: float
    delay: int


@dataclass(frozen=True)
class Block:
    id: int
    cells: tuple[int, ...]
    input_gate: int
    output_gate: int
    forget_gate: int | None = None


@dataclass(frozen=True)
class Violation:
    subject: str
    rule: str

    def __str__(self):
        return f"{self.subject}: {self.rule}"


@dataclass(frozen=True)
class NetworkSpec:
    units: tuple[Unit, ...]
    connections: tuple[Connection, ...] = ()
    blocks: tuple[Block, ...] = ()
    forget_gates: bool = True

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "connections", tuple(self.connections))
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def n_units(self) -> int:
        return len(self.units)

    def indices(self, *roles: Role) -> list[int]:
        return [u.index for u in self.units if u.role in roles]

    @property
    def input_units(self) -> list[int]:
        return self.indices(Role.INPUT)

    @property
    def output_units(self) -> list[int]:
        return self.indices(Role.OUTPUT)

    @property
    def non_input_units(self) -> list[int]:
        return [u.index for u in self.units if u.role is not Role.INPUT]

    @property
    def is_lstm(self) -> bool:
        return bool(self.blocks)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.connections], dtype=np.float64)

    @property
    def biases(self) -> np.ndarray:
        return np.array([u.bias for u in self.units], dtype=np.float64)

    def with_params(self, weights=None, biases=None) -> "NetworkSpec":
        conns = self.connections
        units = self.units
        if weights is not None:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != (len(conns),):
                raise ValueError("weight vector does not match connection count")
            conns = tuple(replace(c, weight=float(w)) for c, w in zip(conns, weights))
        if biases is not None:
            biases = np.asarray(biases, dtype=np.float64)
            if biases.shape != (len(units),):
                raise ValueError("bias vector does not match unit count")
            units = tuple(replace(u, bias=float(b)) for u, b in zip(units, biases))
        return replace(self, units=units, connections=conns)

    def block_of(self, unit: int) -> Block:
        bid = self.units[unit].block
        for b in self.blocks:
            if b.id == bid:
                return b
        raise KeyError(unit)


# --------------------------------------------------------------------------
# validation


def validate(spec: NetworkSpec) -> list[Violation]:
    """Return every structural rule the network breaks; empty means well formed."""
    out: list[Violation] = []
    n = len(spec.units)
    for pos, u in enumerate(spec.units):
        if u.index != pos:
            out.append(Violation(f"unit {u.index}", "unit indices must be dense 0..N-1"))
    if out:
        return out

    roles = [u.role for u in spec.units]
    block_ids = {b.id for b in spec.blocks}
    for u in spec.units:
        if u.role in BLOCK_ROLES and u.block not in block_ids:
            out.append(Violation(f"unit {u.index}", "gate or cell names unknown block"))

    seen = set()
    for k, c in enumerate(spec.connections):
        name = f"connection {k} ({c.src}->{c.dst})"
        if not (0 <= c.src < n and 0 <= c.dst < n):
            out.append(Violation(name, "connection references unknown unit"))
            continue
        if c.delay not in (0, 1):
            out.append(Violation(name, "delay must be 0 or 1"))
        if not np.isfinite(c.weight):
            out.append(Violation(name, "weight must be finite"))
        key = (c.src, c.dst, c.delay)
        if key in seen:
            out.append(Violation(name, "duplicate connection"))
        seen.add(key)
        src, dst = roles[c.src], roles[c.dst]
        if dst is Role.INPUT:
            out.append(Violation(name, "input unit has incoming connection"))
        if src is Role.INPUT and c.delay != 0:
            out.append(Violation(name, "input connection must have delay 0"))
        if dst is Role.OUTPUT and src in GATE_ROLES:
            out.append(Violation(name, "output unit fed by gate"))
        if spec.blocks:
            if dst in BLOCK_ROLES and src is not Role.INPUT and c.delay != 1:
                out.append(Violation(name, "memory block reads non-input unit without delay"))
            if dst is Role.OUTPUT and src not in (Role.CELL, Role.HIDDEN):
                out.append(Violation(name, "output unit fed by unit other than cell or hidden"))
            if dst in (Role.OUTPUT, Role.HIDDEN) and c.delay != 0:
                out.append(Violation(name, "output or hidden unit reads with delay"))
            if dst is Role.HIDDEN and src in GATE_ROLES:
                out.append(Violation(name, "hidden unit fed by gate"))

    for u in spec.units:
        if not np.isfinite(u.bias):
            out.append(Violation(f"unit {u.index}", "bias must be finite"))

    out.extend(_block_violations(spec))
    if _has_instant_cycle(spec):
        out.append(Violation("network", "delay-0 connections form a cycle"))
    return out


def _block_violations(spec: NetworkSpec) -> list[Violation]:
    out = []
    n = len(spec.units)
    claimed: dict[int, int] = {}

    def member(b, idx, role, what):
        name = f"block {b.id}"
        if not (0 <= idx < n):
            out.append(Violation(name, f"{what} references unknown unit"))
            return
        u = spec.units[idx]
        if u.role is not role:
            out.append(Violation(name, f"{what} unit {idx} has role {u.role.value}"))
        if u.block != b.id:
            out.append(Violation(name, f"{what} unit {idx} names a different block"))
        if idx in claimed:
            out.append(Violation(name, f"unit {idx} belongs to more than one block"))
        claimed[idx] = b.id

    ids = [b.id for b in spec.blocks]
    if len(set(ids)) != len(ids):
        out.append(Violation("network", "duplicate block id"))
    for b in spec.blocks:
        if not b.cells:
            out.append(Violation(f"block {b.id}", "block has no cell"))
        for c in b.cells:
            member(b, c, Role.CELL, "cell")
        member(b, b.input_gate, Role.INPUT_GATE, "input gate")
        member(b, b.output_gate, Role.OUTPUT_GATE, "output gate")
        if spec.forget_gates:
            if b.forget_gate is None:
                out.append(Violation(f"block {b.id}", "block missing forget gate"))
            else:
                member(b, b.forget_gate, Role.FORGET_GATE, "forget gate")
        elif b.forget_gate is not None:
            out.append(Violation(f"block {b.id}", "forget gate present but forget gates disabled"))
    for u in spec.units:
        if u.role in BLOCK_ROLES and u.index not in claimed:
            out.append(Violation(f"unit {u.index}", "gate or cell not listed in any block"))
    return out


def _has_instant_cycle(spec: NetworkSpec) -> bool:
    try:
        instant_order(spec)
    except UnsupportedTopology:
        return True
    return False


def instant_order(spec: NetworkSpec) -> list[int]:
    """Topological order of all units under delay-0 connections."""
    n = len(spec.units)
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for c in spec.connections:
        if c.delay == 0 and 0 <= c.src < n and 0 <= c.dst < n:
            succ[c.src].append(c.dst)
            indeg[c.dst] += 1
    ready = [i for i in range(n) if indeg[i] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(j)
    if len(order) != n:
        raise UnsupportedTopology("delay-0 connections form a cycle")
    return order


def require_valid(spec: NetworkSpec) -> None:
    problems = validate(spec)
    if problems:
        raise InvalidSpec(problems)


class InvalidSpec(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


def adjacency(spec: NetworkSpec) -> tuple[dict[int, list[int]], dict[int, list[int]]]:
    """Predecessor and successor lists for every unit."""
    pred: dict[int, list[int]] = {u.index: [] for u in spec.units}
    succ: dict[int, list[int]] = {u.index: [] for u in spec.units}
    for c in spec.connections:
        pred[c.dst].append(c.src)
        succ[c.src].append(c.dst)
    return pred, succ


# --------------------------------------------------------------------------
# complexity


class ConnectionCounts(NamedTuple):
    block_internal: int
    input_side: int
    output_side: int


def complexity_counts(n_blocks: int, cells: int, n_in: int, n_out: int) -> ConnectionCounts:
    """Closed-form connection counts of a uniform memory-block network."""
    B, C = n_blocks, cells
    return ConnectionCounts(B * (C * (3 * B * C) + B * C), n_in * B * C, n_out * B * C)


def count_connections(spec: NetworkSpec) -> ConnectionCounts:
    """Connection counts for a standard LSTM topology.

    Block-internal work counts, per cell, the recurrent connections into the
    cell, into its block's input gate and into its block's forget gate, and
    per block the recurrent connections into the output gate. Input side is
    input-to-cell connections, output side is cell-to-output connections.
    """
    if not spec.blocks:
        return ConnectionCounts(0, 0, 0)
    sizes = {len(b.cells) for b in spec.blocks}
    if len(sizes) != 1:
        raise UnsupportedTopology("memory blocks have different cell counts")
    if not spec.forget_gates:
        raise UnsupportedTopology("complexity count assumes forget gates")
    return complexity_counts(len(spec.blocks), sizes.pop(),
                             len(spec.input_units), len(spec.output_units))


# --------------------------------------------------------------------------
# builders


def _uniform(rng, lo, hi):
    return float(rng.uniform(lo, hi))


def build_ffnn(layer_sizes: Iterable[int], rng=None, init_range: float = 0.1,
               biases: bool = True) -> NetworkSpec:
    """Fully connected layered net with logistic non-input units."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output layer")
    rng = np.random.default_rng(rng)
    units, conns, layers = [], [], []
    for li, size in enumerate(sizes):
        role = Role.INPUT if li == 0 else Role.OUTPUT if li == len(sizes) - 1 else Role.HIDDEN
        layer = []
        for _ in range(size):
            idx = len(units)
            act = IDENTITY if role is Role.INPUT else LOGISTIC
            b = 0.0 if role is Role.INPUT or not biases else _uniform(rng, -init_range, init_range)
            units.append(Unit(idx, role, act, b))
            layer.append(idx)
        layers.append(layer)
    for lo, hi in zip(layers, layers[1:]):
        for d in hi:
            for s in lo:
                conns.append(Connection(s, d, _uniform(rng, -init_range, init_range), 0))
    return NetworkSpec(tuple(units), tuple(conns))


def build_rnn(n_in: int, n_hidden: int, n_out: int, rng=None, init_range: float = 0.1,
              activation: Activation = LOGISTIC, biases: bool = False) -> NetworkSpec:
    """Fully recurrent net: every non-input unit reads every non-input unit
    (delay 1, self-loops included) and every input unit (delay 0)."""
    rng = np.random.default_rng(rng)
    units = [Unit(i, Role.INPUT, IDENTITY) for i in range(n_in)]
    for k in range(n_hidden + n_out):
        role = Role.HIDDEN if k < n_hidden else Role.OUTPUT
        b = _uniform(rng, -init_range, init_range) if biases else 0.0
        units.append(Unit(n_in + k, role, activation, b))
    non_input = range(n_in, n_in + n_hidden + n_out)
    conns = []
    for d in non_input:
        for s in range(n_in):
            conns.append(Connection(s, d, _uniform(rng, -init_range, init_range), 0))
        for s in non_input:
            conns.append(Connection(s, d, _uniform(rng, -init_range, init_range), 1))
    return NetworkSpec(tuple(units), tuple(conns))


def build_lstm(n_in: int, n_blocks: int, cells_per_block: int, n_out: int, *,
               n_hidden: int = 0, forget_gates: bool = True, rng=None,
               init_range: float = 0.1, forget_bias: float = 1.0,
               recurrent: bool = True, gate_bias_range=(-2.0, -1.0),
               output_activation: Activation = LOGISTIC) -> NetworkSpec:
    """Standard memory-block network.

    Inputs feed every cell and gate; with ``recurrent`` every cell output
    feeds every cell and gate one step later. Cells feed the optional hidden
    layer, which feeds the output units; without hidden units the cells feed
    the outputs directly. Input and output gate biases start negative,
    forget-gate biases at ``forget_bias`` and forget-gate weights positive.
    """
    rng = np.random.default_rng(rng)
    r = init_range
    units: list[Unit] = [Unit(i, Role.INPUT, IDENTITY) for i in range(n_in)]
    blocks = []

    def add(role, act, bias=0.0, block=None):
        units.append(Unit(len(units), role, act, bias, block))
        return len(units) - 1

    for b in range(n_blocks):
        cells = tuple(add(Role.CELL, CELL_INPUT, 0.0, b) for _ in range(cells_per_block))
        ig = add(Role.INPUT_GATE, LOGISTIC, _uniform(rng, *gate_bias_range), b)
        og = add(Role.OUTPUT_GATE, LOGISTIC, _uniform(rng, *gate_bias_range), b)
        fg = add(Role.FORGET_GATE, LOGISTIC, forget_bias, b) if forget_gates else None
        blocks.append(Block(b, cells, ig, og, fg))
    hidden = [add(Role.HIDDEN, LOGISTIC) for _ in range(n_hidden)]
    outputs = [add(Role.OUTPUT, output_activation) for _ in range(n_out)]

    all_cells = [c for b in blocks for c in b.cells]
    conns = []
    for b in blocks:
        targets = list(b.cells) + [b.input_gate, b.output_gate]
        if b.forget_gate is not None:
            targets.append(b.forget_gate)
        for d in targets:
            lo = 0.0 if d == b.forget_gate else -r
            for s in range(n_in):
                conns.append(Connection(s, d, _uniform(rng, lo, r), 0))
            if recurrent:
                for s in all_cells:
                    conns.append(Connection(s, d, _uniform(rng, lo, r), 1))
    readers = hidden if hidden else outputs
    for d in readers:
        for s in all_cells:
            conns.append(Connection(s, d, _uniform(rng, -r, r), 0))
    if hidden:
        for d in outputs:
            for s in hidden:
                conns.append(Connection(s, d, _uniform(rng, -r, r), 0))
    return NetworkSpec(tuple(units), tuple(conns), tuple(blocks), forget_gates)


# --------------------------------------------------------------------------
# text serialization

_HEADER = "carousel-network 1"


def _f(x: float) -> str:
    return repr(float(x))


def dumps(spec: NetworkSpec) -> str:
    """Line-oriented, self-describing text form; floats use round-trip repr."""
    lines = [_HEADER, f"forget_gates={'true' if spec.forget_gates else 'false'}"]
    for u in spec.units:
        line = f"unit index={u.index} role={u.role.value} activation={u.activation.token} bias={_f(u.bias)}"
        if u.block is not None:
            line += f" block={u.block}"
        lines.append(line)
    for c in spec.connections:
        lines.append(f"connection src={c.src} dst={c.dst} weight={_f(c.weight)} delay={c.delay}")
    for b in spec.blocks:
        line = (f"block id={b.id} cells={','.join(map(str, b.cells))} "
                f"input_gate={b.input_gate} output_gate={b.output_gate}")
        if b.forget_gate is not None:
            line += f" forget_gate={b.forget_gate}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _fields(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = val
    return out


def loads(text: str) -> NetworkSpec:
    """Inverse of :func:`dumps`. Blank lines and ``#`` comments are ignored."""
    units, conns, blocks = [], [], []
    forget = True
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != _HEADER:
                raise ValueError(f"line {lineno}: missing '{_HEADER}' header")
            header_seen = True
            continue
        kind, *rest = line.split()
        if kind.startswith("forget_gates="):
            forget = kind.split("=", 1)[1] == "true"
            continue
        f = _fields(rest, lineno)
        try:
            if kind == "unit":
                units.append(Unit(int(f["index"]), Role(f["role"]),
                                  Activation.parse(f["activation"]), float(f["bias"]),
                                  int(f["block"]) if "block" in f else None))
            elif kind == "connection":
                conns.append(Connection(int(f["src"]), int(f["dst"]),
                                        float(f["weight"]), int(f["delay"])))
            elif kind == "block":
                blocks.append(Block(int(f["id"]), tuple(int(c) for c in f["cells"].split(",") if c),
                                    int(f["input_gate"]), int(f["output_gate"]),
                                    int(f["forget_gate"]) if "forget_gate" in f else None))
            else:
                raise ValueError(f"line {lineno}: unknown record {kind!r}")
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc}") from None
    if not header_seen:
        raise ValueError("empty network description")
    return NetworkSpec(tuple(units), tuple(conns), tuple(blocks), forget)


def summary(spec: NetworkSpec) -> str:
    counts = {r: 0 for r in Role}
    for u in spec.units:
        counts[u.role] += 1
    parts = [f"{counts[r]} {r.value}" for r in Role if counts[r]]
    lines = [f"units: {spec.n_units} ({', '.join(parts)})",
             f"connections: {len(spec.connections)} "
             f"({sum(c.delay == 1 for c in spec.connections)} delayed)",
             f"blocks: {len(spec.blocks)}"
             + (f" (forget gates {'on' if spec.forget_gates else 'off'})" if spec.blocks else "")]
    problems = validate(spec)
    lines.append("valid: yes" if not problems else f"valid: no ({len(problems)} violations)")
    lines.extend(f"  {p}" for p in problems)
    return "\n".join(lines)
