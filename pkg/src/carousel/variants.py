"""Gated recurrent units and the grid family of LSTM transforms.

The transforms here work on plain vectors rather than unit graphs:

* ``gru_step``: one step of a GRU layer. The reset activation scales the
  whole recurrent sum of the candidate, ``tanh(W x + r * (U h) + b)``.
* ``lstm_transform``: ``(H, m) -> (h', m')`` with
  ``m' = f * m + i * g(W_c H + b_c)`` and ``h' = o * h(m')``. It uses the
  same g and h squashers as the memory-block network.
* ``multidim_memory`` and ``multidim_lstm_step``: N incoming memories merged
  by N forget gates.
* ``stacked_step``: layers fed by the hidden vector below.
* ``grid_block``: N transforms sharing one concatenated hidden vector, each
  with its own memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .activation import CELL_INPUT, CELL_OUTPUT, evaluate, sigmoid


class ShapeError(ValueError):
    pass


def _vec(x, n: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).ravel()
    if n is not None and v.size != n:
        raise ShapeError(f"{name} has length {v.size}, expected {n}")
    return v


def _uniform(rng, lo, hi, shape):
    return rng.uniform(lo, hi, shape)


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GruLayer:
    """Weights of a GRU layer: ``W_*`` read the input at t+1, ``U_*`` the
    layer's activations at t."""

    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        H, I = np.shape(self.W_h)
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=np.float64)
            want = {"W": (H, I), "U": (H, H), "b": (H,)}[f.name[0]]
            if arr.shape != want:
                raise ShapeError(f"{f.name} has shape {arr.shape}, expected {want}")
            setattr(self, f.name, arr)

    @property
    def n_in(self) -> int:
        return self.W_h.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def random(cls, n_in: int, n_hidden: int, rng=None, init_range: float = 0.1) -> "GruLayer":
        rng = np.random.default_rng(rng)
        r = init_range
        parts = {}
        for f in fields(cls):
            shape = {"W": (n_hidden, n_in), "U": (n_hidden, n_hidden), "b": (n_hidden,)}[f.name[0]]
            parts[f.name] = _uniform(rng, -r, r, shape)
        return cls(**parts)


@dataclass
class GruLayerState:
    h: np.ndarray
    r: np.ndarray
    z: np.ndarray
    candidate: np.ndarray
    recurrent: np.ndarray   # U_h h(t), the sum the reset gate scales


def gru_step(layer: GruLayer, prev_h, external_input, forced: dict | None = None) -> GruLayerState:
    """One GRU step. ``forced`` may pin ``"reset"`` or ``"update"`` to a
    constant for every unit."""
    h = _vec(prev_h, layer.n_hidden, "prev_h")
    x = _vec(external_input, layer.n_in, "external_input")
    forced = forced or {}
    r = np.full(layer.n_hidden, float(forced["reset"])) if "reset" in forced \
        else sigmoid(layer.W_r @ x + layer.U_r @ h + layer.b_r)
    z = np.full(layer.n_hidden, float(forced["update"])) if "update" in forced \
        else sigmoid(layer.W_z @ x + layer.U_z @ h + layer.b_z)
    q = layer.U_h @ h
    cand = np.tanh(layer.W_h @ x + r * q + layer.b_h)
    h_new = z * h + (1.0 - z) * cand
    return GruLayerState(h_new, r, z, cand, q)


@dataclass
class GruNetwork:
    """A GRU layer read out by logistic output units ``sigma(V h + c)``."""

    layer: GruLayer
    V: np.ndarray
    c: np.ndarray

    _ORDER = ("W_r", "U_r", "b_r", "W_z", "U_z", "b_z", "W_h", "U_h", "b_h")

    def __post_init__(self):
        self.V = np.array(self.V, dtype=np.float64)
        self.c = np.array(self.c, dtype=np.float64)
        if self.V.shape != (self.c.size, self.layer.n_hidden):
            raise ShapeError("readout shape does not match the layer")

    @classmethod
    def random(cls, n_in, n_hidden, n_out, rng=None, init_range: float = 0.1) -> "GruNetwork":
        rng = np.random.default_rng(rng)
        layer = GruLayer.random(n_in, n_hidden, rng, init_range)
        return cls(layer, _uniform(rng, -init_range, init_range, (n_out, n_hidden)),
                   _uniform(rng, -init_range, init_range, n_out))

    @property
    def n_out(self) -> int:
        return self.c.size

    def param_names(self) -> list[str]:
        names = []
        for name, arr in self._arrays():
            names += [f"{name}[{','.join(map(str, ix))}]" for ix in np.ndindex(arr.shape)]
        return names

    def _arrays(self):
        return [(n, getattr(self.layer, n)) for n in self._ORDER] + [("V", self.V), ("c", self.c)]

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self._arrays()])

    def with_params(self, vec) -> "GruNetwork":
        vec = _vec(vec)
        expected = sum(arr.size for _, arr in self._arrays())
        if vec.size != expected:
            raise ShapeError(f"expected {expected} parameters, got {vec.size}")
        out, k = {}, 0
        for name, arr in self._arrays():
            out[name] = vec[k:k + arr.size].reshape(arr.shape)
            k += arr.size
        V, c = out.pop("V"), out.pop("c")
        return GruNetwork(GruLayer(**out), V, c)

    def run(self, inputs, initial_h=None):
        x = np.asarray(inputs, dtype=np.float64).reshape(-1, self.layer.n_in)
        h = np.zeros(self.layer.n_hidden) if initial_h is None else _vec(initial_h, self.layer.n_hidden)
        states, outputs = [], []
        for t in range(x.shape[0]):
            st = gru_step(self.layer, h, x[t])
            states.append(st)
            outputs.append(sigmoid(self.V @ st.h + self.c))
            h = st.h
        return states, np.array(outputs).reshape(x.shape[0], self.n_out)

    def error(self, inputs, targets, mask=None, initial_h=None) -> float:
        _, y = self.run(inputs, initial_h)
        e = _masked_error(targets, y, mask)
        return 0.5 * math.fsum((e * e).ravel().tolist())

    def bptt(self, inputs, targets, mask=None, learning_rate: float = 1.0, initial_h=None) -> np.ndarray:
        """Weight change ``-learning_rate * dE/dtheta`` in :attr:`params`
        order, from a backward sweep over the whole sequence."""
        x = np.asarray(inputs, dtype=np.float64).reshape(-1, self.layer.n_in)
        T = x.shape[0]
        L = self.layer
        h0 = np.zeros(L.n_hidden) if initial_h is None else _vec(initial_h, L.n_hidden)
        states, y = self.run(x, h0)
        e = _masked_error(targets, y, mask)
        g = {name: np.zeros_like(arr) for name, arr in self._arrays()}
        dh_next = np.zeros(L.n_hidden)
        for t in range(T - 1, -1, -1):
            st = states[t]
            h_prev = states[t - 1].h if t > 0 else h0
            go = -e[t] * y[t] * (1.0 - y[t])          # dE/d(net of outputs)
            g["V"] += np.outer(go, st.h)
            g["c"] += go
            dh = dh_next + self.V.T @ go
            dz = dh * (h_prev - st.candidate)
            da = dh * (1.0 - st.z) * (1.0 - st.candidate ** 2)
            dr = da * st.recurrent
            ds_z = dz * st.z * (1.0 - st.z)
            ds_r = dr * st.r * (1.0 - st.r)
            for key, ds in (("r", ds_r), ("z", ds_z)):
                g[f"W_{key}"] += np.outer(ds, x[t])
                g[f"U_{key}"] += np.outer(ds, h_prev)
                g[f"b_{key}"] += ds
            g["W_h"] += np.outer(da, x[t])
            g["U_h"] += np.outer(da * st.r, h_prev)
            g["b_h"] += da
            dh_next = (dh * st.z + L.U_h.T @ (da * st.r) + L.U_z.T @ ds_z + L.U_r.T @ ds_r)
        grad = np.concatenate([g[name].ravel() for name, _ in self._arrays()])
        return -learning_rate * grad

    def dumps(self) -> str:
        lines = ["carousel-gru 1"]
        for name, arr in self._arrays():
            dims = ",".join(map(str, arr.shape))
            vals = ",".join(repr(float(v)) for v in arr.ravel())
            lines.append(f"matrix name={name} shape={dims} values={vals}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GruNetwork":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != "carousel-gru 1":
            raise ValueError("not a GRU checkpoint")
        arrays = {}
        for ln in lines[1:]:
            kv = dict(tok.split("=", 1) for tok in ln.split()[1:])
            shape = tuple(int(s) for s in kv["shape"].split(",") if s)
            vals = [float(v) for v in kv["values"].split(",") if v]
            arrays[kv["name"]] = np.array(vals).reshape(shape)
        V, c = arrays.pop("V"), arrays.pop("c")
        return cls(GruLayer(**arrays), V, c)


def _masked_error(targets, y, mask):
    d = np.asarray(targets, dtype=np.float64).reshape(y.shape)
    if mask is None:
        m = np.ones(y.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        m = np.repeat(m[:, None], y.shape[1], axis=1) if m.ndim == 1 else m.reshape(y.shape)
    return np.where(m, d - y, 0.0)


# ---------------------------------------------------------------------------
# LSTM transforms


@dataclass
class LstmWeights:
    """Dense weights of one LSTM transform over a concatenated input ``H``.

    Rows index memory cells; ``W_f`` may hold several forget matrices (one
    per incoming memory) for the multidimensional step.
    """

    W_i: np.ndarray
    b_i: np.ndarray
    W_f: np.ndarray
    b_f: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    W_c: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.array(getattr(self, f.name), dtype=np.float64))
        M, K = self.W_c.shape
        for name in ("W_i", "W_o"):
            if getattr(self, name).shape != (M, K):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(M, K)}")
        if self.W_f.shape[-2:] != (M, K):
            raise ShapeError(f"W_f has shape {self.W_f.shape}, expected (..., {M}, {K})")
        for name in ("b_i", "b_o", "b_c"):
            if getattr(self, name).shape != (M,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(M,)}")
        if self.b_f.shape != self.W_f.shape[:-1]:
            raise ShapeError(f"b_f has shape {self.b_f.shape}, expected {self.W_f.shape[:-1]}")

    @property
    def n_memory(self) -> int:
        return self.W_c.shape[0]

    @property
    def n_input(self) -> int:
        return self.W_c.shape[1]

    @classmethod
    def random(cls, n_input: int, n_memory: int, rng=None, init_range: float = 0.1,
               n_forget: int | None = None, forget_bias: float = 1.0) -> "LstmWeights":
        rng = np.random.default_rng(rng)
        r = init_range
        fshape = (n_memory, n_input) if n_forget is None else (n_forget, n_memory, n_input)
        return cls(
            _uniform(rng, -r, r, (n_memory, n_input)), _uniform(rng, -r, r, n_memory),
            _uniform(rng, -r, r, fshape), np.full(fshape[:-1], forget_bias),
            _uniform(rng, -r, r, (n_memory, n_input)), _uniform(rng, -r, r, n_memory),
            _uniform(rng, -r, r, (n_memory, n_input)), _uniform(rng, -r, r, n_memory),
        )

    @classmethod
    def zeros(cls, n_input: int, n_memory: int) -> "LstmWeights":
        z2, z1 = np.zeros((n_memory, n_input)), np.zeros(n_memory)
        return cls(z2, z1, z2, z1, z2, z1, z2, z1)

    def permute_input(self, perm) -> "LstmWeights":
        """Weights acting on ``H[perm]`` exactly as these act on ``H``."""
        perm = np.asarray(perm, dtype=np.intp)
        return LstmWeights(self.W_i[..., perm], self.b_i, self.W_f[..., perm], self.b_f,
                           self.W_o[..., perm], self.b_o, self.W_c[..., perm], self.b_c)


def _gates(weights: LstmWeights, H, forced):
    i = sigmoid(weights.W_i @ H + weights.b_i)
    f = sigmoid(weights.W_f @ H + weights.b_f)
    o = sigmoid(weights.W_o @ H + weights.b_o)
    if forced:
        i = np.full_like(i, forced["input"]) if "input" in forced else i
        f = np.full_like(f, forced["forget"]) if "forget" in forced else f
        o = np.full_like(o, forced["output"]) if "output" in forced else o
    z = evaluate(CELL_INPUT, weights.W_c @ H + weights.b_c)
    return i, f, o, z


def lstm_transform(weights: LstmWeights, H, m, forced: dict | None = None):
    """``(H, m) -> (h', m')``: one LSTM step on a concatenated input."""
    if weights.W_f.ndim != 2:
        raise ShapeError("lstm_transform takes a single forget matrix")
    H = _vec(H, weights.n_input, "H")
    m = _vec(m, weights.n_memory, "m")
    i, f, o, z = _gates(weights, H, forced)
    m_new = m * f + i * z
    return o * evaluate(CELL_OUTPUT, m_new), m_new


def multidim_memory(f_vectors, m_vectors, i_gate, z_input) -> np.ndarray:
    """``sum_k f_k * m_k + i * z``, accumulated in the same order as the
    single-memory update so that ``N = 1`` agrees bit for bit."""
    fs = [_vec(f) for f in f_vectors]
    ms = [_vec(m) for m in m_vectors]
    if len(fs) != len(ms) or not fs:
        raise ShapeError("need as many forget vectors as memory vectors, at least one")
    i = _vec(i_gate)
    z = _vec(z_input)
    n = i.size
    if any(v.size != n for v in fs + ms + [z]):
        raise ShapeError("all vectors must have equal length")
    acc = ms[0] * fs[0]
    for f, m in zip(fs[1:], ms[1:]):
        acc = acc + m * f
    return acc + i * z


@dataclass
class MultidimWeights:
    """An N-dimensional LSTM step: a projection ``P`` of the input, then one
    transform whose ``W_f`` stacks N forget matrices."""

    P: np.ndarray
    transform: LstmWeights

    def __post_init__(self):
        self.P = np.array(self.P, dtype=np.float64)
        if self.transform.W_f.ndim != 3:
            raise ShapeError("multidimensional step needs a stack of forget matrices")

    @property
    def n_dims(self) -> int:
        return self.transform.W_f.shape[0]

    @classmethod
    def random(cls, n_in: int, n_proj: int, n_memory: int, n_dims: int, rng=None,
               init_range: float = 0.1) -> "MultidimWeights":
        rng = np.random.default_rng(rng)
        P = _uniform(rng, -init_range, init_range, (n_proj, n_in))
        w = LstmWeights.random(n_proj + n_dims * n_memory, n_memory, rng, init_range, n_forget=n_dims)
        return cls(P, w)


def multidim_lstm_step(weights: MultidimWeights, x, h_parts, m_parts, forced: dict | None = None):
    """Merge N incoming (hidden, memory) pairs into one.

    ``H = [P x; h_1; ...; h_N]``; memory from :func:`multidim_memory`; the
    hidden vector is ``o * h(m)`` as in a single transform.
    """
    w = weights.transform
    if len(h_parts) != weights.n_dims or len(m_parts) != weights.n_dims:
        raise ShapeError(f"expected {weights.n_dims} hidden and memory vectors")
    H = np.concatenate([weights.P @ _vec(x, weights.P.shape[1], "x")]
                       + [_vec(h, w.n_memory, "hidden vector") for h in h_parts])
    i, f, o, z = _gates(w, _vec(H, w.n_input, "H"), forced)
    m = multidim_memory(list(f), [_vec(mm, w.n_memory, "memory vector") for mm in m_parts], i, z)
    return o * evaluate(CELL_OUTPUT, m), m


def stacked_step(layers: list[LstmWeights], P, x, h_prev: list, m_prev: list, forced: dict | None = None):
    """One time step through stacked transforms: layer 1 reads
    ``[P x; h_1]``, layer k reads ``[h'_{k-1}; h_k]``."""
    if not (len(layers) == len(h_prev) == len(m_prev)) or not layers:
        raise ShapeError("need one hidden and one memory vector per layer")
    below = np.asarray(P, dtype=np.float64) @ _vec(x)
    hs, ms = [], []
    for w, h, m in zip(layers, h_prev, m_prev):
        h_new, m_new = lstm_transform(w, np.concatenate([below, _vec(h)]), m, forced)
        hs.append(h_new)
        ms.append(m_new)
        below = h_new
    return hs, ms


def grid_block(H_parts, m_parts, weight_sets: list[LstmWeights], forced: dict | None = None):
    """N transforms over the shared input ``concat(H_parts)``; transform k
    updates memory k only."""
    n = len(weight_sets)
    if not (len(H_parts) == len(m_parts) == n) or n == 0:
        raise ShapeError("need one hidden vector, memory vector and weight set per dimension")
    H = np.concatenate([_vec(h) for h in H_parts])
    hs, ms = [], []
    for w, m in zip(weight_sets, m_parts):
        h_new, m_new = lstm_transform(w, H, m, forced)
        hs.append(h_new)
        ms.append(m_new)
    return hs, ms
