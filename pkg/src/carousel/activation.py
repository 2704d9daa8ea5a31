"""Squashing functions and their exact derivatives.

Every function accepts a scalar or a numpy array and returns the same shape.
Arithmetic is plain float64; nothing is clamped, so saturated units report
their true (tiny) derivatives.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class DomainError(ValueError):
    """Raised when an activation is evaluated at a non-finite point."""


class Kind(str, enum.Enum):
    LOGISTIC = "logistic"
    CELL_INPUT = "cell_input"    # g, range (-2, 2)
    CELL_OUTPUT = "cell_output"  # h, range (-1, 1)
    IDENTITY = "identity"
    TANH = "tanh"


@dataclass(frozen=True)
class Activation:
    kind: Kind = Kind.LOGISTIC
    slope: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (self.slope > 0 and np.isfinite(self.slope)):
            raise ValueError(f"slope must be positive and finite, got {self.slope}")

    def __call__(self, x):
        return evaluate(self, x)

    def deriv(self, x):
        return derivative(self, x)

    @property
    def token(self) -> str:
        """Compact text form, e.g. ``logistic`` or ``logistic:2.5``."""
        if self.kind is Kind.LOGISTIC and self.slope != 1.0:
            return f"logistic:{self.slope!r}"
        return self.kind.value

    @classmethod
    def parse(cls, token: str) -> "Activation":
        name, _, slope = token.partition(":")
        return cls(Kind(name), float(slope) if slope else 1.0)


LOGISTIC = Activation(Kind.LOGISTIC)
CELL_INPUT = Activation(Kind.CELL_INPUT)
CELL_OUTPUT = Activation(Kind.CELL_OUTPUT)
IDENTITY = Activation(Kind.IDENTITY)
TANH = Activation(Kind.TANH)


def _check(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DomainError("activation input must be finite")
    return x


def _out(x, value):
    return float(value) if np.ndim(x) == 0 else value


def evaluate(act: Activation, x):
    """Apply the squashing function of ``act`` to ``x``."""
    a = _check(x)
    kind = act.kind
    if kind is Kind.LOGISTIC:
        y = expit(act.slope * a) if act.slope != 1.0 else expit(a)
    elif kind is Kind.CELL_INPUT:
        y = 4.0 * expit(a) - 2.0
    elif kind is Kind.CELL_OUTPUT:
        y = 2.0 * expit(a) - 1.0
    elif kind is Kind.IDENTITY:
        y = a.copy()
    else:
        y = np.tanh(a)
    return _out(x, y)


def derivative(act: Activation, x):
    """Exact derivative of ``evaluate(act, .)`` at ``x``."""
    a = _check(x)
    kind = act.kind
    if kind is Kind.LOGISTIC:
        s = expit(act.slope * a) if act.slope != 1.0 else expit(a)
        d = act.slope * s * (1.0 - s)
    elif kind is Kind.CELL_INPUT:
        s = expit(a)
        d = 4.0 * s * (1.0 - s)
    elif kind is Kind.CELL_OUTPUT:
        s = expit(a)
        d = 2.0 * s * (1.0 - s)
    elif kind is Kind.IDENTITY:
        d = np.ones_like(a)
    else:
        t = np.tanh(a)
        d = 1.0 - t * t
    return _out(x, d)


def output_range(act: Activation) -> tuple[float, float]:
    """Open interval the function maps into (infinite for identity)."""
    return {
        Kind.LOGISTIC: (0.0, 1.0),
        Kind.CELL_INPUT: (-2.0, 2.0),
        Kind.CELL_OUTPUT: (-1.0, 1.0),
        Kind.IDENTITY: (-np.inf, np.inf),
        Kind.TANH: (-1.0, 1.0),
    }[act.kind]


# Unchecked fast paths for the inner training loops, where inputs are known
# finite by construction.

def sigmoid(x):
    return expit(x)


def sigmoid_prime_from_output(y):
    return y * (1.0 - y)


class ActivationTable:
    """Per-unit activations applied to whole state vectors.

    Logistic-family units (logistic, g, h) share a single ``expit`` call:
    each is ``scale * expit(slope * x) + offset``, evaluated with the same
    operations as :func:`evaluate` so results agree bit for bit. Identity and
    tanh units are handled per group. ``subset`` restricts evaluation to
    those indices (others come out as zeros).
    """

    _AFFINE = {Kind.LOGISTIC: (1.0, 0.0), Kind.CELL_INPUT: (4.0, -2.0), Kind.CELL_OUTPUT: (2.0, -1.0)}

    def __init__(self, activations, subset=None):
        acts = list(activations)
        idx = range(len(acts)) if subset is None else subset
        groups: dict[Activation, list[int]] = {}
        fam = []
        for i in idx:
            if acts[i].kind in self._AFFINE:
                fam.append(i)
            else:
                groups.setdefault(acts[i], []).append(i)
        self.n = len(acts)
        self.groups = [(a, np.array(ix, dtype=np.intp)) for a, ix in groups.items()]
        self.fam = np.array(fam, dtype=np.intp)
        self.slope = np.array([acts[i].slope for i in fam])
        self.scale = np.array([self._AFFINE[acts[i].kind][0] for i in fam])
        self.offset = np.array([self._AFFINE[acts[i].kind][1] for i in fam])
        self.k = self.scale * self.slope
        self.dense = self.fam.size == self.n and np.array_equal(self.fam, np.arange(self.n))

    def _sig(self, s):
        s = np.asarray(s, dtype=np.float64)
        x = s if self.dense else s[self.fam]
        if not np.isfinite(x.sum()):
            _check(x)
        return expit(self.slope * x)

    def f(self, s):
        sg = self._sig(s)
        if self.dense and not self.groups:
            return self.scale * sg + self.offset
        out = np.zeros(self.n)
        out[self.fam] = self.scale * sg + self.offset
        for act, ix in self.groups:
            out[ix] = evaluate(act, s[ix])
        return out

    def df(self, s):
        sg = self._sig(s)
        if self.dense and not self.groups:
            return self.k * sg * (1.0 - sg)
        out = np.zeros(self.n)
        out[self.fam] = self.k * sg * (1.0 - sg)
        for act, ix in self.groups:
            out[ix] = derivative(act, s[ix])
        return out

    def f_df(self, s):
        """Values and derivatives from one pass."""
        sg = self._sig(s)
        if self.dense and not self.groups:
            return self.scale * sg + self.offset, self.k * sg * (1.0 - sg)
        f, d = np.zeros(self.n), np.zeros(self.n)
        f[self.fam] = self.scale * sg + self.offset
        d[self.fam] = self.k * sg * (1.0 - sg)
        for act, ix in self.groups:
            f[ix] = evaluate(act, s[ix])
            d[ix] = derivative(act, s[ix])
        return f, d
