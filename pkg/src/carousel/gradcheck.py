"""Central finite-difference gradients and analytic-vs-numeric reports.

The oracle only ever calls ``loss_fn(weights)``; it knows nothing about the
trainer whose gradient it is checking.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

REL_FLOOR = 1e-12


class NonFiniteLoss(ArithmeticError):
    pass


def fd_gradient(loss_fn: Callable[[np.ndarray], float], weights, epsilon: float = 1e-5) -> np.ndarray:
    """``(L(w + eps e_i) - L(w - eps e_i)) / (2 eps)`` for every coordinate."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    w = np.array(weights, dtype=np.float64)
    grad = np.empty_like(w)
    for i in range(w.size):
        orig = w.flat[i]
        w.flat[i] = orig + epsilon
        up = float(loss_fn(w.copy()))
        w.flat[i] = orig - epsilon
        down = float(loss_fn(w.copy()))
        w.flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteLoss(f"loss is not finite around coordinate {i}")
        grad.flat[i] = (up - down) / (2.0 * epsilon)
    return grad


@dataclass
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    abs_err: np.ndarray
    rel_err: np.ndarray
    tol_rel: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol_rel

    def worst(self) -> int:
        return int(np.argmax(self.rel_err))

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["weight", "analytic", "numeric", "rel_err"])
        for i in range(self.analytic.size):
            name = names[i] if names is not None else str(i)
            out.writerow([name, repr(float(self.analytic[i])), repr(float(self.numeric[i])),
                          repr(float(self.rel_err[i]))])
        return buf.getvalue()


def compare(analytic, numeric, tol_rel: float) -> GradReport:
    """Relative error is ``|a - n| / max(1e-12, |a|, |n|)`` per entry."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ValueError(f"length mismatch: {a.size} analytic vs {n.size} numeric")
    abs_err = np.abs(a - n)
    rel = abs_err / np.maximum(REL_FLOOR, np.maximum(np.abs(a), np.abs(n)))
    return GradReport(a, n, abs_err, rel, tol_rel)


def check(loss_fn, weights, analytic, tol_rel: float = 1e-6, epsilon: float = 1e-5) -> GradReport:
    return compare(analytic, fd_gradient(loss_fn, weights, epsilon), tol_rel)
