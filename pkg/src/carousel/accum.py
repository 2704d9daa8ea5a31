from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import NetworkSpec


class DivergenceError(ArithmeticError):
    """Training produced non-finite weights."""


@dataclass
class GradientAccumulator:
    """Weight changes, one entry per connection and one per unit bias.

    Entries hold the descent step ``-learning_rate * dE/dw`` summed over
    whatever span the trainer accumulated; they are added to the current
    parameters as-is.
    """

    weights: np.ndarray
    biases: np.ndarray

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "GradientAccumulator":
        return cls(np.zeros(len(spec.connections)), np.zeros(len(spec.units)))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.weights, self.biases])

    def __iadd__(self, other: "GradientAccumulator"):
        self.weights += other.weights
        self.biases += other.biases
        return self

    def scaled(self, factor: float) -> "GradientAccumulator":
        return GradientAccumulator(self.weights * factor, self.biases * factor)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases)))

    def apply(self, spec: NetworkSpec) -> NetworkSpec:
        weights = spec.weights + self.weights
        biases = spec.biases + self.biases
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise DivergenceError("weight update produced non-finite values")
        return spec.with_params(weights, biases)


def param_vector(spec: NetworkSpec) -> np.ndarray:
    """Connection weights followed by unit biases."""
    return np.concatenate([spec.weights, spec.biases])


def with_param_vector(spec: NetworkSpec, vec) -> NetworkSpec:
    vec = np.asarray(vec, dtype=np.float64)
    nw = len(spec.connections)
    return spec.with_params(vec[:nw], vec[nw:])
