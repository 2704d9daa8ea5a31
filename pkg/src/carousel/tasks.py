"""Synthetic long-lag sequence tasks.

Every generator is a pure function of its :class:`TaskSpec`; the seed feeds
a private ``numpy.random.Generator``.

* ``latch``: two input channels, a value channel carrying a +-1 cue at step 1
  and Gaussian noise afterwards, and a marker channel that is 1 at step 1
  only. One output must report the cue sign (1 or 0) at the final step.
* ``temporal_order``: channels X, Y and noise. An X or Y pulse appears at two
  random positions in the first tenth of the sequence; the final step asks
  which of XX, XY, YX, YY occurred (one-hot over four outputs).
* ``counting``: one channel of random unit pulses; the target at every step
  is 1 exactly when the number of pulses so far equals ``count``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class TaskKind(str, enum.Enum):
    LATCH = "latch"
    TEMPORAL_ORDER = "temporal_order"
    COUNTING = "counting"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind = TaskKind.LATCH
    lag: int = 100
    noise_std: float = 0.2
    sequence_count: int = 100
    seed: int = 0
    count: int = 3           # counting only: the pulse count to detect
    pulse_prob: float = 0.1  # counting only

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if self.lag < 1:
            raise ValueError("lag must be at least 1")
        if not (self.noise_std >= 0 and np.isfinite(self.noise_std)):
            raise ValueError("noise_std must be finite and nonnegative")
        if self.sequence_count < 1:
            raise ValueError("sequence_count must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.kind is TaskKind.TEMPORAL_ORDER and self.lag < 4:
            raise ValueError("temporal_order needs lag >= 4")
        if self.count < 1:
            raise ValueError("count must be positive")
        if not 0 < self.pulse_prob < 1:
            raise ValueError("pulse_prob must lie in (0, 1)")


@dataclass
class TaskSample:
    inputs: np.ndarray   # (T, n_in)
    targets: np.ndarray  # (T, n_out)
    mask: np.ndarray     # (T, n_out) bool

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


def channels(kind: TaskKind | str) -> tuple[int, int]:
    """``(inputs, outputs)`` of a task kind."""
    return {TaskKind.LATCH: (2, 1), TaskKind.TEMPORAL_ORDER: (3, 4),
            TaskKind.COUNTING: (1, 1)}[TaskKind(kind)]


def _balanced_signs(rng, n: int) -> np.ndarray:
    signs = np.where(np.arange(n) < (n + 1) // 2, 1.0, -1.0)
    return rng.permutation(signs)


def _latch(task: TaskSpec, rng) -> list[TaskSample]:
    T = task.lag + 1
    cues = _balanced_signs(rng, task.sequence_count)
    out = []
    for cue in cues:
        x = np.zeros((T, 2))
        x[0, 0] = cue
        x[1:, 0] = rng.normal(0.0, task.noise_std, T - 1) if task.noise_std > 0 else 0.0
        x[0, 1] = 1.0
        d = np.zeros((T, 1))
        d[-1, 0] = 1.0 if cue > 0 else 0.0
        m = np.zeros((T, 1), dtype=bool)
        m[-1, 0] = True
        out.append(TaskSample(x, d, m))
    return out


def _temporal_order(task: TaskSpec, rng) -> list[TaskSample]:
    T = task.lag
    window = max(2, T // 10)
    out = []
    for _ in range(task.sequence_count):
        x = np.zeros((T, 3))
        if task.noise_std > 0:
            x[:, 2] = rng.normal(0.0, task.noise_std, T)
        pos = np.sort(rng.choice(window, size=2, replace=False))
        symbols = rng.integers(0, 2, size=2)   # 0 = X, 1 = Y
        for p, s in zip(pos, symbols):
            x[p, s] = 1.0
        d = np.zeros((T, 4))
        d[-1, 2 * symbols[0] + symbols[1]] = 1.0
        m = np.zeros((T, 4), dtype=bool)
        m[-1] = True
        out.append(TaskSample(x, d, m))
    return out


def _counting(task: TaskSpec, rng) -> list[TaskSample]:
    T = task.lag
    out = []
    for _ in range(task.sequence_count):
        pulses = (rng.random(T) < task.pulse_prob).astype(np.float64)
        x = pulses[:, None].copy()
        if task.noise_std > 0:
            x[:, 0] += rng.normal(0.0, task.noise_std, T)
        d = (np.cumsum(pulses) == task.count).astype(np.float64)[:, None]
        out.append(TaskSample(x, d, np.ones((T, 1), dtype=bool)))
    return out


def gen_task(task: TaskSpec) -> list[TaskSample]:
    """Generate ``task.sequence_count`` samples; identical specs give
    bit-identical lists."""
    rng = np.random.default_rng(task.seed)
    gen = {TaskKind.LATCH: _latch, TaskKind.TEMPORAL_ORDER: _temporal_order,
           TaskKind.COUNTING: _counting}
    return gen[task.kind](task, rng)


def final_step_correct(sample: TaskSample, outputs: np.ndarray) -> bool:
    """Classification at the last masked step: thresholding at 0.5 for a
    single output, arg-max otherwise."""
    y = np.asarray(outputs)[-1]
    d = sample.targets[-1]
    if d.size == 1:
        return bool((y[0] > 0.5) == (d[0] > 0.5))
    return int(np.argmax(y)) == int(np.argmax(d))


def to_csv(samples: list[TaskSample]) -> str:
    """Long-format text: ``sequence,step,x...,d...,mask...`` per row."""
    if not samples:
        return ""
    n_in, n_out = samples[0].inputs.shape[1], samples[0].targets.shape[1]
    head = (["sequence", "step"] + [f"x{i}" for i in range(n_in)]
            + [f"d{k}" for k in range(n_out)] + [f"m{k}" for k in range(n_out)])
    rows = [",".join(head)]
    for s_idx, s in enumerate(samples):
        for t in range(s.steps):
            vals = ([str(s_idx), str(t + 1)] + [repr(float(v)) for v in s.inputs[t]]
                    + [repr(float(v)) for v in s.targets[t]] + [str(int(v)) for v in s.mask[t]])
            rows.append(",".join(vals))
    return "\n".join(rows) + "\n"
