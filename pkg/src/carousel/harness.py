"""Experiment configuration, seeded runs and metrics output.

A config is a flat ``key = value`` text file (``#`` starts a comment).
Recognised keys and defaults are in :data:`DEFAULTS`. Command-line
``--set key=value`` pairs override file values.

Randomness flows from one integer seed through ``numpy.random.SeedSequence``
split into three streams, in this order:

0. weight initialisation,
1. the training sequences,
2. the held-out evaluation sequences.

Training proceeds in epochs of ``epoch_sequences`` presentations. After each
epoch the held-out set is scored, and one CSV row ``epoch,mse,accuracy`` is
written. ``mse`` is the mean squared error over target-bearing outputs and
``accuracy`` is the fraction of sequences classified correctly at their
final step.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .accum import DivergenceError
from .activation import DomainError
from .ffnn import FeedForward, Sample, TrainConfig
from .lstm import Lstm, LstmConfig
from .rnn import Recurrent
from .tasks import TaskKind, TaskSpec, channels, final_step_correct, gen_task
from .topology import NetworkSpec, build_ffnn, build_lstm, build_rnn, loads, dumps, require_valid
from .variants import GruNetwork

TRAINERS = ("ffnn_bp", "rnn_bptt", "rnn_rtrl", "lstm", "gru_bptt")

DEFAULTS: dict[str, str] = {
    "trainer": "lstm",
    "network": "",              # optional path to a saved network; built from the keys below otherwise
    "task": "latch",
    "lag": "100",
    "noise_std": "0.2",
    "count": "3",
    "pulse_prob": "0.1",
    "epochs": "20",
    "epoch_sequences": "250",
    "eval_sequences": "200",
    "stop_accuracy": "",        # stop once held-out accuracy reaches this
    "learning_rate": "0.5",
    "online": "false",
    "init_range": "0.1",
    "blocks": "1",
    "cells_per_block": "1",
    "hidden": "4",              # hidden units for rnn_*, gru_bptt and ffnn_bp
    "forget_bias": "1.0",
    "train_forget_bias": "false",
    "train_unit_biases": "false",  # cell, hidden and output biases (lstm)
    "seed": "0",
}


class ConfigError(ValueError):
    """Bad key or value; the command line reports it as a usage error."""


class SpecValidationError(ValueError):
    """The referenced network file is malformed or breaks topology rules."""


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        out[key.strip()] = val.strip()
    return out


def _bool(key, v):
    v = v.lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected true or false, got {v!r}")


def _num(key, v, kind=float, lo=None):
    try:
        x = kind(v)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    if kind is float and not math.isfinite(x):
        raise ConfigError(f"{key}: must be finite")
    if lo is not None and x < lo:
        raise ConfigError(f"{key}: must be at least {lo}")
    return x


@dataclass(frozen=True)
class ExperimentConfig:
    trainer: str
    network: str
    task: TaskSpec
    eval_sequences: int
    epochs: int
    epoch_sequences: int
    stop_accuracy: float | None
    learning_rate: float
    online: bool
    init_range: float
    blocks: int
    cells_per_block: int
    hidden: int
    forget_bias: float
    train_forget_bias: bool
    train_unit_biases: bool
    seed: int

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ExperimentConfig":
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        v = {**DEFAULTS, **values}
        trainer = v["trainer"]
        if trainer not in TRAINERS:
            raise ConfigError(f"trainer: expected one of {', '.join(TRAINERS)}, got {trainer!r}")
        try:
            kind = TaskKind(v["task"])
        except ValueError:
            raise ConfigError(f"task: unknown kind {v['task']!r}") from None
        seed = _num("seed", v["seed"], int, 0)
        if seed >= 2**64:
            raise ConfigError("seed: must fit in 64 bits")
        try:
            task = TaskSpec(kind, _num("lag", v["lag"], int, 1), _num("noise_std", v["noise_std"], float, 0),
                            1, 0, _num("count", v["count"], int, 1), _num("pulse_prob", v["pulse_prob"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        stop = v["stop_accuracy"].strip()
        cfg = cls(
            trainer=trainer,
            network=v["network"],
            task=task,
            eval_sequences=_num("eval_sequences", v["eval_sequences"], int, 1),
            epochs=_num("epochs", v["epochs"], int, 0),
            epoch_sequences=_num("epoch_sequences", v["epoch_sequences"], int, 1),
            stop_accuracy=_num("stop_accuracy", stop) if stop else None,
            learning_rate=_num("learning_rate", v["learning_rate"], float, 0),
            online=_bool("online", v["online"]),
            init_range=_num("init_range", v["init_range"], float, 0),
            blocks=_num("blocks", v["blocks"], int, 1),
            cells_per_block=_num("cells_per_block", v["cells_per_block"], int, 1),
            hidden=_num("hidden", v["hidden"], int, 1),
            forget_bias=_num("forget_bias", v["forget_bias"]),
            train_forget_bias=_bool("train_forget_bias", v["train_forget_bias"]),
            train_unit_biases=_bool("train_unit_biases", v["train_unit_biases"]),
            seed=seed,
        )
        if trainer == "rnn_rtrl" and kind is not TaskKind.COUNTING:
            raise ConfigError("rnn_rtrl needs a target at every step, which only the counting task has")
        if trainer != "lstm" and cfg.learning_rate <= 0:
            raise ConfigError("learning_rate: must be positive for this trainer")
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        values = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            values = parse_config_text(text)
        values.update(overrides or {})
        return cls.from_mapping(values)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)

    @property
    def budget(self) -> int:
        return self.epochs * self.epoch_sequences


def seed_streams(seed: int) -> tuple[np.random.Generator, int, int]:
    """Weight generator plus the train and eval task seeds."""
    weights, train, evals = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(weights), int(train.generate_state(1, np.uint64)[0]),
            int(evals.generate_state(1, np.uint64)[0]))


# ---------------------------------------------------------------------------
# trainers: each exposes train(sample) and predict(inputs) -> (T, n_out)


class _SpecModel:
    def checkpoint(self) -> str:
        return dumps(self.net.to_spec())


class _LstmModel(_SpecModel):
    def __init__(self, spec, cfg: ExperimentConfig):
        self.net = Lstm(spec)
        self.config = LstmConfig(cfg.learning_rate, cfg.online, 1, cfg.train_forget_bias,
                                 cfg.train_unit_biases)

    def train(self, s):
        self.net.train_sequence(s.inputs, s.targets, s.mask, self.config)

    def predict(self, x):
        return self.net.run(x).outputs[1:][:, self.net.outputs]


class _RnnModel(_SpecModel):
    def __init__(self, spec, cfg: ExperimentConfig, rtrl: bool):
        self.net = Recurrent(spec)
        self.config = TrainConfig(learning_rate=cfg.learning_rate)
        self.rtrl = rtrl
        self.online = cfg.online
        self.outputs = np.array(spec.output_units, dtype=np.intp)

    def train(self, s):
        if self.rtrl:
            acc = self.net.rtrl(s.inputs, s.targets, s.mask, self.config, online=self.online)
            if not self.online:
                self.net.add(acc)
        else:
            trace = self.net.run(s.inputs, s.targets, s.mask)
            self.net.add(self.net.bptt(trace, self.config))

    def predict(self, x):
        return self.net.run(x).outputs[1:][:, self.outputs]


class _GruModel:
    def __init__(self, net: GruNetwork, cfg: ExperimentConfig):
        self.net = net
        self.lr = cfg.learning_rate

    def train(self, s):
        step = self.net.bptt(s.inputs, s.targets, s.mask, self.lr)
        params = self.net.params + step
        if not np.all(np.isfinite(params)):
            raise DivergenceError("weight update produced non-finite values")
        self.net = self.net.with_params(params)

    def predict(self, x):
        return self.net.run(x)[1]

    def checkpoint(self) -> str:
        return self.net.dumps()


class _FfnnModel(_SpecModel):
    """Sees the whole input sequence at once as one flat vector and answers
    the final-step target."""

    def __init__(self, spec, cfg: ExperimentConfig):
        self.net = FeedForward(spec)
        self.config = TrainConfig(learning_rate=cfg.learning_rate)

    def train(self, s):
        sample = Sample(s.inputs.ravel(), s.targets[-1])
        self.net.add(self.net.backprop(self.net.forward(sample.input), sample, self.config))

    def predict(self, x):
        y = self.net.forward(np.asarray(x).ravel()).output[self.net.outputs]
        out = np.zeros((np.shape(x)[0], y.size))
        out[-1] = y
        return out


def _load_network(path: str) -> NetworkSpec:
    try:
        spec = loads(Path(path).read_text())
    except OSError as exc:
        raise SpecValidationError(f"cannot read network: {exc}") from None
    except ValueError as exc:
        raise SpecValidationError(f"{path}: {exc}") from None
    try:
        require_valid(spec)
    except ValueError as exc:
        raise SpecValidationError(f"{path}: {exc}") from None
    return spec


def build_model(cfg: ExperimentConfig, rng: np.random.Generator):
    n_in, n_out = channels(cfg.task.kind)
    r = cfg.init_range
    if cfg.trainer == "gru_bptt":
        if cfg.network:
            try:
                net = GruNetwork.loads(Path(cfg.network).read_text())
            except (OSError, ValueError, KeyError) as exc:
                raise SpecValidationError(f"cannot load GRU network: {exc}") from None
        else:
            net = GruNetwork.random(n_in, cfg.hidden, n_out, rng, r)
        return _GruModel(net, cfg)
    if cfg.network:
        spec = _load_network(cfg.network)
    elif cfg.trainer == "lstm":
        spec = build_lstm(n_in, cfg.blocks, cfg.cells_per_block, n_out, rng=rng,
                          init_range=r, forget_bias=cfg.forget_bias)
    elif cfg.trainer == "ffnn_bp":
        steps = cfg.task.lag + 1 if cfg.task.kind is TaskKind.LATCH else cfg.task.lag
        spec = build_ffnn([n_in * steps, cfg.hidden, n_out], rng, r)
    else:
        spec = build_rnn(n_in, cfg.hidden, n_out, rng, r)
    try:
        if cfg.trainer == "lstm":
            return _LstmModel(spec, cfg)
        if cfg.trainer == "ffnn_bp":
            return _FfnnModel(spec, cfg)
        return _RnnModel(spec, cfg, rtrl=cfg.trainer == "rnn_rtrl")
    except ValueError as exc:
        raise SpecValidationError(f"network does not suit trainer {cfg.trainer}: {exc}") from None


def evaluate(model, samples) -> tuple[float, float]:
    """Held-out ``(mse, accuracy)``."""
    sq, count, correct = [], 0, 0
    for s in samples:
        y = model.predict(s.inputs)
        e = np.where(s.mask, s.targets - y, 0.0)
        sq.extend((e * e).ravel().tolist())
        count += int(s.mask.sum())
        correct += final_step_correct(s, y)
    return math.fsum(sq) / max(count, 1), correct / len(samples)


@dataclass
class RunResult:
    seed: int
    rows: list[tuple[int, float, float]]
    sequences: int

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1][2] if self.rows else math.nan


CSV_HEADER = "epoch,mse,accuracy"


def format_rows(rows) -> str:
    lines = [CSV_HEADER] + [f"{e},{mse!r},{acc!r}" for e, mse, acc in rows]
    return "\n".join(lines) + "\n"


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> RunResult:
    """Train per ``cfg``; writes ``metrics.csv``, ``checkpoint.net`` and
    ``checkpoint.meta`` into ``out_dir`` when given.

    Raises :class:`DivergenceError` on non-finite weights, after writing the
    rows logged so far.
    """
    rng, train_seed, eval_seed = seed_streams(cfg.seed)
    model = build_model(cfg, rng)
    eval_set = gen_task(replace(cfg.task, sequence_count=cfg.eval_sequences, seed=eval_seed))
    train_set = (gen_task(replace(cfg.task, sequence_count=cfg.budget, seed=train_seed))
                 if cfg.budget else [])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[int, float, float]] = []
    seen = 0

    def flush():
        if out is not None:
            (out / "metrics.csv").write_text(format_rows(rows))

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for epoch in range(1, cfg.epochs + 1):
                for s in train_set[seen:seen + cfg.epoch_sequences]:
                    model.train(s)
                    seen += 1
                mse, acc = evaluate(model, eval_set)
                rows.append((epoch, mse, acc))
                if cfg.stop_accuracy is not None and acc >= cfg.stop_accuracy:
                    break
    except (DivergenceError, DomainError) as exc:
        # task inputs are always finite, so a non-finite net input means the
        # weights have blown up
        flush()
        raise DivergenceError(f"seed {cfg.seed}, after {seen} sequences: {exc}") from None
    flush()
    if out is not None:
        (out / "checkpoint.net").write_text(model.checkpoint())
        meta = [f"trainer={cfg.trainer}", f"seed={cfg.seed}", f"epochs={len(rows)}",
                f"sequences={seen}"]
        if rows:
            meta.append(f"final_accuracy={rows[-1][2]!r}")
        (out / "checkpoint.meta").write_text("\n".join(meta) + "\n")
    return RunResult(cfg.seed, rows, seen)


def _run_one(args):
    cfg, out_dir = args
    try:
        return run_experiment(cfg, out_dir), None
    except DivergenceError as exc:
        return None, str(exc)


def run_seeds(cfg: ExperimentConfig, seeds: list[int], out_dir: str | os.PathLike | None,
              jobs: int = 1) -> list[tuple[RunResult | None, str | None]]:
    """Independent runs, one per seed, each into ``out_dir/seed-<s>`` when
    several seeds are given. ``jobs > 1`` uses worker processes; results do
    not depend on it."""
    tasks = []
    for s in seeds:
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / f"seed-{s}" if len(seeds) > 1 else Path(out_dir)
        tasks.append((cfg.with_seed(s), sub))
    if jobs <= 1 or len(tasks) == 1:
        return [_run_one(t) for t in tasks]
    import multiprocessing
    with multiprocessing.get_context("spawn").Pool(min(jobs, len(tasks))) as pool:
        return pool.map(_run_one, tasks)
