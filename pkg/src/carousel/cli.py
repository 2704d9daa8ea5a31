"""Command line: ``carousel {train,gradcheck,vanish,gen-task,inspect}``.

Exit codes: 0 success, 2 usage error, 3 divergence, 4 validation failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck, harness, tasks, topology, vanish
from .accum import param_vector, with_param_vector
from .activation import Activation
from .ffnn import FeedForward, Sample, TrainConfig, squared_error
from .lstm import Lstm, LstmConfig, lstm_error
from .rnn import Recurrent, run_epoch
from .variants import GruNetwork

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_INVALID = 0, 2, 3, 4


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        key, sep, val = p.partition("=")
        if not sep:
            raise harness.ConfigError(f"--set expects key=value, got {p!r}")
        out[key.strip()] = val.strip()
    return out


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _emit(text: str, out: str | None, name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text)


# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = harness.ExperimentConfig.load(args.config, _overrides(args.set))
    seeds = args.seed or [cfg.seed]
    if args.jobs < 1:
        raise harness.ConfigError("--jobs must be at least 1")
    results = harness.run_seeds(cfg, seeds, args.out, args.jobs)
    status = EXIT_OK
    for seed, (res, err) in zip(seeds, results):
        if err is not None:
            print(f"seed {seed}: diverged: {err}", file=sys.stderr)
            status = EXIT_DIVERGED
        else:
            acc = "n/a" if not res.rows else repr(res.final_accuracy)
            print(f"seed {seed}: {len(res.rows)} epochs, {res.sequences} sequences, final accuracy {acc}")
            if args.out is None:
                sys.stdout.write(harness.format_rows(res.rows))
    return status


def _gradcheck_case(trainer: str, rng):
    """Random small problem: returns (loss_fn, params, analytic_change, tol)."""
    if trainer == "ffnn_bp":
        spec = topology.build_ffnn([3, 4, 2], rng, 1.0)
        samples = [Sample(rng.normal(size=3), rng.uniform(size=2)) for _ in range(4)]
        net = FeedForward(spec)
        cfg = TrainConfig(learning_rate=1.0)
        acc = None
        for s in samples:
            step = net.backprop(net.forward(s.input), s, cfg)
            acc = step if acc is None else (acc.__iadd__(step))
        return (lambda p: squared_error(with_param_vector(spec, p), samples)), param_vector(spec), acc.vector, 1e-6
    if trainer in ("rnn_bptt", "rnn_rtrl"):
        spec = topology.build_rnn(2, 3, 2, rng, 1.0, biases=True)
        x, d = rng.normal(size=(10, 2)), rng.uniform(size=(10, 2))
        cfg = TrainConfig(learning_rate=1.0)
        net = Recurrent(spec)
        if trainer == "rnn_bptt":
            acc = net.bptt(net.run(x, d), cfg)
        else:
            acc = net.rtrl(x, d, config=cfg)
        return (lambda p: run_epoch(with_param_vector(spec, p), x, d).total_error()), param_vector(spec), acc.vector, 1e-6
    if trainer == "gru_bptt":
        net = GruNetwork.random(2, 3, 2, rng, 0.8)
        x, d = rng.normal(size=(10, 2)), rng.uniform(size=(10, 2))
        return (lambda p: net.with_params(p).error(x, d)), net.params, net.bptt(x, d), 1e-6
    # lstm: single block without cross recurrence, where the hybrid gradient is exact
    spec = topology.build_lstm(2, 1, 2, 1, rng=rng, init_range=0.5, recurrent=False)
    x, d = rng.normal(size=(8, 2)), rng.uniform(size=(8, 1))
    cfg = LstmConfig(learning_rate=1.0, train_forget_bias=True, train_unit_biases=True)
    acc, _, _, _ = Lstm(spec).gradient(x, d, config=cfg)
    return (lambda p: lstm_error(with_param_vector(spec, p), x, d)), param_vector(spec), acc.vector, 1e-5


def cmd_gradcheck(args) -> int:
    if args.trainer not in harness.TRAINERS:
        raise harness.ConfigError(f"--trainer must be one of {', '.join(harness.TRAINERS)}")
    rng = np.random.default_rng(args.seed)
    loss, params, change, tol = _gradcheck_case(args.trainer, rng)
    tol = args.tol if args.tol is not None else tol
    # Trainers report -dE/dw; the oracle differentiates E itself.
    report = gradcheck.check(loss, params, -np.asarray(change), tol, args.epsilon)
    _emit(report.to_csv(), args.out, "gradcheck.csv")
    verdict = "pass" if report.passed else "FAIL"
    print(f"{args.trainer}: max relative error {report.max_rel_err:.3e} (tolerance {tol:g}) {verdict}",
          file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_vanish(args) -> int:
    if args.network:
        spec = _read_spec(args.network)
        rng = np.random.default_rng(args.seed)
        x = rng.normal(size=(args.steps, len(spec.input_units)))
        init = None
    else:
        spec = vanish.self_loop(args.weight, Activation.parse(args.activation), args.bias)
        x = np.zeros((args.steps, 1))
        init = [0.0, args.initial]
    outs = spec.output_units
    source = args.source if args.source is not None else (outs[0] if outs else spec.non_input_units[-1])
    sink = args.sink if args.sink is not None else source
    t1 = args.t_final if args.t_final is not None else args.steps
    trace = run_epoch(spec, x, initial_outputs=init)
    report = vanish.error_flow_factor(spec, trace, source, sink, args.t0, t1)
    _emit(report.to_csv(), args.out, "flow.csv")
    print(f"factor {report.factor!r} regime {report.regime.value}", file=sys.stderr)
    return EXIT_OK


def cmd_gen_task(args) -> int:
    cfg = harness.ExperimentConfig.load(args.config, _overrides(args.set))
    seed = args.seed[0] if args.seed else cfg.seed
    spec = replace(cfg.task, sequence_count=args.count, seed=seed)
    _emit(tasks.to_csv(tasks.gen_task(spec)), args.out, "task.csv")
    return EXIT_OK


def _read_spec(path: str) -> topology.NetworkSpec:
    try:
        return topology.loads(Path(path).read_text())
    except OSError as exc:
        raise harness.ConfigError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        raise harness.SpecValidationError(f"{path}: {exc}") from None


def cmd_inspect(args) -> int:
    spec = _read_spec(args.path)
    print(topology.summary(spec))
    if spec.blocks:
        try:
            c = topology.count_connections(spec)
            print(f"block connections: recurrent {c.block_internal}, input {c.input_side}, output {c.output_side}")
        except topology.UnsupportedTopology:
            pass
    return EXIT_OK if not topology.validate(spec) else EXIT_INVALID


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="carousel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="flat key = value config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=_u64, action="append", metavar="U64",
                        help="random seed (repeat for several runs)")
        sp.add_argument("--out", metavar="DIR", help="output directory (stdout when omitted)")

    t = sub.add_parser("train", help="train per a config and write metrics")
    common(t)
    t.add_argument("--jobs", type=int, default=1, metavar="N", help="seeds run concurrently")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("gradcheck", help="compare a trainer's gradient with finite differences")
    g.add_argument("--trainer", default="lstm", help=", ".join(harness.TRAINERS))
    g.add_argument("--seed", type=_u64, default=0, metavar="U64")
    g.add_argument("--out", metavar="DIR")
    g.add_argument("--tol", type=float, help="relative tolerance (trainer default otherwise)")
    g.add_argument("--epsilon", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("vanish", help="error-flow decay curve as CSV")
    v.add_argument("--network", metavar="PATH", help="saved network (default: one self-connected unit)")
    v.add_argument("--weight", type=float, default=1.0, help="self-weight of the default unit")
    v.add_argument("--activation", default="logistic", help="activation of the default unit")
    v.add_argument("--bias", type=float, default=-0.5, help="bias of the default unit")
    v.add_argument("--initial", type=float, default=0.5, help="initial output of the default unit")
    v.add_argument("--steps", type=int, default=11)
    v.add_argument("--source", type=int, help="unit where the error starts (default: first output)")
    v.add_argument("--sink", type=int, help="unit the error reaches (default: the source)")
    v.add_argument("--t0", type=int, default=1)
    v.add_argument("--t-final", type=int, dest="t_final")
    v.add_argument("--seed", type=_u64, default=0, metavar="U64", help="input noise for --network")
    v.add_argument("--out", metavar="DIR")
    v.set_defaults(func=cmd_vanish)

    k = sub.add_parser("gen-task", help="write generated task sequences as CSV")
    common(k)
    k.add_argument("--count", type=int, default=10, help="number of sequences")
    k.set_defaults(func=cmd_gen_task)

    i = sub.add_parser("inspect", help="summarise a saved network")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except harness.SpecValidationError as exc:
        print(f"invalid network: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
