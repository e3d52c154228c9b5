"""Command-line entry point: ``randclip <subcommand> [--config FILE] [flags]``.

Exit status: 0 on success, 2 on configuration errors, 3 on numerical
alarms, 4 on domain errors. Failures print one ``error: kind=... message=...``
line to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml
from threadpoolctl import threadpool_limits

from . import accountant, costmodel, envelope, estimators, trainer
from .linalg import DimensionError
from .numerics import DomainError, SeededStream

THREADS_ENV = "RANDCLIP_THREADS"
EXIT_CONFIG, EXIT_NUMERIC, EXIT_DOMAIN = 2, 3, 4
NUMERIC_ERRORS = (
    accountant.AccuracyAlarm, accountant.SupportExhausted, accountant.BracketExhausted,
    envelope.EnvelopeError, trainer.NonFiniteGradient, ArithmeticError,
)


class ConfigError(ValueError):
    """Malformed or unknown configuration."""


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _g17(x: float) -> str:
    return f"{x:.17g}"


def _g6(x: float) -> str:
    return f"{x:.6g}"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    root = _Parser(prog="randclip", description="Randomized-clipping DP-SGD toolkit.",
                   formatter_class=fmt)
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.add_argument("--config", type=Path, default=None, help="YAML file of flag values")
        p.add_argument("--seed", type=int, default=0, help="global seed")
        p.add_argument("--out", type=Path, default=None, help="report path (stdout if omitted)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker cap; None means ${THREADS_ENV} or all available cores")
        return p

    p = add("estimate", "relative error of Hutch and Hutch++ on random instances")
    p.add_argument("--T", type=int, default=256, help="rows of the factors (sequence length)")
    p.add_argument("--d", type=int, default=256, help="input width")
    p.add_argument("--p", type=int, default=256, help="output width")
    p.add_argument("--k", type=int, default=32, help="projection dimension")
    p.add_argument("--trials", type=int, default=30, help="random instances per estimator")
    p.add_argument("--distribution", choices=estimators.DISTRIBUTIONS, default="normal",
                   help="entry distribution of the factors")

    p = add("envelope", "build and serialize an envelope CDF table")
    p.add_argument("--estimator", choices=envelope.ESTIMATORS, default="hutch",
                   help="which sketch the envelope bounds")
    p.add_argument("--k", type=int, default=32, help="projection dimension")
    p.add_argument("--d", type=int, default=64, help="rank bound of the gradient")
    p.add_argument("--x-min", type=float, default=1e-4, help="left end of the table")
    p.add_argument("--x-max", type=float, default=None,
                   help="right end of the table; omitted means max(3, x_plus + 1), or 3 for hutchpp")
    p.add_argument("--n-grid", type=int, default=2048, help="uniform grid points")
    p.add_argument("--n-lambda", type=int, default=501, help="weight grid of the middle search")
    p.add_argument("--tau", type=float, default=1e-4, help="bisection tolerance for x_plus")

    p = add("xplus", "threshold above which the uniform configuration dominates")
    p.add_argument("--k", type=int, nargs="+", default=[32], help="projection dimensions")
    p.add_argument("--d", type=int, nargs="+", default=[64], help="rank bounds")
    p.add_argument("--tau", type=float, default=1e-4, help="bisection tolerance")
    p.add_argument("--n-lambda", type=int, default=501, help="weight grid of the middle search")

    for name, text in (("account", "eps for a given noise multiplier"),
                       ("calibrate", "smallest noise multiplier for a given (eps, delta)")):
        p = add(name, text)
        if name == "account":
            p.add_argument("--sigma", type=float, default=1.0, help="noise multiplier")
        else:
            p.add_argument("--eps", type=float, default=1.0, help="target eps")
        p.add_argument("--N", type=int, default=2225, help="dataset size")
        p.add_argument("--B", type=int, default=64, help="expected batch size")
        p.add_argument("--E", type=int, default=10, help="epochs")
        p.add_argument("--delta", type=float, default=1e-5, help="target delta")
        p.add_argument("--h", type=float, default=1e-4, help="privacy-loss mesh size")
        p.add_argument("--t-max", type=float, default=16.0, help="privacy-loss support cap")
        p.add_argument("--scale-bins", type=int, default=512, help="bins of the scale law")
        p.add_argument("--envelope", type=Path, default=None,
                       help="envelope file; omit for deterministic clipping")

    p = add("train", "toy DP-SGD run with randomized clipping")
    p.add_argument("--d0", type=int, default=16, help="input width")
    p.add_argument("--d1", type=int, default=8, help="hidden width")
    p.add_argument("--T", type=int, default=8, help="tokens per sample")
    p.add_argument("--B", type=int, default=32, help="batch size")
    p.add_argument("--steps", type=int, default=100, help="optimizer steps")
    p.add_argument("--lr", type=float, default=0.01, help="learning rate on the summed gradient")
    p.add_argument("--C", type=float, default=1.0, help="clipping threshold")
    p.add_argument("--sigma", type=float, default=1.0, help="noise multiplier")
    p.add_argument("--routine", choices=[r.value for r in trainer.Routine], default="exact",
                   help="per-sample norm routine")
    p.add_argument("--k", type=int, default=32, help="projection dimension")
    p.add_argument("--records", type=Path, default=None, help="per-sample step records CSV")

    p = add("cost", "FLOP and memory formulas plus the regime table")
    p.add_argument("--B", type=int, default=2, help="batch size")
    p.add_argument("--T", type=int, default=4096, help="sequence length")
    p.add_argument("--p", type=int, default=8192, help="output width")
    p.add_argument("--d", type=int, default=2048, help="input width")
    p.add_argument("--k", type=int, default=32, help="projection dimension")
    return root


def _load_config(path: Path, sub: argparse.ArgumentParser) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1} column {mark.column + 1}" if mark else ""
        raise ConfigError(f"config {path} is not valid YAML{where}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a flat mapping of flag names to values")
    known = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    out = {}
    for key, value in data.items():
        dest = str(key).replace("-", "_")
        if dest not in known:
            raise ConfigError(f"config {path}: unknown field {key!r}")
        action = known[dest]
        try:
            if action.nargs == "+":
                vals = value if isinstance(value, list) else [value]
                value = [action.type(v) for v in vals]
            elif value is not None and action.type is not None:
                value = action.type(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config {path}: field {key!r} has invalid value {value!r}") from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"config {path}: field {key!r} must be one of {list(action.choices)}")
        out[dest] = value
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**_load_config(args.config, sub))
        args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = _default_threads()
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    return args


def _emit(args, machine: str, summary: str | None = None) -> None:
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(machine)
        if summary:
            print(summary)
    else:
        sys.stdout.write(machine)


def cmd_estimate(args) -> None:
    res = estimators.relative_error_benchmark(
        args.T, args.d, args.p, args.k, args.trials, SeededStream(args.seed), args.distribution)
    summary = " ".join(f"{name}={_g6(s.mean_rel_err)}+-{_g6(s.ci95_halfwidth)}"
                       for name, s in res.items())
    _emit(args, estimators.benchmark_csv(res.values()), summary)


def cmd_envelope(args) -> None:
    if args.estimator == "hutch":
        grid = envelope.build_hutch_envelope(args.k, args.d, args.x_min, args.x_max, args.n_grid,
                                             args.n_lambda, args.tau)
    else:
        x_max = 3.0 if args.x_max is None else args.x_max
        grid = envelope.build_hutchpp_envelope(args.k, args.d, args.x_min, x_max, args.n_grid)
    _emit(args, envelope.serialize_envelope(grid),
          f"envelope {grid.estimator} k={grid.k} d={grid.d} x_plus={_g6(grid.x_plus)} "
          f"points={len(grid.x)}")


def cmd_xplus(args) -> None:
    rows = ["k,d,x_plus,excess_times_dk"]
    human = []
    for k in args.k:
        for d in args.d:
            xp = envelope.find_x_plus(k, d, args.tau, args.n_lambda)
            rows.append(f"{k},{d},{_g17(xp)},{_g17((xp - 1) * d * k)}")
            human.append(f"k={k} d={d} x_plus={_g6(xp)} (x_plus-1)*dk={_g6((xp - 1) * d * k)}")
    machine = "\n".join(rows) + "\n"
    if args.out is None:
        sys.stdout.write("\n".join(human) + "\n")
    else:
        _emit(args, machine, "\n".join(human))


def _accountant_config(args, sigma: float) -> accountant.AccountantConfig:
    env = None
    if args.envelope is not None:
        try:
            text = args.envelope.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read envelope {args.envelope}: {exc.strerror}") from None
        try:
            env = envelope.parse_envelope(text)
        except envelope.EnvelopeFormatError as exc:
            raise ConfigError(f"envelope {args.envelope}: {exc}") from None
    return accountant.AccountantConfig(
        sigma=sigma, N=args.N, B=args.B, E=args.E, delta_tgt=args.delta, h=args.h,
        t_max=args.t_max, envelope=env, scale_bins=args.scale_bins,
    )


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_g17) + "\n"


def cmd_account(args) -> None:
    cfg = _accountant_config(args, args.sigma)
    result = accountant.account(cfg)
    _emit(args, accountant.report(cfg, result) + "\n",
          f"eps={_g6(result.eps)} delta={_g6(result.delta)} steps={result.steps_per_epoch}x{result.epochs}")


def cmd_calibrate(args) -> None:
    cfg = _accountant_config(args, 1.0)
    sigma = accountant.solve_sigma(cfg, args.eps, args.delta)
    probe = accountant.AccountantConfig(**{**accountant._fields(cfg), "sigma": sigma})
    result = accountant.account(probe)
    body = json.loads(accountant.report(probe, result))
    body["eps_tgt"] = args.eps
    body["sigma_star"] = sigma
    _emit(args, _json(body), f"sigma*={_g6(sigma)} eps={_g6(result.eps)}")


def cmd_train(args) -> None:
    task = trainer.ToyTask(args.d0, args.T, seed=args.seed)
    model = trainer.ToyModel.init((args.d0, args.d1, 1), SeededStream(args.seed, 0, (0,)))
    cfg = trainer.TrainConfig(C=args.C, sigma=args.sigma, lr=args.lr, B=args.B, steps=args.steps,
                              routine=args.routine, k=args.k, seed=args.seed)
    res = trainer.train(model, task.batch, cfg, keep_records=args.records is not None)
    lines = ["step,mean_loss"] + [f"{t},{_g17(v)}" for t, v in enumerate(res.losses)]
    if args.records is not None:
        args.records.parent.mkdir(parents=True, exist_ok=True)
        args.records.write_text(trainer.records_csv(res.records))
    final = res.losses[-1] if len(res.losses) else float("nan")
    _emit(args, "\n".join(lines) + "\n", f"final_loss={_g6(final)} steps={args.steps}")


def cmd_cost(args) -> None:
    params = [costmodel.CostParams(args.B, args.T, args.p, args.d, args.k, m, True)
              for m in costmodel.Method]
    text = costmodel.cost_csv(params)
    if args.p >= args.d:
        text += "\n" + costmodel.regime_csv(args.p, args.d, args.B, args.k)
    _emit(args, text, None)


COMMANDS = {
    "estimate": cmd_estimate, "envelope": cmd_envelope, "xplus": cmd_xplus,
    "account": cmd_account, "calibrate": cmd_calibrate, "train": cmd_train, "cost": cmd_cost,
}


def _fail(kind: str, code: int, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: kind={kind} type={type(exc).__name__} message={json.dumps(msg)}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    """Parse ``argv`` and run one job; returns the exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if any(a in ("-h", "--help") for a in argv):
            build_parser().parse_args(argv)
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    try:
        with threadpool_limits(limits=args.threads):
            COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (DomainError, DimensionError) as exc:
        return _fail("domain", EXIT_DOMAIN, exc)
    except NUMERIC_ERRORS as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    return 0


def main() -> None:
    sys.exit(run())
