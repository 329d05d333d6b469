"""``epical`` command line: simulate, calibrate, bench, rl.

Every flag can also come from a JSON file given with ``--config``; keys are
the flag names with dashes replaced by underscores, and flags given on the
command line win.  Exit codes: 0 success, 2 usage or validation error,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import EpicalError, UnimplementedByDesign, ValidationError
from .models import ModelKind, ModelSpec
from .objective import CalibrationProblem
from .optim import FitOptions, FitResult, Method, fit, make_x0
from .simulate import (DEFAULT_HORIZON, MIN_TRAIN_DAYS, Dataset, add_noise, find_peak,
                       integrate)

log = logging.getLogger("epical")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    """Bad arguments or inputs detected before any work starts (exit 2)."""


def default_seed() -> int:
    raw = os.environ.get("EPICAL_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"EPICAL_SEED must be an integer, got {raw!r}") from None


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- parser ----------------------------------------------------------------------
def _common(p):
    p.add_argument("--config", metavar="PATH",
                   help="JSON file of option values (keys = flag names with underscores)")
    p.add_argument("--seed", type=int, default=None,
                   help="random seed (integer; default $EPICAL_SEED, else 0)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")


def _model_flags(p):
    p.add_argument("--model", choices=[k.value for k in ModelKind],
                   help="model kind (default sir)")
    p.add_argument("--spec", metavar="PATH", help="model spec JSON; overrides --model/--population")
    p.add_argument("--population", type=int, help="total population N (people, default 10000)")
    p.add_argument("--infected", type=float, help="initial infectious count (people, default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epical", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{simulate,calibrate,bench,rl}")
    sub.required = True

    p = sub.add_parser("simulate", help="integrate a model and write its trajectory CSV")
    _common(p)
    _model_flags(p)
    p.add_argument("--beta", type=float, help="transmission rate (per day)")
    p.add_argument("--gamma", type=float, help="recovery rate (per day)")
    p.add_argument("--mu", type=float, help="death rate (per day; sird, sirvd)")
    p.add_argument("--nu", type=float, help="vaccination rate (per day; sirvd)")
    p.add_argument("--days", type=int, help=f"horizon (days, default {DEFAULT_HORIZON})")
    p.add_argument("--noise-sigma", type=float,
                   help="Gaussian noise std dev (people); > 0 also writes a noisy dataset")
    p.add_argument("--out", metavar="PATH", help="trajectory CSV (default trajectory.csv)")
    p.add_argument("--noisy-out", metavar="PATH",
                   help="noisy dataset CSV (default <out stem>-noisy.csv)")
    p.add_argument("--plot", metavar="PATH", help="also write an SVG line plot")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit model parameters to a dataset CSV with one method")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", metavar="PATH", help="dataset CSV with header day,<compartments>")
    p.add_argument("--method", help="optimizer name: " + ", ".join(m.value for m in Method))
    p.add_argument("--train-days", type=int,
                   help="fit on days [0, train_days) (days; default: days before the I peak)")
    p.add_argument("--fit-compartments", help="comma-separated compartments in the loss (default all observed)")
    p.add_argument("--x0", type=_floats, help="comma-separated start vector (per day rates)")
    p.add_argument("--max-evaluations", type=int, help="objective evaluation budget (count, default 20000)")
    p.add_argument("--tolerance", type=float, help="relative convergence tolerance (dimensionless)")
    p.add_argument("--out", metavar="PATH", help="FitResult JSON (default fit.json)")
    p.add_argument("--plot", metavar="PATH", help="also write an SVG fit plot")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("bench", help="run a scenario grid and write the report set")
    _common(p)
    p.add_argument("--grid", metavar="PATH", help="grid config JSON")
    p.add_argument("--out", metavar="DIR", help="output directory (default bench-out)")
    p.add_argument("--jobs", type=int, help="worker processes (count, default 1)")
    p.add_argument("--no-plots", action="store_true", default=None, help="skip plots/")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("rl", help="train the PPO calibrator on a dataset CSV")
    _common(p)
    _model_flags(p)
    p.add_argument("--data", metavar="PATH", help="dataset CSV with header day,<compartments>")
    p.add_argument("--train-days", type=int,
                   help="training window (days; default: days before the I peak)")
    p.add_argument("--steps", type=int, help="total environment steps (count, default 50000)")
    p.add_argument("--rollout", type=int, help="steps per PPO update (count, default 1024)")
    p.add_argument("--episode-steps", type=int, help="episode length cap (steps, default 200)")
    p.add_argument("--threshold", type=float, help="stop once MAE reaches this (people, default 1)")
    p.add_argument("--step-sizes", type=_floats, help="action increments (per day, default 0.1,0.01)")
    p.add_argument("--reward-window", choices=["full", "train"], help="days scored by the reward (default full)")
    p.add_argument("--learning-rate", type=float, help="Adam step size (dimensionless, default 3e-4)")
    p.add_argument("--warm-start-from", metavar="PATH", help="FitResult JSON whose params start every episode")
    p.add_argument("--guess", type=_floats, help="comma-separated start vector (per day rates)")
    p.add_argument("--out", metavar="PATH", help="TrainingReport JSON (default rl-report.json)")
    p.add_argument("--weights", metavar="PATH", help="policy weights file (default rl-weights.bin)")
    p.set_defaults(handler=cmd_rl)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``, fill gaps from ``--config`` and apply defaults."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        known = set(vars(args)) - {"command", "handler", "config"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"{path}: unknown config keys {unknown}")
        for k, v in data.items():
            if getattr(args, k) is None or (k == "verbose" and not args.verbose):
                setattr(args, k, v)
    args.seed_explicit = args.seed is not None or bool(os.environ.get("EPICAL_SEED"))
    if args.seed is None:
        args.seed = default_seed()
    return args


# -- shared helpers ---------------------------------------------------------------
def _spec(args) -> ModelSpec:
    if getattr(args, "spec", None):
        path = Path(args.spec)
        if not path.is_file():
            raise UsageError(f"model spec not found: {path}")
        return ModelSpec.load(path)
    return ModelSpec.default(ModelKind(args.model or "sir"), args.population or 10_000,
                             1.0 if args.infected is None else args.infected)


def _dataset(args) -> Dataset:
    if not args.data:
        raise UsageError("--data is required")
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"dataset not found: {path}")
    return Dataset.from_csv(path)


def _train_days(args, data: Dataset) -> int:
    if args.train_days is not None:
        if not MIN_TRAIN_DAYS <= args.train_days <= data.horizon:
            raise ValidationError(
                f"--train-days must lie in [{MIN_TRAIN_DAYS}, {data.horizon}], got {args.train_days}")
        return int(args.train_days)
    if "I" not in data.observed and not any(s.startswith("I_") for s in data.observed):
        raise ValidationError("no I column to locate the peak; pass --train-days")
    cols = [i for i, s in enumerate(data.observed) if s == "I" or s.startswith("I_")]
    peak = int(np.argmax(data.values[:, cols].sum(axis=1)))
    if peak < MIN_TRAIN_DAYS:
        raise ValidationError(f"observed I peaks on day {peak}; pass --train-days")
    return peak


def _problem(args, spec, data) -> CalibrationProblem:
    fit_comps = None
    if getattr(args, "fit_compartments", None):
        fit_comps = [c.strip() for c in str(args.fit_compartments).split(",") if c.strip()]
    return CalibrationProblem(spec, data.with_cutoff(_train_days(args, data)), fit_compartments=fit_comps)


# -- subcommands ------------------------------------------------------------------
def cmd_simulate(args) -> int:
    spec = _spec(args)
    given = {"beta": args.beta, "gamma": args.gamma, "mu": args.mu, "nu": args.nu}
    extra = [k for k, v in given.items() if v is not None and k not in spec.param_names]
    if extra:
        raise ValidationError(f"{spec.kind.value} has no parameter(s) {extra}")
    missing = [n for n in spec.param_names if given.get(n) is None]
    if missing:
        raise ValidationError(f"missing rate(s) for {spec.kind.value}: {missing}")
    params = [given[n] for n in spec.param_names]
    days = DEFAULT_HORIZON if args.days is None else args.days
    traj = integrate(spec, params, days)
    out = Path(args.out or "trajectory.csv")
    traj.to_csv(out)
    print(f"wrote {out} ({days + 1} days)")
    try:
        split = find_peak(traj, "I")
        print(f"peak day of I: {split.peak_day}; low-data cutoff {split.low_cutoff}, "
              f"high-data cutoff {split.high_cutoff}")
    except EpicalError as exc:
        print(f"no usable I peak: {exc}")
    sigma = args.noise_sigma or 0.0
    if sigma < 0:
        raise ValidationError("--noise-sigma must be >= 0")
    if sigma > 0:
        noisy = add_noise(traj, sigma, args.seed)
        npath = Path(args.noisy_out or out.with_name(out.stem + "-noisy.csv"))
        noisy.to_csv(npath)
        print(f"wrote {npath} (sigma {sigma:g} people, seed {args.seed}, {noisy.clamped} values clamped at 0)")
    if args.plot:
        from .bench.report import render_series_plot
        comps = spec.kind.compartments
        series = {c: traj.values[:, spec.slot_indices(c)].sum(axis=1) for c in comps}
        render_series_plot(series, args.plot, f"{spec.kind.value.upper()} trajectory")
        print(f"wrote {args.plot}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    if not args.method:
        raise UsageError("--method is required")
    method = Method.parse(args.method)
    spec = _spec(args)
    problem = _problem(args, spec, _dataset(args))
    overrides = {"seed": args.seed}
    if args.max_evaluations is not None:
        overrides["max_evaluations"] = args.max_evaluations
    if args.tolerance is not None:
        overrides["tolerance"] = args.tolerance
    options = FitOptions(**overrides)
    if args.x0 is not None:
        x0 = make_x0(problem, "given", given=args.x0)
    else:
        x0 = make_x0(problem, "seeded-uniform", args.seed)
    res = fit(problem, method, x0, options)
    out = Path(args.out or "fit.json")
    payload = res.to_dict()
    payload["param_names"] = list(spec.param_names)
    payload["train_days"] = problem.train_days
    _dump_json(payload, out)
    values = ", ".join(f"{n}={v:.6g}" for n, v in zip(spec.param_names, res.params))
    print(f"{method.display}: {values}")
    print(f"MAE (full horizon) {res.mae_full_horizon:.6g} people; status {res.status.value}; "
          f"{res.evaluations} evaluations")
    print(f"wrote {out}")
    if args.plot:
        from .bench.report import render_fit_plot
        render_fit_plot(problem, res, args.plot)
        print(f"wrote {args.plot}")
    return EXIT_OK if res.status.value != "PenaltyRegion" else EXIT_RUNTIME


def cmd_bench(args) -> int:
    from .bench import load_grid, run_grid, write_report
    if not args.grid:
        raise UsageError("--grid is required")
    path = Path(args.grid)
    if not path.is_file():
        raise UsageError(f"grid config not found: {path}")
    with open(path) as fh:
        data = json.load(fh)
    if not data.get("scenarios"):
        raise ValidationError(f"{path}: the grid has no scenarios")
    scenarios, grid_seed = load_grid(data)
    seed = args.seed if args.seed_explicit else grid_seed
    jobs = args.jobs or 1
    if jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    report = run_grid(scenarios, jobs, seed)
    out = Path(args.out or "bench-out")
    write_report(report, out, plots=not args.no_plots)
    for sc in report.scenarios:
        top = report.top3(sc["name"])
        print(f"{sc['name']}: {', '.join(top) if top else 'no successful fits'}")
    print(f"wrote {out}/")
    failed = report.failed_scenarios()
    if failed:
        print(f"scenarios without a successful fit: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_rl(args) -> int:
    from .rl import CalibEnv, PolicyNet, PpoConfig, train
    spec = _spec(args)
    problem = _problem(args, spec, _dataset(args))
    guess = args.guess
    if args.warm_start_from:
        wpath = Path(args.warm_start_from)
        if not wpath.is_file():
            raise UsageError(f"warm-start file not found: {wpath}")
        guess = FitResult.from_dict(json.loads(wpath.read_text())).params
    if guess is not None and len(guess) != problem.n_params:
        raise ValidationError(f"start vector needs {problem.n_params} values, got {len(guess)}")
    env = CalibEnv(problem, args.step_sizes or (0.1, 0.01), args.episode_steps or 200,
                   1.0 if args.threshold is None else args.threshold,
                   args.reward_window or "full", seed=args.seed)
    cfg = {"seed": args.seed}
    if args.rollout is not None:
        cfg["rollout_steps"] = args.rollout
    if args.learning_rate is not None:
        cfg["learning_rate"] = args.learning_rate
    config = PpoConfig(**cfg)
    steps = 50_000 if args.steps is None else args.steps
    policy = PolicyNet(env.n_params, env.n_actions, config.hidden, seed=args.seed)
    mode = "from-guess" if guess is not None else "random-uniform"
    report = train(env, policy, config, steps, reset_mode=mode, guess=guess)
    out = Path(args.out or "rl-report.json")
    report.to_json(out)
    weights = Path(args.weights or "rl-weights.bin")
    policy.save(weights)
    values = ", ".join(f"{n}={v:.6g}" for n, v in zip(spec.param_names, report.best_params))
    print(f"best: {values}; MAE {report.best_mae:.6g} people (start {report.initial_mae:.6g}); "
          f"{report.steps} steps, {report.updates} updates")
    print(f"wrote {out} and {weights}")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:   # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"epical: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(int(args.verbose or 0), 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except UnimplementedByDesign as exc:
        print(f"epical: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ValidationError) as exc:
        print(f"epical: error: {exc}", file=sys.stderr)
        for v in getattr(exc, "violations", ()):
            print(f"  - {v}", file=sys.stderr)
        return EXIT_USAGE
    except (EpicalError, OSError, ArithmeticError) as exc:
        print(f"epical: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:   # enum lookups and similar bad input values
        print(f"epical: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
