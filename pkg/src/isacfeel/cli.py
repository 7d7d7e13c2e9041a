"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 infeasible
experiment.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import describe_defaults, load_config, parse_assignments
from .numerics import ValidationError, make_rng

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INFEASIBLE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--seed", type=int, metavar="U64", help="base seed (overrides config)")
    common.add_argument("--out", metavar="PATH", help="output path (CSV for sweep, PNG for train)")
    common.add_argument("--trials", type=int, metavar="N", help="Monte-Carlo trials")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser = _Parser(
        prog="isacfeel",
        description="Over-the-air federated edge learning with integrated sensing.",
        epilog=describe_defaults(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("schedule", parents=[common], help="one scheduling solve with its trace")
    sub.add_parser("sense", parents=[common], help="one sensing trial: CRB vs empirical MSE")
    train = sub.add_parser("train", parents=[common], help="full FEEL run, per-round metrics")
    train.add_argument("--policy", default="mp", choices=("mp", "greedy", "random"))
    sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep to CSV")
    sub.add_parser("selftest", parents=[common], help="run the oracle checks")
    return parser


def _load(args):
    overrides = parse_assignments(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def cmd_schedule(args, system, train, harness):
    from .channel import draw_channels
    from .scheduler import format_trace, schedule_mp

    real = draw_channels(system, make_rng(system.seed, 0))
    out = schedule_mp(real, system)
    print(f"feasible: {out.feasible}")
    print(f"|S|: {len(out.S)} of {system.K}")
    print(f"S: {' '.join(map(str, out.S))}")
    print(f"crb: {out.crb_value:.6e} (threshold {system.Gamma0:.6e})")
    print(f"aggregation error: {out.agg_error:.6e} (threshold {system.eps0:.6e})")
    if out.note:
        print(f"note: {out.note}")
    print(format_trace(out))
    return EXIT_OK if out.feasible else EXIT_INFEASIBLE


def cmd_sense(args, system, train, harness):
    from .aggregation import aggregation_weights, zf_coordination
    from .channel import draw_channels
    from .scheduler import solve_precoder_m1
    from .sensing import crb, effective_noise_cov, empirical_sensing_mse, ml_error_covariance

    rng = make_rng(system.seed, 0)
    real = draw_channels(system, rng)
    W = solve_precoder_m1(real.Hdl, system).W
    S = list(range(system.K))
    c = real.F.sum(axis=1)
    c /= np.linalg.norm(c)
    scaling = zf_coordination(real.F, c, aggregation_weights(np.ones(system.K), S), S, system.P_u)
    R = effective_noise_cov(real.F, scaling, system.beta_c, system.sigma2_ps)
    trials = args.trials or 200
    mse = empirical_sensing_mse(system, real, W, scaling, trials, make_rng(system.seed, 1))
    bound = crb(R, W)
    exact = float(np.real(np.trace(ml_error_covariance(R, W))))
    print(f"trials: {trials}")
    print(f"crb: {bound:.6e}")
    print(f"ml error (closed form): {exact:.6e}")
    print(f"empirical mse: {mse:.6e}")
    print(f"mse / crb: {mse / bound:.4f}")
    return EXIT_OK


def cmd_train(args, system, train, harness):
    from .fedlearn import gap_bound_check
    from .fedlearn import train as run_training
    from .plotting import plot_training

    if args.trials is not None:
        train = dataclasses.replace(train, rounds=args.trials)
    print("round\tsize\tfallback\tloss\taccuracy\tgap")

    def report(state):
        rec = state.trace[-1]
        print(f"{state.round}\t{rec['size']}\t{int(rec['fallback'])}\t{state.loss_history[-1]:.6f}\t"
              f"{state.acc_history[-1]:.4f}\t{state.gap_history[-1]:.6e}")

    state, setup = run_training(system, train, seed=system.seed, callback=report, policy=args.policy)
    rep = gap_bound_check(state.gap_history, train.lr, setup.L_lip, system.eps0)
    print(f"gap recursion holds in {rep.fraction_holding:.1%} of rounds")
    if args.out:
        plot_training(state, args.out)
        print(f"figure: {args.out}")
    return EXIT_OK


def cmd_sweep(args, system, train, harness):
    from .harness import InfeasibleExperimentError, run_experiment, spec_from_harness

    spec = spec_from_harness(system, train, harness, trials=args.trials, out=args.out)
    try:
        rows = run_experiment(spec)
    except InfeasibleExperimentError as exc:
        print(f"infeasible experiment: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"{len(rows)} rows written to {spec.out}")
    print(f"figure: {os.path.splitext(spec.out)[0] + '.png'}")
    return EXIT_OK


def cmd_selftest(args, system, train, harness):
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(seed=system.seed) else EXIT_RUNTIME


COMMANDS = {
    "schedule": cmd_schedule,
    "sense": cmd_sense,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "selftest": cmd_selftest,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    try:
        if args.trials is not None and args.trials < 1:
            raise ValidationError("--trials must be >= 1")
        system, train, harness = _load(args)
        return COMMANDS[args.command](args, system, train, harness)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
