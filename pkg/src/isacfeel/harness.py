"""Monte-Carlo sweeps over one system parameter, written to CSV.

Every trial draws its channels from the stream ``(seed, trial)`` and every
policy gets its own stream ``(seed, trial, policy)``, so all policies are
compared on identical channel draws. Results are sorted by (sweep value,
policy, trial) before aggregation, so the CSV does not depend on the
number of workers.
"""

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .channel import draw_channels
from .config import SystemConfig, TrainConfig, apply_overrides
from .numerics import ValidationError, make_rng
from .scheduler import schedule_baseline, schedule_mp
from .sensing import empirical_sensing_mse

__all__ = [
    "SWEEP_VARIABLES",
    "POLICIES",
    "ExperimentSpec",
    "ResultRow",
    "TrialResult",
    "InfeasibleExperimentError",
    "spec_from_harness",
    "run_trial",
    "run_experiment",
    "format_csv",
]

SWEEP_VARIABLES = ("eps0", "Gamma0", "gamma", "d_target", "N", "K")
POLICIES = ("mp", "greedy", "random")
_POLICY_CODE = {name: i for i, name in enumerate(POLICIES)}


class InfeasibleExperimentError(RuntimeError):
    """No trial at any grid point produced a feasible schedule."""


@dataclass(frozen=True)
class ExperimentSpec:
    sweep: str
    grid: tuple
    trials: int
    policies: tuple
    out: str
    system: SystemConfig
    train: TrainConfig = None
    run_training: bool = False
    sensing_trials: int = 10
    workers: int = 1

    def __post_init__(self):
        bad = []
        if self.sweep not in SWEEP_VARIABLES:
            bad.append(f"sweep ({self.sweep!r} not in {', '.join(SWEEP_VARIABLES)})")
        if not self.grid:
            bad.append("grid (empty)")
        elif list(self.grid) != sorted(self.grid):
            bad.append("grid (not sorted)")
        if self.trials < 1:
            bad.append("trials (must be >= 1)")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown or not self.policies:
            bad.append(f"policies ({', '.join(unknown) or 'empty'})")
        if self.sensing_trials < 0:
            bad.append("sensing_trials")
        if self.workers < 1:
            bad.append("workers")
        if bad:
            raise ValidationError("invalid experiment: " + ", ".join(bad))


@dataclass(frozen=True)
class ResultRow:
    sweep_value: float
    policy: str
    mean_size: float
    mean_crb: float
    mean_agg_error: float
    mean_sensing_mse: float
    final_accuracy: float
    final_loss: float
    trials: int
    se_size: float
    se_crb: float
    se_agg_error: float
    se_sensing_mse: float
    se_accuracy: float
    se_loss: float


@dataclass(frozen=True)
class TrialResult:
    value: float
    policy: str
    trial: int
    size: int
    feasible: bool
    crb: float
    agg_error: float
    sensing_mse: float
    accuracy: float
    loss: float


def _parse_bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def spec_from_harness(system, train, harness, trials=None, out=None):
    """Build an ``ExperimentSpec`` from the ``[harness]`` section of a config.

    Keys: ``sweep``, ``grid`` (comma separated), ``trials``, ``policies``,
    ``out``, ``train``, ``sensing_trials``, ``workers``.
    """
    bad = []
    sweep = harness.get("sweep", "eps0").strip()
    try:
        grid = tuple(float(v) for v in harness.get("grid", str(getattr(system, sweep, ""))).split(",")
                     if v.strip())
    except ValueError:
        grid = ()
        bad.append("grid (cannot parse)")
    try:
        n_trials = int(trials if trials is not None else harness.get("trials", 100))
        workers = int(harness.get("workers", 1))
        sensing_trials = int(harness.get("sensing_trials", 10))
    except ValueError:
        raise ValidationError("invalid experiment: trials, workers and sensing_trials must be integers")
    if bad:
        raise ValidationError("invalid experiment: " + ", ".join(bad))
    policies = tuple(p.strip() for p in harness.get("policies", ",".join(POLICIES)).split(",") if p.strip())
    return ExperimentSpec(
        sweep=sweep, grid=grid, trials=n_trials, policies=policies,
        out=out or harness.get("out", "sweep.csv"), system=system, train=train,
        run_training=_parse_bool(harness.get("train", "false")),
        sensing_trials=sensing_trials, workers=workers,
    )


def _config_at(spec, value):
    text = str(int(value)) if spec.sweep in ("N", "K") else repr(float(value))
    system, train = apply_overrides(spec.system, spec.train or TrainConfig(), {spec.sweep: text})
    return system, train


def run_trial(spec: ExperimentSpec, value, trial):
    """All policies on one channel draw; returns a list of ``TrialResult``."""
    from . import fedlearn

    cfg, tcfg = _config_at(spec, value)
    seed = cfg.seed
    realization = draw_channels(cfg, make_rng(seed, trial))
    results = []
    for policy in spec.policies:
        prng = make_rng(seed, trial, _POLICY_CODE[policy])
        if policy == "mp":
            outcome = schedule_mp(realization, cfg)
        else:
            outcome = schedule_baseline(realization, cfg, policy, rng=prng)
        crb = outcome.crb_value if outcome.feasible else float("nan")
        err = outcome.agg_error if outcome.feasible else float("nan")
        sensing = float("nan")
        if outcome.feasible and spec.sensing_trials:
            sensing = empirical_sensing_mse(cfg, realization, outcome.W, outcome.scaling,
                                            spec.sensing_trials, prng, normalized=True)
        acc = loss = float("nan")
        if spec.run_training:
            state, _ = fedlearn.train(cfg, tcfg, seed=int(make_rng(seed, trial).integers(2**63)),
                                      policy=policy)
            acc, loss = state.acc_history[-1], state.loss_history[-1]
        results.append(TrialResult(value=float(value), policy=policy, trial=trial,
                                   size=len(outcome.S) if outcome.feasible else 0,
                                   feasible=outcome.feasible, crb=crb, agg_error=err,
                                   sensing_mse=sensing, accuracy=acc, loss=loss))
    return results


def _run_point(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def _mean_se(values):
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    if arr.size == 0:
        return float("nan"), float("nan")
    se = float(arr.std(ddof=1) / np.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


def _summarize(value, policy, results):
    size, se_size = _mean_se([r.size for r in results])
    crb, se_crb = _mean_se([r.crb for r in results])
    err, se_err = _mean_se([r.agg_error for r in results])
    sens, se_sens = _mean_se([r.sensing_mse for r in results])
    acc, se_acc = _mean_se([r.accuracy for r in results])
    loss, se_loss = _mean_se([r.loss for r in results])
    return ResultRow(sweep_value=value, policy=policy, mean_size=size, mean_crb=crb,
                     mean_agg_error=err, mean_sensing_mse=sens, final_accuracy=acc,
                     final_loss=loss, trials=len(results), se_size=se_size, se_crb=se_crb,
                     se_agg_error=se_err, se_sensing_mse=se_sens, se_accuracy=se_acc,
                     se_loss=se_loss)


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "nan" if not np.isfinite(v) else f"{v:.10g}"


def format_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in fields(ResultRow)])
    for row in rows:
        writer.writerow([_fmt(getattr(row, f.name)) for f in fields(ResultRow)])
    return buf.getvalue()


def run_experiment(spec: ExperimentSpec, plot=True):
    """Run the sweep, write the CSV (and a PNG next to it) and return the rows.

    Raises
    ------
    OSError
        If the output path is not writable.
    InfeasibleExperimentError
        After writing the CSV, if no trial anywhere was feasible.
    """
    out_dir = os.path.dirname(os.path.abspath(spec.out))
    if not os.path.isdir(out_dir):
        raise OSError(f"output directory does not exist: {out_dir}")
    jobs = [(spec, value, trial) for value in spec.grid for trial in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            batches = list(pool.map(_run_point, jobs, chunksize=max(1, len(jobs) // (4 * spec.workers))))
    else:
        batches = [_run_point(job) for job in jobs]
    results = sorted((r for batch in batches for r in batch),
                     key=lambda r: (r.value, spec.policies.index(r.policy), r.trial))
    rows = []
    for value in spec.grid:
        for policy in spec.policies:
            subset = [r for r in results if r.value == float(value) and r.policy == policy]
            rows.append(_summarize(float(value), policy, subset))
    with open(spec.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(rows))
    if plot:
        from .plotting import plot_sweep

        plot_sweep(rows, spec.sweep, os.path.splitext(spec.out)[0] + ".png")
    if not any(r.feasible for r in results):
        raise InfeasibleExperimentError(f"no feasible schedule in any of {len(results)} trials; "
                                        f"results written to {spec.out}")
    return rows

