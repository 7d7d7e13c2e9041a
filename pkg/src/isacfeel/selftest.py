"""Fast oracle checks run by ``isacfeel selftest``.

Each check builds its own small random instances, compares against an
independent computation and returns ``(name, passed, detail)``.
"""

import dataclasses
import itertools
import os
import tempfile

import numpy as np

from .aggregation import aggregation_error, aggregation_weights, zf_coordination, zf_residual
from .channel import draw_channels
from .config import SystemConfig
from .numerics import make_rng, sample_complex_gaussian
from .scheduler import (
    InfeasiblePrecoderError,
    check_constraints,
    overall_penalty_matrix,
    penalties,
    schedule_mp,
    solve_precoder_m1,
    solve_receiver_m2,
)
from .sensing import (
    UplinkScaling,
    crb,
    effective_noise_cov,
    fisher_information,
    ml_estimate_G,
    pilot_symbols,
    whitening_filter,
)

__all__ = ["CHECKS", "run_selftest"]


def _random_scaling(rng, K, active=None):
    b = sample_complex_gaussian(rng, (K,), 1e-3)
    if active is not None:
        mask = np.zeros(K, bool)
        mask[active] = True
        b[~mask] = 0
    return UplinkScaling(b=b, eta=1.0, phi=np.zeros(K))


def check_whitening(rng):
    worst = 0.0
    for _ in range(20):
        F = sample_complex_gaussian(rng, (8, 20))
        R = effective_noise_cov(F, _random_scaling(rng, 20), 1.0, 1e-2)
        T = whitening_filter(R)
        worst = max(worst, np.linalg.norm(T @ R @ T.conj().T - np.eye(8)))
    return worst <= 1e-9, f"max ||T R T^H - I|| = {worst:.2e}"


def check_noiseless_ml(rng):
    worst = 0.0
    for _ in range(20):
        G = sample_complex_gaussian(rng, (4, 4))
        W = sample_complex_gaussian(rng, (4, 12))
        x = pilot_symbols(12, rng)
        G_hat = ml_estimate_G(G @ (W * x), W, x, np.eye(4))
        worst = max(worst, np.linalg.norm(G_hat - G) / np.linalg.norm(G))
    return worst <= 1e-9, f"max relative error = {worst:.2e}"


def check_fisher(rng):
    worst = 0.0
    for _ in range(10):
        F = sample_complex_gaussian(rng, (3, 5))
        R = effective_noise_cov(F, _random_scaling(rng, 5), 1.0, 0.5)
        W = sample_complex_gaussian(rng, (3, 8))
        direct = np.real(np.trace(np.linalg.inv(fisher_information(R, W))))
        worst = max(worst, abs(direct - crb(R, W)) / crb(R, W))
    return worst <= 1e-9, f"max relative mismatch = {worst:.2e}"


def check_zero_forcing(rng):
    cfg = SystemConfig()
    worst = 0.0
    for _ in range(50):
        real = draw_channels(cfg, rng)
        S = sorted(rng.choice(cfg.K, size=int(rng.integers(1, cfg.K + 1)), replace=False))
        c = sample_complex_gaussian(rng, (cfg.N,))
        c /= np.linalg.norm(c)
        phi = aggregation_weights(np.ones(cfg.K), S)
        scaling = zf_coordination(real.F, c, phi, S, cfg.P_u)
        over = np.max(np.abs(scaling.b) ** 2) / cfg.P_u - 1
        if over > 1e-12:
            return False, f"power cap exceeded by {over:.2e}"
        worst = max(worst, zf_residual(real.F, c, scaling))
    return worst <= 1e-12, f"max residual = {worst:.2e}"


def check_precoder(rng):
    cfg = SystemConfig()
    worst_gap, worst_iso = 0.0, 0.0
    for i in range(20):
        real = draw_channels(cfg, rng)
        gamma = 0.0 if i % 2 else float(rng.uniform(0.5, 1.5)) * 1.3e-11
        try:
            sol = solve_precoder_m1(real.Hdl, dataclasses.replace(cfg, gamma=gamma))
        except InfeasiblePrecoderError:
            continue
        worst_gap = max(worst_gap, sol.gap)
        if gamma == 0.0:
            iso = cfg.L * cfg.P_d / cfg.N * np.eye(cfg.N)
            worst_iso = max(worst_iso, np.max(np.abs(sol.Q - iso)))
    ok = worst_gap <= 1e-6 and worst_iso <= 1e-9
    return ok, f"max duality gap = {worst_gap:.2e}, max isotropic deviation = {worst_iso:.2e}"


def check_penalty_equivalence(rng):
    cfg = SystemConfig(K=8)
    for _ in range(100):
        real = draw_channels(cfg, rng)
        size = int(rng.integers(1, 9))
        S = list(range(size))
        c = sample_complex_gaussian(rng, (cfg.N,))
        c /= np.linalg.norm(c)
        phi = aggregation_weights(rng.uniform(1, 5, cfg.K), S)
        eps = float(rng.uniform(10, 2000))
        C = penalties(c, real.F, phi, S, dataclasses.replace(cfg, eps0=eps))
        best = max(sum(t * v for t, v in zip(tau, C)) for tau in itertools.product((0, 1), repeat=size))
        if (best <= 0) != (C.max() <= 0):
            return False, "counterexample found"
        agg_ok = aggregation_error(c, S, real.F, phi, dataclasses.replace(cfg, eps0=eps)) <= eps
        if agg_ok != (C.max() <= 0):
            return False, "penalty signs disagree with the aggregation error"
    return True, "100 instances, no counterexample"


def check_receiver(rng):
    cfg = SystemConfig()
    for _ in range(10):
        real = draw_channels(cfg, rng)
        S = list(range(cfg.K))
        phi = aggregation_weights(np.ones(cfg.K), S)
        tau = rng.uniform(0, 1, cfg.K)
        A = overall_penalty_matrix(real.F, S, phi, tau, cfg)
        u = solve_receiver_m2(real.F, S, phi, tau, cfg)
        lam_min = np.linalg.eigvalsh(A)[0]
        val = np.real(u.conj() @ A @ u)
        V = sample_complex_gaussian(rng, (200, cfg.N))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        sampled = np.real(np.einsum("ij,jk,ik->i", V.conj(), A, V))
        if abs(val - lam_min) > 1e-10 * max(1.0, abs(lam_min)) or sampled.min() < val - 1e-12 * abs(val):
            return False, "sampled vector beats the eigen-receiver"
    return True, "10 instances x 200 samples"


def check_schedule(rng):
    cfg = SystemConfig(K=8)
    checked = 0
    for _ in range(20):
        real = draw_channels(cfg, rng)
        out = schedule_mp(real, cfg)
        if not out.feasible:
            continue
        flags = check_constraints(out, real, cfg)
        if not all(flags.values()):
            return False, f"feasible outcome fails re-check: {flags}"
        sizes = [rec["size"] for rec in out.trace] + [len(out.S)]
        if any(a - b != 1 for a, b in zip(sizes, sizes[1:])):
            return False, "active set did not shrink by one per iteration"
        checked += 1
    return True, f"{checked} feasible outcomes re-verified"


def check_sweep_determinism(rng):
    from .harness import ExperimentSpec, run_experiment

    with tempfile.TemporaryDirectory() as tmp:
        paths = [os.path.join(tmp, f"run{i}.csv") for i in range(2)]
        for path in paths:
            spec = ExperimentSpec(sweep="eps0", grid=(130.0, 320.0), trials=3,
                                  policies=("mp", "greedy", "random"), out=path,
                                  system=SystemConfig(seed=11), sensing_trials=2)
            run_experiment(spec, plot=False)
        data = [open(p, "rb").read() for p in paths]
    return data[0] == data[1], f"{len(data[0])} bytes compared"


CHECKS = (
    ("whitening", check_whitening),
    ("noiseless-ml", check_noiseless_ml),
    ("fisher-trace", check_fisher),
    ("zero-forcing", check_zero_forcing),
    ("precoder-kkt", check_precoder),
    ("penalty-equivalence", check_penalty_equivalence),
    ("eigen-receiver", check_receiver),
    ("schedule-recheck", check_schedule),
    ("sweep-determinism", check_sweep_determinism),
)


def run_selftest(seed=0, echo=print):
    """Run every check; returns True if all pass."""
    ok = True
    for i, (name, fn) in enumerate(CHECKS):
        passed, detail = fn(make_rng(seed, i))
        echo(f"{'PASS' if passed else 'FAIL'}  {name:20s} {detail}")
        ok &= bool(passed)
    return ok
