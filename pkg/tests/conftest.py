from types import SimpleNamespace

import numpy as np
import pytest

from isacfeel.config import SystemConfig
from isacfeel.numerics import make_rng, sample_complex_gaussian
from isacfeel.scheduler import downlink_gram


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def rng():
    return make_rng(2024)


def random_hermitian(rng, n, scale=1.0):
    A = sample_complex_gaussian(rng, (n, n), scale)
    return (A + A.conj().T) / 2


def random_psd(rng, n, floor=0.1):
    A = sample_complex_gaussian(rng, (n, n))
    return A @ A.conj().T + floor * np.eye(n)


def unit(rng, n):
    v = sample_complex_gaussian(rng, (n,))
    return v / np.linalg.norm(v)


def toy_cfg(gamma=0.0, **kw):
    base = dict(N=2, L=2, P_d=0.5, gamma=gamma, Gamma0=1.0, snr_floor="average")
    base.update(kw)
    return SimpleNamespace(**base)


def grid_optimum(Hdl, cfg, step=1e-2):
    """Exhaustive search over real 2x2 PSD Q = R(t) diag(q, P - q) R(t)^T.

    Both the objective and the SNR average increase with each eigenvalue, so
    the search runs on the full-power line. For each rotation the feasible
    q-interval is exact; q is gridded inside it and its end points are added.
    """
    P = cfg.L * cfg.P_d
    H = downlink_gram(Hdl, cfg.L).real
    best = np.inf
    for t in np.arange(0.0, np.pi, step):
        u = np.array([np.cos(t), np.sin(t)])
        v = np.array([-np.sin(t), np.cos(t)])
        a, b = u @ H @ u, v @ H @ v
        # snr(q) = q a + (P - q) b >= gamma
        lo, hi = 0.0, P
        if abs(a - b) < 1e-300:
            if P * b < cfg.gamma:
                continue
        elif a > b:
            lo = max(lo, (cfg.gamma - P * b) / (a - b))
        else:
            hi = min(hi, (cfg.gamma - P * b) / (a - b))
        if lo >= hi:
            continue
        q = np.concatenate([np.arange(step, P, step * P), [lo, hi, P / 2]])
        q = q[(q >= lo) & (q <= hi) & (q > 0) & (q < P)]
        if q.size:
            best = min(best, np.min(1 / q + 1 / (P - q)))
    return best


def toy_instance(seed):
    rng = make_rng(seed)
    Hdl = rng.standard_normal((2, 3)).astype(complex)
    cfg = toy_cfg()
    P = cfg.L * cfg.P_d
    lam = np.linalg.eigvalsh(downlink_gram(Hdl, cfg.L).real)
    gamma = float(rng.uniform(0.3, 0.97)) * P * lam[-1]
    return Hdl, toy_cfg(gamma=gamma)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
