"""Desk-scale over-the-air federated learning with integrated sensing.

Each round schedules devices, runs local gradient descent on every device,
sends the normalised model deltas of the scheduled devices through the
simulated uplink (echo, interference, noise, SIC) and applies the
aggregate to the global model. The task is L2-regularised softmax
regression, which is strongly convex with a Lipschitz gradient.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .aggregation import aggregation_weights, zf_coordination
from .channel import draw_channels
from .numerics import ValidationError, make_rng, sample_complex_gaussian
from .scheduler import (
    InfeasiblePrecoderError,
    precoder_from_covariance,
    schedule_baseline,
    schedule_mp,
    solve_precoder_m1,
)
from .sensing import effective_noise_cov, estimate_from_block, pilot_symbols

__all__ = [
    "Dataset",
    "DataPartition",
    "TrainState",
    "GapReport",
    "make_synthetic",
    "train_test_split",
    "write_flat_binary",
    "load_flat_binary",
    "load_idx",
    "load_idx_dataset",
    "partition_dirichlet",
    "loss_and_grad",
    "accuracy",
    "lipschitz_constant",
    "optimal_loss",
    "local_update",
    "chunk_blocks",
    "unchunk_blocks",
    "ota_transmit",
    "init_state",
    "run_feel_round",
    "train",
    "gap_bound_check",
]

FLAT_MAGIC = b"ISFL"


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return self.y.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


@dataclass(frozen=True)
class DataPartition:
    shards: tuple
    sizes: np.ndarray

    @property
    def K(self):
        return len(self.shards)


@dataclass
class TrainState:
    """Global model and per-round histories.

    ``trace`` holds one dict per round with the scheduled set size, the
    fallback flag, the aggregation error bound and the sensing error.
    """

    r: np.ndarray
    round: int = 0
    loss_history: list = field(default_factory=list)
    acc_history: list = field(default_factory=list)
    gap_history: list = field(default_factory=list)
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class GapReport:
    fraction_holding: float
    holds: np.ndarray
    fixed_point: float
    final_gap: float
    rate: float


# data ------------------------------------------------------------------

def make_synthetic(n_samples, n_features, n_classes, class_sep, rng) -> Dataset:
    """Gaussian mixture with unit-covariance classes and centred, orthogonal means."""
    if n_classes > n_features:
        raise ValidationError("n_classes must not exceed n_features for the synthetic task")
    basis, _ = np.linalg.qr(rng.standard_normal((n_features, n_classes)))
    means = class_sep * basis.T
    means -= means.mean(axis=0)
    y = rng.integers(n_classes, size=n_samples)
    X = means[y] + rng.standard_normal((n_samples, n_features))
    return Dataset(X=X, y=y, n_classes=n_classes)


def train_test_split(data: Dataset, test_fraction, rng):
    perm = rng.permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(perm[n_test:]), data.subset(perm[:n_test])


def write_flat_binary(path, data: Dataset):
    """Write ``magic, n, d, classes`` (uint32 LE) then float32 features and int32 labels."""
    X = np.ascontiguousarray(data.X, dtype="<f4")
    y = np.ascontiguousarray(data.y, dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(FLAT_MAGIC)
        fh.write(struct.pack("<III", X.shape[0], X.shape[1], data.n_classes))
        fh.write(X.tobytes())
        fh.write(y.tobytes())


def load_flat_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FLAT_MAGIC:
        raise ValidationError(f"{path}: bad magic {raw[:4]!r}, expected {FLAT_MAGIC!r}")
    n, d, classes = struct.unpack_from("<III", raw, 4)
    offset = 16
    expected = offset + 4 * n * d + 4 * n
    if len(raw) != expected:
        raise ValidationError(f"{path}: size {len(raw)} bytes does not match header ({expected})")
    X = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d).astype(float)
    y = np.frombuffer(raw, dtype="<i4", count=n, offset=offset + 4 * n * d).astype(int)
    if n and (y.min() < 0 or y.max() >= classes):
        raise ValidationError(f"{path}: labels outside [0, {classes})")
    return Dataset(X=X, y=y, n_classes=int(classes))


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def load_idx(path):
    """Read an IDX array (big-endian header, as used by MNIST-style files)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise ValidationError(f"{path}: not an IDX file")
    ndim = raw[3]
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    dtype = np.dtype(_IDX_TYPES[raw[2]])
    count = int(np.prod(dims)) if dims else 1
    offset = 4 + 4 * ndim
    if len(raw) != offset + count * dtype.itemsize:
        raise ValidationError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(dims)


def load_idx_dataset(images_path, labels_path) -> Dataset:
    """Flatten IDX images to features in [0, 1] and pair them with IDX labels."""
    images = load_idx(images_path)
    labels = load_idx(labels_path).astype(int)
    if images.shape[0] != labels.shape[0]:
        raise ValidationError("image and label counts differ")
    X = images.reshape(images.shape[0], -1).astype(float)
    if images.dtype.kind == "u":
        X /= 255.0
    return Dataset(X=X, y=labels, n_classes=int(labels.max()) + 1)


def partition_dirichlet(data: Dataset, K, alpha_dir, rng) -> DataPartition:
    """Split ``data`` into K disjoint shards with Dirichlet-distributed sizes.

    Every device first gets one sample; the remaining ``|D| - K`` samples are
    shared in proportion to a Dirichlet(alpha_dir) draw with largest-remainder
    rounding, so the sizes sum to ``|D|`` exactly.
    """
    n = len(data)
    if not alpha_dir > 0:
        raise ValidationError("alpha_dir must be positive")
    if K > n:
        raise ValidationError(f"cannot split {n} samples over {K} devices")
    props = rng.dirichlet(np.full(K, float(alpha_dir)))
    quota = props * (n - K)
    sizes = np.floor(quota).astype(int)
    short = (n - K) - sizes.sum()
    order = np.argsort(-(quota - sizes), kind="stable")
    sizes[order[:short]] += 1
    sizes += 1
    perm = rng.permutation(n)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = tuple(data.subset(perm[bounds[k]:bounds[k + 1]]) for k in range(K))
    return DataPartition(shards=shards, sizes=sizes)


# model -----------------------------------------------------------------

def _logits(r, X, n_classes):
    return X @ r.reshape(X.shape[1], n_classes)


def loss_and_grad(r, data: Dataset, reg):
    """Mean cross-entropy of softmax regression plus ``reg/2 ||r||^2``, and its gradient."""
    Z = _logits(r, data.X, data.n_classes)
    Z = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=1))
    n = len(data)
    P = np.exp(Z - logsum[:, None])
    loss = np.mean(logsum - Z[np.arange(n), data.y]) + 0.5 * reg * (r @ r)
    P[np.arange(n), data.y] -= 1.0
    grad = (data.X.T @ P).ravel() / n + reg * r
    return float(loss), grad


def accuracy(r, data: Dataset):
    return float(np.mean(np.argmax(_logits(r, data.X, data.n_classes), axis=1) == data.y))


def lipschitz_constant(data: Dataset, reg):
    """Gradient Lipschitz bound ``lambda_max(X^T X / n) / 2 + reg``."""
    gram = data.X.T @ data.X / len(data)
    return float(0.5 * np.linalg.eigvalsh(gram)[-1] + reg)


def optimal_loss(data: Dataset, reg):
    """Centralised optimum of the regularised loss (L-BFGS)."""
    D = data.n_features * data.n_classes
    res = minimize(loss_and_grad, np.zeros(D), args=(data, reg), jac=True, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 2000})
    return float(res.fun), res.x


def local_update(r_global, shard: Dataset, steps, lr, batch, rng, reg=1e-2):
    """Run ``steps`` gradient steps from ``r_global`` on one shard.

    ``batch = 0`` uses the full shard; otherwise each step samples a
    minibatch without replacement.
    """
    if steps < 1:
        raise ValidationError("local steps must be >= 1")
    r = np.array(r_global, dtype=float, copy=True)
    for _ in range(steps):
        if batch and batch < len(shard):
            part = shard.subset(rng.choice(len(shard), size=batch, replace=False))
        else:
            part = shard
        _, g = loss_and_grad(r, part, reg)
        r -= lr * g
    return r


# channel ---------------------------------------------------------------

def chunk_blocks(vec, M):
    """Zero-pad a length-D vector into ``ceil(D/M)`` rows of M symbols."""
    vec = np.asarray(vec, dtype=float)
    blocks = -(-vec.size // M)
    out = np.zeros(blocks * M)
    out[:vec.size] = vec
    return out.reshape(blocks, M)


def unchunk_blocks(blocks, D):
    return np.asarray(blocks).reshape(-1)[:D]


def ota_transmit(symbols, outcome, realization, cfg, rng, sensing="on", noiseless=False):
    """Send per-device real symbol blocks through the uplink and return the aggregate.

    Parameters
    ----------
    symbols : (K, B, M) real
        Normalised symbols; rows of unscheduled devices are ignored.
    outcome : ScheduleOutcome
        Supplies S, W, c and the aggregation weights.
    sensing : {"on", "off", "none", "true"}
        ``"on"`` estimates G on the first L symbols of each block and cancels
        it; ``"off"`` leaves the echo in; ``"none"`` removes the echo
        altogether; ``"true"`` cancels with the exact G.

    Returns
    -------
    agg : (B, M) real
        ``Re(r_hat)`` per symbol.
    sensing_error : float
        Mean ``||G - G_hat||_F^2`` over blocks (nan without estimation).
    """
    F, G = realization.F, realization.G
    N, L, M = cfg.N, cfg.L, symbols.shape[2]
    S, W, c, phi = outcome.S, outcome.W, outcome.c, outcome.phi
    scaling = zf_coordination(F, c, phi, S, cfg.P_u)
    R = effective_noise_cov(F, scaling, cfg.beta_c, cfg.sigma2_ps)
    sigma2 = 0.0 if noiseless else cfg.sigma2_ps
    echo_on = sensing != "none"
    out = np.empty(symbols.shape[1:])
    errors = []
    for blk in range(symbols.shape[1]):
        x = pilot_symbols(L, rng)
        u = symbols[:, blk, :]
        Y = F @ (scaling.b[:, None] * u)
        if sigma2:
            Y = Y + sample_complex_gaussian(rng, (N, M), sigma2)
        echo = G @ (W * x[None, :])
        if echo_on:
            Y[:, :L] += echo
        if sensing == "on":
            G_hat = estimate_from_block(Y[:, :L], W, x, R)
            errors.append(np.sum(np.abs(G_hat - G) ** 2))
        elif sensing == "true":
            G_hat = G
        else:
            G_hat = None
        if G_hat is not None:
            Y[:, :L] -= G_hat @ (W * x[None, :])
        out[blk] = np.real(c.conj() @ Y) / np.sqrt(scaling.eta)
    return out, (float(np.mean(errors)) if errors else float("nan"))


def _fallback_outcome(realization, cfg, sizes, note):
    """Singleton schedule on the strongest uplink channel."""
    from .scheduler import ScheduleOutcome

    F = realization.F
    k = int(np.argmax(np.linalg.norm(F, axis=0)))
    c = F[:, k] / np.linalg.norm(F[:, k])
    try:
        W = solve_precoder_m1(realization.Hdl, cfg).W
    except InfeasiblePrecoderError:
        W = precoder_from_covariance(cfg.P_d * cfg.L / cfg.N * np.eye(cfg.N), cfg.L)
    phi = aggregation_weights(sizes, [k])
    return ScheduleOutcome(S=[k], W=W, c=c, tau=np.zeros(F.shape[1]), feasible=False,
                           crb_value=float("nan"), agg_error=float("nan"), policy="fallback",
                           phi=phi, note=note)


# training loop ---------------------------------------------------------

@dataclass
class FeelSetup:
    """Everything fixed across rounds: data, partition, geometry and reference optimum."""

    train: Dataset
    test: Dataset
    partition: DataPartition
    distances: np.ndarray
    L_lip: float
    L_star: float


def setup_training(cfg, tcfg, rng, data=None):
    """Build data (synthetic unless given), the Dirichlet partition and device geometry."""
    if data is None:
        data = make_synthetic(tcfg.n_samples, tcfg.n_features, tcfg.n_classes, tcfg.class_sep, rng)
    train_set, test_set = train_test_split(data, tcfg.test_fraction, rng)
    partition = partition_dirichlet(train_set, cfg.K, tcfg.alpha_dir, rng)
    distances = rng.uniform(cfg.D_in, cfg.D_out, size=cfg.K)
    L_star, _ = optimal_loss(train_set, tcfg.reg)
    return FeelSetup(train=train_set, test=test_set, partition=partition, distances=distances,
                     L_lip=lipschitz_constant(train_set, tcfg.reg), L_star=L_star)


def init_state(setup: FeelSetup, tcfg) -> TrainState:
    D = setup.train.n_features * setup.train.n_classes
    state = TrainState(r=np.zeros(D))
    _record(state, setup, tcfg)
    return state


def _record(state, setup, tcfg):
    loss, _ = loss_and_grad(state.r, setup.train, tcfg.reg)
    state.loss_history.append(loss)
    state.acc_history.append(accuracy(state.r, setup.test if len(setup.test) else setup.train))
    state.gap_history.append(loss - setup.L_star)


def run_feel_round(state: TrainState, setup: FeelSetup, cfg, tcfg, rng, channel="ota",
                   noiseless=False, policy="mp") -> TrainState:
    """One communication round; returns a new state with histories extended.

    ``channel="perfect"`` replaces the uplink by the exact weighted sum of
    the scheduled devices' updates. ``policy`` selects the scheduler
    (``"mp"``, ``"greedy"`` or ``"random"``).
    """
    partition = setup.partition
    realization = draw_channels(cfg, rng, distances=setup.distances)
    sizes = partition.sizes
    if policy == "mp":
        outcome = schedule_mp(realization, cfg, sizes)
    else:
        outcome = schedule_baseline(realization, cfg, policy, rng=rng, sizes=sizes)
    fallback = not outcome.feasible
    if fallback:
        outcome = _fallback_outcome(realization, cfg, sizes, outcome.note or "scheduler infeasible")
    locals_ = np.stack([
        local_update(state.r, shard, tcfg.local_steps, tcfg.lr, tcfg.batch, rng, tcfg.reg)
        for shard in partition.shards
    ])
    deltas = locals_ - state.r
    S = np.asarray(outcome.S, dtype=int)
    phi = outcome.phi
    sensing_error = float("nan")
    if channel == "perfect":
        agg = phi[S] @ deltas[S]
    else:
        D = deltas.shape[1]
        # common shift and scale keep the superposition linear
        shift = float(phi[S] @ deltas[S].mean(axis=1))
        scale = float(np.max(deltas[S].std(axis=1)))
        scale = scale if scale > 0 else 1.0
        normed = (deltas - shift) / scale
        blocks = np.stack([chunk_blocks(row, cfg.M) for row in normed])
        rx, sensing_error = ota_transmit(blocks, outcome, realization, cfg, rng,
                                         sensing=tcfg.sensing, noiseless=noiseless)
        agg = unchunk_blocks(rx, D) * scale + shift
    new = TrainState(r=state.r + agg, round=state.round + 1,
                     loss_history=list(state.loss_history), acc_history=list(state.acc_history),
                     gap_history=list(state.gap_history), trace=list(state.trace))
    _record(new, setup, tcfg)
    new.trace.append({
        "round": new.round,
        "size": len(S),
        "fallback": fallback,
        "agg_error": outcome.agg_error,
        "crb": outcome.crb_value,
        "sensing_error": sensing_error,
    })
    return new


def train(cfg, tcfg, seed=0, data=None, channel="ota", callback=None, policy="mp"):
    """Full FEEL run; returns ``(state, setup)``.

    Data, partition and device distances come from one seeded stream and the
    per-round channels from another, so runs that differ only in the
    sensing mode or target distance see the same data and fading.
    """
    setup = training_setup_for_seed(cfg, tcfg, seed, data)
    rng = make_rng(seed, 1)
    state = init_state(setup, tcfg)
    for _ in range(tcfg.rounds):
        state = run_feel_round(state, setup, cfg, tcfg, rng, channel=channel, policy=policy)
        if callback is not None:
            callback(state)
    return state, setup


def training_setup_for_seed(cfg, tcfg, seed, data=None):
    return setup_training(cfg, tcfg, make_rng(seed, 0), data)


def gap_bound_check(gap_history, zeta, L_lip, eps0) -> GapReport:
    """Check ``G_{t+1} <= (1 - zeta/L_lip) G_t + eps0/(2 L_lip)`` round by round."""
    gaps = np.asarray(gap_history, dtype=float)
    rate = 1.0 - zeta / L_lip
    slack = eps0 / (2.0 * L_lip)
    # float tolerance for gaps that have converged to the optimum
    tol = 1e-12 * np.maximum(1.0, np.abs(gaps[:-1]))
    holds = gaps[1:] <= rate * gaps[:-1] + slack + tol
    return GapReport(
        fraction_holding=float(np.mean(holds)) if holds.size else 1.0,
        holds=holds,
        fixed_point=eps0 / (2.0 * zeta),
        final_gap=float(gaps[-1]),
        rate=rate,
    )

