"""Joint device scheduling, downlink precoding and receive beamforming.

The outer loop starts from all K devices and removes one device per
iteration until both the sensing constraint (CRB <= Gamma0) and the
aggregation constraint (E <= eps0) hold. The precoder is the CRB-optimal
covariance under the power and downlink-SNR constraints and is computed
once; the receiver is the minimum-eigenvalue eigenvector of the weighted
penalty matrix and is recomputed each iteration.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .aggregation import OrthogonalDeviceError, aggregation_error, aggregation_weights, zf_coordination
from .numerics import ValidationError, hermitian_eig, hermitize
from .sensing import UplinkScaling, effective_noise_cov

__all__ = [
    "InfeasiblePrecoderError",
    "PrecoderSolution",
    "ScheduleOutcome",
    "downlink_gram",
    "solve_precoder_m1",
    "precoder_from_covariance",
    "feasibility_gate_precoder",
    "penalty_xi",
    "penalties",
    "penalty_ck",
    "overall_penalty_matrix",
    "solve_receiver_m2",
    "selection_metric",
    "schedule_mp",
    "schedule_baseline",
    "check_constraints",
    "format_trace",
]


class InfeasiblePrecoderError(ValidationError):
    """The downlink SNR floor cannot be met within the power budget."""

    def __init__(self, gamma, max_floor):
        super().__init__(f"SNR floor gamma={gamma:.6e} is unreachable; "
                         f"maximum attainable floor is {max_floor:.6e}")
        self.gamma = gamma
        self.max_floor = max_floor


@dataclass(frozen=True)
class PrecoderSolution:
    """Optimal transmit covariance ``Q`` and a precoder ``W`` with ``W W^H = Q``.

    ``objective`` is ``tr(Q^{-1})``; ``dual_value`` the dual function at the
    returned multipliers, so ``gap`` certifies optimality.
    """

    Q: np.ndarray
    W: np.ndarray
    objective: float
    dual_value: float
    mu: float
    nu: float

    @property
    def gap(self):
        return abs(self.objective - self.dual_value) / abs(self.objective)

    @property
    def trace_inv(self):
        return self.objective


@dataclass
class ScheduleOutcome:
    S: list
    W: np.ndarray
    c: np.ndarray
    tau: np.ndarray
    feasible: bool
    crb_value: float
    agg_error: float
    policy: str = "mp"
    phi: np.ndarray = None
    scaling: UplinkScaling = None
    precoder: PrecoderSolution = None
    trace: list = field(default_factory=list)
    note: str = ""

    @property
    def size(self):
        return len(self.S)


def downlink_gram(Hdl, L):
    """``H = (1/(K L)) sum_k h_k^* h_k^T`` so the SNR-scaling average is ``tr(H Q)``."""
    Hdl = np.asarray(Hdl, dtype=complex)
    K = Hdl.shape[1]
    return hermitize(Hdl.conj() @ Hdl.T / (K * L))


def precoder_from_covariance(Q, L):
    """``W = Q^{1/2} V`` with V the first N rows of the unitary L-point DFT."""
    values, vectors = hermitian_eig(Q)
    root = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.conj().T
    N = Q.shape[0]
    V = np.fft.fft(np.eye(L))[:N] / np.sqrt(L)
    return root @ V


def _powers(nu, t, gaps):
    # q_i = (mu - nu lambda_i)^{-1/2} with mu = nu lambda_max + t
    return (t + nu * gaps) ** -0.5


def _solve_mu(nu, gaps, power, scale):
    """Find t > 0 so that the power constraint is active for this nu."""
    def excess(log_t):
        return np.sum(_powers(nu, np.exp(log_t), gaps)) - power

    hi = np.log(scale)
    lo = hi - 80.0
    return np.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500))


def solve_precoder_m1(Hdl, cfg) -> PrecoderSolution:
    """CRB-optimal transmit covariance via the KKT conditions.

    Minimises ``tr(Q^{-1})`` over ``Q >= 0`` with ``tr(Q) <= L P_d`` and
    ``tr(H Q) >= gamma``. Stationarity gives ``Q = (mu I - nu H)^{-1/2}``;
    in the eigenbasis of H the power multiplier ``mu`` and the SNR
    multiplier ``nu`` are found by nested root finding.

    With ``cfg.snr_floor == "min"`` the per-device floor variant is solved as
    a semidefinite program instead.

    Raises
    ------
    InfeasiblePrecoderError
        If ``gamma`` exceeds the largest attainable SNR-scaling average.
    """
    if getattr(cfg, "snr_floor", "average") == "min":
        return solve_precoder_sdp(Hdl, cfg, mode="min")
    N, L = cfg.N, cfg.L
    power = L * cfg.P_d
    gamma = cfg.gamma
    H = downlink_gram(Hdl, L)
    lam, U = hermitian_eig(H)
    lam = np.clip(lam, 0.0, None)
    lam_max = lam[-1]
    max_floor = power * lam_max
    iso = power / N
    if iso * lam.sum() >= gamma:
        Q = iso * np.eye(N, dtype=complex)
        mu = (N / power) ** 2
        objective = N * N / power
        dual = 2 * N * np.sqrt(mu) - mu * power
        W = precoder_from_covariance(Q, L)
        return PrecoderSolution(Q=Q, W=W, objective=objective, dual_value=dual, mu=mu, nu=0.0)
    if gamma >= max_floor:
        raise InfeasiblePrecoderError(gamma, max_floor)

    gaps = lam_max - lam
    scale = (N / power) ** 2

    def floor_excess(log_nu):
        nu = np.exp(log_nu)
        t = _solve_mu(nu, gaps, power, scale)
        q = _powers(nu, t, gaps)
        return (lam @ q) / (q.sum() / power) - gamma

    nu_ref = scale / max(lam_max, 1e-300)
    lo, hi = np.log(nu_ref) - 40.0, np.log(nu_ref)
    while floor_excess(hi) < 0:
        hi += 5.0
        if hi > np.log(nu_ref) + 200:
            raise InfeasiblePrecoderError(gamma, max_floor)
    log_nu = brentq(floor_excess, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    nu = float(np.exp(log_nu))
    t = _solve_mu(nu, gaps, power, scale)
    q = _powers(nu, t, gaps)
    q *= power / q.sum()
    mu = float(nu * lam_max + t)
    s = mu - nu * lam
    Q = hermitize((U * q) @ U.conj().T)
    objective = float(np.sum(1.0 / q))
    dual = float(np.sum(2 * np.sqrt(s)) - mu * power + nu * gamma)
    W = precoder_from_covariance(Q, L)
    return PrecoderSolution(Q=Q, W=W, objective=objective, dual_value=dual, mu=mu, nu=nu)


def solve_precoder_sdp(Hdl, cfg, mode="average"):
    """Schur-complement LMI form of the precoder problem, solved with cvxpy.

    Used for the per-device ("min") SNR floor and as an independent check of
    the KKT solver. The problem is rescaled to unit power before solving.
    """
    import cvxpy as cp

    N, L = cfg.N, cfg.L
    power = L * cfg.P_d
    Hdl = np.asarray(Hdl, dtype=complex)
    K = Hdl.shape[1]
    Qn = cp.Variable((N, N), hermitian=True)
    X = cp.Variable((N, N), hermitian=True)
    eye = np.eye(N)
    constraints = [cp.bmat([[X, eye], [eye, Qn]]) >> 0, cp.real(cp.trace(Qn)) <= 1, Qn >> 0]
    if cfg.gamma > 0:
        if mode == "min":
            for k in range(K):
                h = Hdl[:, k]
                A = np.outer(h.conj(), h) * power / (L * cfg.gamma)
                constraints.append(cp.real(cp.trace(A @ Qn)) >= 1)
        else:
            A = downlink_gram(Hdl, L) * power / cfg.gamma
            constraints.append(cp.real(cp.trace(A @ Qn)) >= 1)
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(X))), constraints)
    prob.solve(solver=cp.CLARABEL)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        if mode == "min":
            H = np.asarray(Hdl)
            max_floor = power * min(np.linalg.norm(H, axis=0) ** 2) / L
        else:
            max_floor = power * hermitian_eig(downlink_gram(Hdl, L)).values[-1]
        raise InfeasiblePrecoderError(cfg.gamma, max_floor)
    Q = hermitize(Qn.value) * power
    objective = float(np.real(np.trace(np.linalg.inv(Q))))
    W = precoder_from_covariance(Q, L)
    # the solver's optimal value plays the role of the dual certificate
    return PrecoderSolution(Q=Q, W=W, objective=objective, dual_value=float(prob.value) / power,
                            mu=float("nan"), nu=float("nan"))


def feasibility_gate_precoder(Q, cfg, R):
    """A precoder meeting all sensing-side constraints exists iff the optimum meets ``Gamma0``."""
    value = 0.5 * np.real(np.trace(R)) * np.real(np.trace(np.linalg.inv(Q)))
    return bool(value <= cfg.Gamma0)


def penalty_xi(phi, S, cfg):
    """Coefficient of ``|c^H f_k|^2`` in every per-device penalty."""
    S = np.asarray(S, dtype=int)
    ratio = cfg.N / cfg.L
    return cfg.P_u / (cfg.sigma2_ps * (1 + ratio)) * (ratio * np.sum(np.asarray(phi)[S] ** 2) - cfg.eps0)


def penalties(c, F, phi, S, cfg):
    """Per-device aggregation penalties ``C_k(c)`` for k in S (same order as S)."""
    S = np.asarray(S, dtype=int)
    phi = np.asarray(phi, dtype=float)
    xi = penalty_xi(phi, S, cfg)
    inner2 = np.abs(c.conj() @ np.asarray(F)[:, S]) ** 2
    return phi[S] ** 2 * np.vdot(c, c).real + xi * inner2


def penalty_ck(c, k, F, phi, S, cfg):
    S = list(np.asarray(S, dtype=int))
    return float(penalties(c, F, phi, S, cfg)[S.index(k)])


def overall_penalty_matrix(F, S, phi, tau, cfg):
    """``phi_bar I + xi F T F^H`` whose quadratic form is the weighted penalty sum."""
    S = np.asarray(S, dtype=int)
    F = np.asarray(F, dtype=complex)
    phi = np.asarray(phi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    N = F.shape[0]
    phi_bar = np.sum(tau[S] * phi[S] ** 2)
    xi = penalty_xi(phi, S, cfg)
    FS = F[:, S]
    return hermitize(phi_bar * np.eye(N) + xi * (FS * tau[S]) @ FS.conj().T)


def solve_receiver_m2(F, S, phi, tau, cfg):
    """Unit receive beamformer minimising the overall penalty.

    Returns the eigenvector of the smallest eigenvalue of
    ``overall_penalty_matrix``.
    """
    if np.max(np.abs(tau)) > 1 + 1e-12:
        raise ValidationError("penalty weights must lie in [0, 1]")
    if len(S) == 0:
        raise ValidationError("receiver design needs a nonempty active set")
    xi = penalty_xi(phi, S, cfg)
    if np.isfinite(xi):
        A = overall_penalty_matrix(F, S, phi, tau, cfg)
    else:
        # unbounded threshold: the rank-K term dominates, keep its direction only
        FS = np.asarray(F, dtype=complex)[:, np.asarray(S, dtype=int)]
        A = hermitize(np.sign(xi) * (FS * np.asarray(tau, float)[S]) @ FS.conj().T)
    _, vectors = hermitian_eig(A)
    c = vectors[:, 0]
    return c / np.linalg.norm(c)


def _crb_from_R(R, trace_inv):
    return 0.5 * np.real(np.trace(R)) * trace_inv


def selection_metric(k, c, precoder, S, tau0, F, phi, cfg, scaling):
    """``C_k(c) - tau0 * (CRB(S - {k}) - Gamma0)`` for one device.

    The reduced CRB keeps the current scalings and drops device k's rank-one
    contribution to the effective noise covariance.
    """
    return float(_selection_metrics(c, precoder, S, tau0, F, phi, cfg, scaling)[list(S).index(k)])


def _selection_metrics(c, precoder, S, tau0, F, phi, cfg, scaling):
    S = np.asarray(S, dtype=int)
    F = np.asarray(F, dtype=complex)
    R = effective_noise_cov(F, scaling, cfg.beta_c, cfg.sigma2_ps)
    trace_R = np.real(np.trace(R))
    contrib = cfg.beta_c * np.abs(scaling.b[S]) ** 2 * np.linalg.norm(F[:, S], axis=0) ** 2
    crb_minus = 0.5 * (trace_R - contrib) * precoder.trace_inv
    return penalties(c, F, phi, S, cfg) - tau0 * (crb_minus - cfg.Gamma0)


def _evaluate(F, c, phi, S, cfg, precoder):
    """Scalings, CRB and aggregation error of the current (S, c)."""
    K = F.shape[1]
    if len(S) == 0:
        R = effective_noise_cov(F, UplinkScaling.silent(K), cfg.beta_c, cfg.sigma2_ps)
        return UplinkScaling.silent(K), _crb_from_R(R, precoder.trace_inv), float("inf")
    try:
        scaling = zf_coordination(F, c, phi, S, cfg.P_u)
        err = aggregation_error(c, S, F, phi, cfg)
    except OrthogonalDeviceError:
        # probability-zero event; keep the set infeasible so the loop continues
        scaling, err = UplinkScaling.silent(K), float("inf")
    R = effective_noise_cov(F, scaling, cfg.beta_c, cfg.sigma2_ps)
    return scaling, _crb_from_R(R, precoder.trace_inv), err


def _run(realization, cfg, sizes, policy, rng=None):
    F = np.asarray(realization.F, dtype=complex)
    K = F.shape[1]
    sizes = np.ones(K) if sizes is None else np.asarray(sizes, dtype=float)
    try:
        precoder = solve_precoder_m1(realization.Hdl, cfg)
    except InfeasiblePrecoderError as exc:
        return ScheduleOutcome(S=[], W=None, c=None, tau=np.zeros(K), feasible=False,
                               crb_value=float("inf"), agg_error=float("inf"), policy=policy,
                               note=str(exc))
    S = list(range(K))
    tau = np.ones(K)
    phi = aggregation_weights(sizes, S)
    c = solve_receiver_m2(F, S, phi, tau, cfg)
    trace = []
    while True:
        scaling, crb_value, err = _evaluate(F, c, phi, S, cfg, precoder)
        if crb_value <= cfg.Gamma0 and err <= cfg.eps0:
            return ScheduleOutcome(S=S, W=precoder.W, c=c, tau=tau, feasible=True,
                                   crb_value=crb_value, agg_error=err, policy=policy, phi=phi,
                                   scaling=scaling, precoder=precoder, trace=trace)
        if policy == "mp":
            metrics = _selection_metrics(c, precoder, S, cfg.tau0, F, phi, cfg, scaling)
            pos = int(np.argmax(metrics))  # S is ascending, so ties go to the lowest index
        elif policy == "greedy":
            metrics = np.linalg.norm(F[:, S], axis=0)
            pos = int(np.argmin(metrics))
        elif policy == "random":
            metrics = None
            pos = int(rng.integers(len(S)))
        else:
            raise ValidationError(f"unknown scheduling policy {policy!r}")
        removed = S[pos]
        trace.append({
            "iteration": len(trace) + 1,
            "size": len(S),
            "removed": removed,
            "crb": crb_value,
            "agg_error": err,
            "max_penalty": float(np.max(penalties(c, F, phi, S, cfg))),
            "metrics": None if metrics is None else dict(zip(S, np.asarray(metrics, float).tolist())),
        })
        S = S[:pos] + S[pos + 1:]
        tau[removed] = 0.0
        if policy == "mp":
            for j, k in enumerate(list(trace[-1]["metrics"])):
                if k != removed:
                    tau[k] = cfg.delta if metrics[j] > 0 else 1 - cfg.delta
        if not S:
            R = effective_noise_cov(F, UplinkScaling.silent(K), cfg.beta_c, cfg.sigma2_ps)
            return ScheduleOutcome(S=[], W=precoder.W, c=c, tau=tau, feasible=False,
                                   crb_value=_crb_from_R(R, precoder.trace_inv),
                                   agg_error=float("inf"), policy=policy,
                                   phi=np.zeros(K), scaling=UplinkScaling.silent(K),
                                   precoder=precoder, trace=trace, note="active set exhausted")
        phi = aggregation_weights(sizes, S)
        c = solve_receiver_m2(F, S, phi, tau, cfg)


def schedule_mp(realization, cfg, sizes=None) -> ScheduleOutcome:
    """Matching-pursuit scheduling with subset-cutting penalty weights.

    Parameters
    ----------
    realization : ChannelRealization
    cfg : SystemConfig
    sizes : array_like, optional
        Local dataset sizes used for the aggregation weights; equal by default.
    """
    return _run(realization, cfg, sizes, "mp")


def schedule_baseline(realization, cfg, policy, rng=None, sizes=None) -> ScheduleOutcome:
    """Random (``"random"``) or weakest-channel (``"greedy"``) removal, same beamforming."""
    if policy == "random" and rng is None:
        raise ValidationError("the random policy needs an rng")
    if policy not in ("random", "greedy"):
        raise ValidationError(f"unknown baseline policy {policy!r}")
    return _run(realization, cfg, sizes, policy, rng)


def check_constraints(outcome: ScheduleOutcome, realization, cfg, sizes=None, rtol=1e-9):
    """Re-evaluate every scheduling constraint from the raw outcome.

    Returns a dict of flags ``C1``..``C5`` computed only from ``S``, ``W``,
    ``c`` and the channels, independent of the values the scheduler stored.
    """
    from .sensing import crb as crb_fn

    F, Hdl = realization.F, realization.Hdl
    K = F.shape[1]
    W, c, S = outcome.W, outcome.c, list(outcome.S)
    if W is None or not S:
        return {"C1": False, "C2": False, "C3": False, "C4": False, "C5": False}
    sizes = np.ones(K) if sizes is None else np.asarray(sizes, float)
    phi = aggregation_weights(sizes, S)
    scaling = zf_coordination(F, c, phi, S, cfg.P_u)
    R = effective_noise_cov(F, scaling, cfg.beta_c, cfg.sigma2_ps)
    L = W.shape[1]
    Q = W @ W.conj().T
    snr = np.real(np.einsum("nk,nm,mk->k", Hdl, Q, Hdl.conj())) / L
    floor = snr.min() if cfg.snr_floor == "min" else snr.mean()
    return {
        "C1": crb_fn(R, W) <= cfg.Gamma0 * (1 + rtol),
        "C2": aggregation_error(c, S, F, phi, cfg) <= cfg.eps0 * (1 + rtol),
        "C3": abs(np.linalg.norm(c) - 1) <= 1e-9,
        "C4": np.real(np.trace(Q)) / L <= cfg.P_d * (1 + rtol),
        "C5": floor >= cfg.gamma * (1 - 1e-7),
        "power": bool(np.all(np.abs(scaling.b) ** 2 <= cfg.P_u * (1 + rtol))),
    }


def format_trace(outcome: ScheduleOutcome):
    """Line-oriented log: one ``iteration removed size crb agg_error max_penalty`` row per step."""
    lines = ["iteration\tremoved\tsize\tcrb\tagg_error\tmax_penalty"]
    for rec in outcome.trace:
        lines.append(f"{rec['iteration']}\t{rec['removed']}\t{rec['size']}\t{rec['crb']:.6e}\t"
                     f"{rec['agg_error']:.6e}\t{rec['max_penalty']:.6e}")
    return "\n".join(lines)
