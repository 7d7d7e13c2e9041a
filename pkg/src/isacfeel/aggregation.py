"""Over-the-air aggregation with zero-forcing coordination and echo cancellation.

After the PS subtracts its estimate of the echo, the weighted model sum is
read out as ``c^H y / sqrt(eta)``. Zero-forcing scalings
``b_k = phi_k sqrt(eta) / (c^H f_k)`` make the device superposition exact,
so only the residual echo and thermal noise remain.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ValidationError, sample_complex_gaussian
from .sensing import (
    UplinkScaling,
    effective_noise_cov,
    estimate_from_block,
    pilot_symbols,
    simulate_sensing_block,
)

__all__ = [
    "OrthogonalDeviceError",
    "AggregationReport",
    "aggregation_weights",
    "zf_coordination",
    "zf_residual",
    "aggregation_error",
    "cycle_precoder",
    "sic_aggregate",
    "error_process_variance",
    "simulate_aggregation_mse",
]

ORTHOGONAL_RTOL = 1e-12


class OrthogonalDeviceError(ValidationError):
    """A scheduled device is (numerically) orthogonal to the receive beamformer."""

    def __init__(self, device, gain):
        super().__init__(f"device {device} is orthogonal to the receive beamformer "
                         f"(|c^H f_k| = {gain:.3e}); remove it from the active set")
        self.device = device


@dataclass(frozen=True)
class AggregationReport:
    error_closed_form: float
    error_monte_carlo: float
    eta: float
    residual_zf: float
    samples: int = 0
    std_error: float = float("nan")


def aggregation_weights(sizes, S):
    """Weights ``|D_k| / sum_{j in S} |D_j|`` on S, zero elsewhere."""
    sizes = np.asarray(sizes, dtype=float)
    phi = np.zeros(sizes.shape[0])
    S = np.asarray(S, dtype=int)
    if S.size:
        phi[S] = sizes[S] / sizes[S].sum()
    return phi


def _gains(F, c, S):
    F = np.asarray(F, dtype=complex)
    S = np.asarray(S, dtype=int)
    inner = c.conj() @ F[:, S]
    norms = np.linalg.norm(F[:, S], axis=0)
    tiny = np.abs(inner) < ORTHOGONAL_RTOL * norms
    if np.any(tiny):
        k = int(S[np.argmax(tiny)])
        raise OrthogonalDeviceError(k, float(np.abs(inner[np.argmax(tiny)])))
    return inner


def zf_coordination(F, c, phi, S, P_u) -> UplinkScaling:
    """Zero-forcing scalings for the active set ``S``.

    ``eta = P_u min_k |c^H f_k|^2 / phi_k^2`` so the weakest (relative to its
    weight) device transmits at full power and no device exceeds ``P_u``.
    """
    S = np.asarray(S, dtype=int)
    phi = np.asarray(phi, dtype=float)
    K = np.shape(F)[1]
    if S.size == 0:
        return UplinkScaling.silent(K)
    inner = _gains(F, c, S)
    eta = P_u * np.min(np.abs(inner) ** 2 / phi[S] ** 2)
    b = np.zeros(K, dtype=complex)
    b[S] = phi[S] * np.sqrt(eta) / inner
    phi_full = np.zeros(K)
    phi_full[S] = phi[S]
    return UplinkScaling(b=b, eta=float(eta), phi=phi_full)


def zf_residual(F, c, scaling: UplinkScaling):
    """Squared norm of ``c^H F B / sqrt(eta) - phi^T``; zero under zero-forcing."""
    row = (c.conj() @ np.asarray(F)) * scaling.b / np.sqrt(scaling.eta)
    return float(np.sum(np.abs(row - scaling.phi) ** 2))


def aggregation_error(c, S, F, phi, cfg):
    """Closed-form aggregation MSE under zero-forcing coordination.

    ``(1 + N/L) / (P_u / sigma^2) * max_k phi_k^2 ||c||^2 / |c^H f_k|^2
    + (N/L) sum_k phi_k^2``, with sigma^2 the PS noise power.
    """
    S = np.asarray(S, dtype=int)
    if S.size == 0:
        raise ValidationError("aggregation error is undefined for an empty active set")
    phi = np.asarray(phi, dtype=float)
    inner = _gains(F, c, S)
    N, L = cfg.N, cfg.L
    snr = cfg.P_u / cfg.sigma2_ps
    worst = np.max(phi[S] ** 2 * np.vdot(c, c).real / np.abs(inner) ** 2)
    return float((1 + N / L) / snr * worst + (N / L) * np.sum(phi[S] ** 2))


def cycle_precoder(W, M):
    """Precoder columns for M intervals, repeating the L-column block."""
    W = np.asarray(W)
    return W[:, np.arange(M) % W.shape[1]]


def sic_aggregate(Y, G_hat, W, x, c, scaling: UplinkScaling, beta_s=1.0):
    """Cancel the estimated echo and read out the aggregate, one value per interval.

    ``Y`` is N x M; ``W`` may have L <= M columns (cycled); ``x`` has length
    M. ``beta_s`` is a scalar or a length-M mask of echo activity. Returns
    the complex estimates ``c^H (y - beta_s G_hat w x) / sqrt(eta)``.
    """
    Y = np.asarray(Y, dtype=complex)
    M = Y.shape[1]
    Wm = cycle_precoder(np.asarray(W, dtype=complex), M)
    x = np.asarray(x)
    beta = np.broadcast_to(np.asarray(beta_s, dtype=float), (M,))
    echo = (G_hat @ Wm) * (x * beta)[None, :]
    return (c.conj() @ (Y - echo)) / np.sqrt(scaling.eta)


def error_process_variance(c, w, C, eta, sigma2_ps, beta_s=1.0):
    """Variance of the post-cancellation error in one interval.

    ``(beta_s/eta) (c^H (x) w^T) C (c (x) w^*) + ||c||^2 sigma2_ps / eta``
    where ``C`` is the error covariance of ``vec(G_hat)``.
    """
    c = np.asarray(c, dtype=complex)
    w = np.asarray(w, dtype=complex)
    left = np.kron(c.conj(), w)
    quad = np.real(left @ C @ left.conj())
    return float(beta_s * quad / eta + np.vdot(c, c).real * sigma2_ps / eta)


def simulate_aggregation_mse(cfg, realization, c, S, phi, W, samples, rng,
                             x=None, beta_s=None, G_hat_mode="ml"):
    """Monte-Carlo aggregation MSE ``E|r_hat - sum phi_k r_k|^2``.

    Each trial estimates G from a fresh sensing block (uplink active), then
    aggregates over L further intervals that reuse the precoder block and
    carry fresh noise and model symbols. ``G_hat_mode`` selects ``"ml"``
    (estimate and cancel), ``"true"`` (perfect cancellation) or ``"none"``
    (no cancellation). Returns an ``AggregationReport``.
    """
    W = np.asarray(W, dtype=complex)
    N, L = W.shape
    K = realization.K
    beta_s = cfg.beta_s if beta_s is None else beta_s
    scaling = zf_coordination(realization.F, c, phi, S, cfg.P_u)
    R = effective_noise_cov(realization.F, scaling, cfg.beta_c, cfg.sigma2_ps)
    if x is None:
        x = pilot_symbols(L, rng)
    G, F = realization.G, realization.F
    trials = max(1, int(np.ceil(samples / L)))
    per_trial = np.empty(trials)
    for t in range(trials):
        if G_hat_mode == "ml":
            Ys = simulate_sensing_block(G, W, x, F, scaling, cfg.sigma2_ps, rng,
                                        beta_s=1.0, beta_c=cfg.beta_c)
            G_hat = estimate_from_block(Ys, W, x, R)
        elif G_hat_mode == "true":
            G_hat = G
        else:
            G_hat = np.zeros_like(G)
        r = sample_complex_gaussian(rng, (K, L))
        z = sample_complex_gaussian(rng, (N, L), cfg.sigma2_ps)
        Y = beta_s * (G @ (W * x[None, :])) + F @ (scaling.b[:, None] * r) + z
        r_hat = sic_aggregate(Y, G_hat, W, x, c, scaling, beta_s)
        target = scaling.phi @ r
        per_trial[t] = np.mean(np.abs(r_hat - target) ** 2)
    closed = aggregation_error(c, S, F, phi, cfg)
    se = float(per_trial.std(ddof=1) / np.sqrt(trials)) if trials > 1 else float("nan")
    return AggregationReport(
        error_closed_form=closed,
        error_monte_carlo=float(per_trial.mean()),
        eta=scaling.eta,
        residual_zf=zf_residual(F, c, scaling),
        samples=trials * L,
        std_error=se,
    )
