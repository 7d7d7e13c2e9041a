"""Target-response estimation from downlink echoes and its Cramer-Rao bound.

The PS sees ``Y = G W D + F B r + Z`` over a sensing block of L symbols,
where the uplink term acts as extra Gaussian noise with covariance
``R = beta_c F B B^H F^H + sigma^2 I``. Whitening with ``T = R^{-1/2}``
gives sufficient statistics, and the ML estimate of G is
``T^{-1} (T Y) (W D)^+``.

Vectorisation convention: ``v = G.ravel()`` (row-major), so that
``G w = (I (x) w^T) v``. All Kronecker-structured matrices below use it.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import (
    ValidationError,
    hermitize,
    inv_sqrt,
    kron,
    pinv,
    sample_complex_gaussian,
)

__all__ = [
    "UplinkScaling",
    "SensingEstimate",
    "effective_noise_cov",
    "whitening_filter",
    "pilot_symbols",
    "ml_estimate_G",
    "crb",
    "crb_covariance",
    "ml_error_covariance",
    "fisher_information",
    "simulate_sensing_block",
    "estimate_from_block",
    "empirical_sensing_mse",
]


@dataclass(frozen=True)
class UplinkScaling:
    """Device transmit scalings ``b``, receive power scaling ``eta`` and weights ``phi``.

    ``b`` and ``phi`` have length K and are zero for unscheduled devices.
    """

    b: np.ndarray
    eta: float
    phi: np.ndarray

    @property
    def active(self):
        return np.flatnonzero(self.b != 0)

    @classmethod
    def silent(cls, K):
        return cls(b=np.zeros(K, dtype=complex), eta=1.0, phi=np.zeros(K))


@dataclass(frozen=True)
class SensingEstimate:
    G_hat: np.ndarray
    crb: float
    empirical_mse: float = float("nan")


def effective_noise_cov(F, scaling: UplinkScaling, beta_c, sigma2_ps):
    """Covariance ``beta_c F B B^H F^H + sigma2_ps I`` of the sensing noise."""
    F = np.asarray(F, dtype=complex)
    N = F.shape[0]
    R = sigma2_ps * np.eye(N, dtype=complex)
    if beta_c:
        weighted = F * np.abs(scaling.b) ** 2
        R = R + beta_c * (weighted @ F.conj().T)
    return hermitize(R)


def whitening_filter(R):
    """Hermitian whitening filter ``U Lambda^{-1/2} U^H`` with ``T R T^H = I``."""
    return inv_sqrt(R)


def pilot_symbols(L, rng):
    """Unit-modulus +/-1 pilots, so the Fisher information carries no ``|x|^2`` weights."""
    return rng.choice(np.array([-1.0, 1.0]), size=L).astype(complex)


def _check_full_row_rank(WD):
    N = WD.shape[0]
    rank = np.linalg.matrix_rank(WD)
    if rank < N:
        raise ValidationError(
            f"W D is rank-deficient: numerical rank {rank} < {N}; the precoder must excite all N dimensions"
        )


def ml_estimate_G(Y, W, x, T):
    """Maximum-likelihood estimate of the target response.

    Parameters
    ----------
    Y : (N, L) complex
        Received sensing block.
    W : (N, L) complex
        Downlink precoder columns used in the block.
    x : (L,) complex
        Downlink symbols.
    T : (N, N) complex
        Whitening filter of the effective noise.

    Returns
    -------
    (N, N) complex
        ``T^{-1} (T Y) (W D)^+``.
    """
    W = np.asarray(W, dtype=complex)
    WD = W * np.asarray(x)[None, :]
    _check_full_row_rank(WD)
    Y_white = T @ Y
    return np.linalg.solve(T, Y_white) @ pinv(WD)


def _gram_conj(W):
    """``W^* W^T``, the Gram matrix appearing in the Fisher information."""
    W = np.asarray(W, dtype=complex)
    return W.conj() @ W.T


def _inv_gram(W):
    gram = _gram_conj(W)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValidationError(f"W* W^T is singular (condition number {cond:.3e}); "
                              "the precoder does not excite all dimensions")
    return np.linalg.inv(gram)


def crb(R, W):
    """Cramer-Rao bound ``1/2 tr(R) tr((W^* W^T)^{-1})``."""
    return float(0.5 * np.real(np.trace(R)) * np.real(np.trace(_inv_gram(W))))


def crb_covariance(R, W):
    """``1/2 R (x) (W^* W^T)^{-1}``, the bound on the error covariance of vec(G)."""
    return 0.5 * kron(R, _inv_gram(W))


def ml_error_covariance(R, W):
    """Exact error covariance ``R (x) (W^* W^T)^{-1}`` of ``ml_estimate_G``.

    This is twice ``crb_covariance``: the complex-Hessian Fisher matrix
    counts the real and imaginary parts of each entry once, while the
    estimator's error carries the full circular noise power.
    """
    return kron(R, _inv_gram(W))


def fisher_information(R, W):
    """Fisher information ``2 R^{-1} (x) W^* W^T`` for unit-modulus pilots."""
    Rinv = np.linalg.inv(R)
    return 2.0 * kron(hermitize(Rinv), _gram_conj(W))


def simulate_sensing_block(G, W, x, F, scaling: UplinkScaling, sigma2_ps, rng,
                           beta_s=1.0, beta_c=1.0):
    """Draw one received block ``beta_s G W D + beta_c F B r + Z``.

    Uplink symbols are CN(0, 1), the Gaussian model behind the noise
    covariance.
    """
    N, L = np.shape(W)
    K = np.shape(F)[1]
    r = sample_complex_gaussian(rng, (K, L))
    z = sample_complex_gaussian(rng, (N, L), sigma2_ps)
    Y = beta_s * (G @ (W * x[None, :])) + z
    if beta_c:
        Y = Y + beta_c * (F @ (scaling.b[:, None] * r))
    return Y


def _filter_or_identity(R):
    # noiseless limit: any invertible filter gives the same estimate
    if not np.any(R):
        return np.eye(R.shape[0], dtype=complex)
    return whitening_filter(R)


def estimate_from_block(Y, W, x, R):
    """Whiten with the filter of ``R`` and return the ML estimate of G."""
    return ml_estimate_G(Y, W, x, _filter_or_identity(R))


def empirical_sensing_mse(cfg, realization, W, scaling: UplinkScaling, trials, rng,
                          x=None, normalized=False):
    """Mean ``||G - G_hat||_F^2`` over independent noise and uplink draws.

    With ``normalized=True`` each error is divided by ``||G||_F^2``.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    W = np.asarray(W, dtype=complex)
    L = W.shape[1]
    if x is None:
        x = pilot_symbols(L, rng)
    R = effective_noise_cov(realization.F, scaling, cfg.beta_c, cfg.sigma2_ps)
    T = _filter_or_identity(R)
    G = realization.G
    total = 0.0
    for _ in range(trials):
        Y = simulate_sensing_block(G, W, x, realization.F, scaling, cfg.sigma2_ps, rng,
                                   beta_s=1.0, beta_c=cfg.beta_c)
        G_hat = ml_estimate_G(Y, W, x, T)
        total += np.sum(np.abs(G - G_hat) ** 2)
    mse = total / trials
    if normalized:
        mse /= np.sum(np.abs(G) ** 2)
    return float(mse)
