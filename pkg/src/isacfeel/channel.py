"""Geometry, path loss, Rayleigh fading and the LoS target response."""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .numerics import ValidationError, sample_complex_gaussian

__all__ = [
    "ChannelRealization",
    "steering_vector",
    "target_pathloss",
    "device_pathloss",
    "draw_channels",
]


@dataclass(frozen=True)
class ChannelRealization:
    """One Monte-Carlo draw of the network.

    Attributes
    ----------
    F : (N, K) complex
        Uplink channels, column k is ``f_k``.
    Hdl : (N, K) complex
        Downlink channels, column k is ``h_k``.
    G : (N, N) complex
        Target response ``alpha * a(theta) a(theta)^T``.
    alpha : complex
        Echo amplitude gain.
    theta : float
        Target angle of arrival (rad).
    distances : (K,) float
        Device distances to the PS (m).
    """

    F: np.ndarray
    Hdl: np.ndarray
    G: np.ndarray
    alpha: complex
    theta: float
    distances: np.ndarray

    @property
    def N(self):
        return self.F.shape[0]

    @property
    def K(self):
        return self.F.shape[1]


def steering_vector(theta, N, spacing=0.5):
    """Uniform linear array response, entry n is ``exp(j 2 pi n spacing sin(theta))``."""
    n = np.arange(N)
    return np.exp(2j * np.pi * n * spacing * np.sin(theta))


def target_pathloss(d, cfg: SystemConfig):
    """Two-way echo power gain ``sigma_rcs lambda^2 / (4 pi)^3 * d^-eps_t``.

    Equals the reference intercept at d = 1 m and decays with distance.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValidationError(f"target distance must be positive, got {d}")
    intercept = cfg.sigma_rcs * cfg.wavelength**2 / (4 * np.pi) ** 3
    out = intercept * d ** (-cfg.eps_t)
    return float(out) if out.ndim == 0 else out


def device_pathloss(d, cfg: SystemConfig):
    """Device link power gain ``(lambda / 4 pi)^2 * d^-eps_c``."""
    d = np.asarray(d, dtype=float)
    return (cfg.wavelength / (4 * np.pi)) ** 2 * d ** (-cfg.eps_c)


def draw_channels(cfg: SystemConfig, rng, distances=None) -> ChannelRealization:
    """Draw uplink/downlink Rayleigh channels and the target response.

    Device distances are uniform on ``[D_in, D_out]`` unless given. Path
    losses are power gains, so the small-scale fading vectors are scaled by
    their square roots.
    """
    N, K = cfg.N, cfg.K
    if distances is None:
        distances = rng.uniform(cfg.D_in, cfg.D_out, size=K)
    else:
        distances = np.asarray(distances, dtype=float)
        if distances.shape != (K,):
            raise ValidationError(f"expected {K} distances, got shape {distances.shape}")
    amp = np.sqrt(device_pathloss(distances, cfg))
    F = sample_complex_gaussian(rng, (N, K)) * amp
    Hdl = sample_complex_gaussian(rng, (N, K)) * amp
    # drawn unconditionally so the stream does not depend on the flag
    phase = rng.uniform(0.0, 2 * np.pi)
    alpha = np.sqrt(target_pathloss(cfg.d_target, cfg))
    if cfg.alpha_random_phase:
        alpha = alpha * np.exp(1j * phase)
    else:
        alpha = complex(alpha)
    a = steering_vector(cfg.theta_target, N, cfg.antenna_spacing)
    G = alpha * np.outer(a, a)
    return ChannelRealization(F=F, Hdl=Hdl, G=G, alpha=alpha, theta=cfg.theta_target,
                              distances=distances)
