"""Physical-layer model of the dual-functional RIS downlink.

Users ``0 .. K-2`` are served by reflection off RIS-1; user ``K-1`` sits
behind the surface and is reached through horn-1 -> amplifier -> horn-2 ->
RIS-2. Beamformers are stored column-wise in an ``(N, K)`` array ``W``.

The fractional-programming surrogates are built on natural logarithms (which
is what makes the closed-form auxiliary updates exact stationary points) and
reported in bits/s/Hz by dividing by ``ln 2``. The ``*_nats`` variants expose
the unscaled objective for gradient and KKT checks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import ChannelSet

LN2 = np.log(2.0)


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watt(x_dbm):
    return 10.0 ** ((np.asarray(x_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(x_w):
    return 10.0 * np.log10(np.asarray(x_w, dtype=float)) + 30.0


@dataclass(frozen=True)
class ReflectionState:
    """Phase vectors of both RIS faces.

    ``resolution_bits=None`` means continuous phases.
    """

    phi1: np.ndarray
    phi2: np.ndarray
    resolution_bits: Optional[int] = None

    def __post_init__(self):
        for name in ("phi1", "phi2"):
            v = np.asarray(getattr(self, name), dtype=complex)
            if v.ndim != 1:
                raise ValueError(f"{name} must be a 1-D vector")
            if not np.allclose(np.abs(v), 1.0, rtol=0.0, atol=1e-12):
                raise ValueError(f"{name} violates the unit-modulus constraint")
            object.__setattr__(self, name, v)
        if self.phi1.shape != self.phi2.shape:
            raise ValueError("phi1 and phi2 must have the same length")
        if self.resolution_bits is not None and self.resolution_bits < 1:
            raise ValueError("resolution_bits must be >= 1 or None")

    @classmethod
    def from_angles(cls, theta1, theta2, resolution_bits=None):
        return cls(np.exp(1j * np.asarray(theta1, dtype=float)),
                   np.exp(1j * np.asarray(theta2, dtype=float)),
                   resolution_bits)

    @property
    def n_elements(self) -> int:
        return self.phi1.shape[0]


@dataclass(frozen=True)
class NoiseAndGainParams:
    """Receiver noise powers, amplifier noise and gain, and BS power budget (all linear)."""

    sigma_k_sq: np.ndarray
    sigma0_sq: float
    beta: float
    p_t: float

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma_k_sq, dtype=float))
        object.__setattr__(self, "sigma_k_sq", s)
        if np.any(s <= 0) or self.sigma0_sq < 0 or self.beta < 0 or self.p_t <= 0:
            raise ValueError("noise powers, gain and power budget must be positive")

    @classmethod
    def from_db(cls, n_users, noise_dbm=-80.0, amp_noise_dbm=-70.0, beta_db=30.0, p_t_dbm=40.0):
        return cls(sigma_k_sq=np.full(n_users, float(dbm_to_watt(noise_dbm))),
                   sigma0_sq=float(dbm_to_watt(amp_noise_dbm)),
                   beta=float(db_to_linear(beta_db)),
                   p_t=float(dbm_to_watt(p_t_dbm)))


def _check_dims(channels: ChannelSet, reflection: ReflectionState, W=None):
    M, N = channels.g_bs_ris.shape
    if reflection.n_elements != M:
        raise ValueError(f"reflection has {reflection.n_elements} elements, channels have {M}")
    if W is not None:
        W = np.asarray(W)
        if W.shape != (N, channels.n_users):
            raise ValueError(f"beamformers must have shape {(N, channels.n_users)}, got {W.shape}")


def relay_front_gain(channels: ChannelSet, reflection: ReflectionState) -> complex:
    """Scalar ``h_K^H Phi2 g_r`` seen by the relay user from horn-2."""
    return complex(np.sum(channels.h_users[-1].conj() * reflection.phi2 * channels.g_r))


def relay_noise_power(channels, reflection, noise: NoiseAndGainParams) -> float:
    """Total noise power at the relay user, amplified thermal noise included."""
    lead = relay_front_gain(channels, reflection)
    return float(noise.beta * noise.sigma0_sq * abs(lead) ** 2 + noise.sigma_k_sq[-1])


def effective_rows(channels: ChannelSet, reflection: ReflectionState, beta: float) -> np.ndarray:
    """Rows ``e_k^H`` (shape ``(K, N)``) mapping a beamformer to user k's received amplitude.

    The relay row already carries the ``sqrt(beta)`` amplitude gain.
    """
    _check_dims(channels, reflection)
    phi1_g = reflection.phi1[:, None] * channels.g_bs_ris  # Phi1 G
    rows = channels.h_users.conj() @ phi1_g
    relay = np.sqrt(beta) * relay_front_gain(channels, reflection) * (channels.g_t.conj() @ phi1_g)
    rows[-1] = relay
    return rows


def noise_vector(channels, reflection, noise: NoiseAndGainParams) -> np.ndarray:
    n = np.array(noise.sigma_k_sq, dtype=float)
    if n.shape[0] != channels.n_users:
        if n.shape[0] != 1:
            raise ValueError("sigma_k_sq must have one entry per user")
        n = np.full(channels.n_users, n[0])
    n[-1] = noise.beta * noise.sigma0_sq * abs(relay_front_gain(channels, reflection)) ** 2 + n[-1]
    return n


def gain_matrix(channels, reflection, W, beta) -> np.ndarray:
    """``Z[k, i]``: amplitude of stream i at user k."""
    _check_dims(channels, reflection, W)
    return effective_rows(channels, reflection, beta) @ np.asarray(W, dtype=complex)


def _sinr_from(Z, n):
    power = np.abs(Z) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return signal / (interference + n)


def sinr_all(channels, reflection, W, noise: NoiseAndGainParams) -> np.ndarray:
    Z = gain_matrix(channels, reflection, W, noise.beta)
    return _sinr_from(Z, noise_vector(channels, reflection, noise))


def sinr_reflect_user(k: int, channels, reflection, W, noise) -> float:
    """SINR of reflect-served user ``k`` (0-based, ``0 <= k < K-1``)."""
    K = channels.n_users
    if not 0 <= k < K - 1:
        raise IndexError(f"reflect-user index must be in [0, {K - 1}), got {k}")
    return float(sinr_all(channels, reflection, W, noise)[k])


def sinr_relay_user(channels, reflection, W, noise) -> float:
    return float(sinr_all(channels, reflection, W, noise)[-1])


def sum_rate(channels, reflection, W, noise) -> float:
    """Achievable sum rate in bits/s/Hz."""
    return float(np.sum(np.log1p(sinr_all(channels, reflection, W, noise))) / LN2)


def transmit_power(W) -> float:
    return float(np.sum(np.abs(np.asarray(W)) ** 2))


def f_r_nats(channels, reflection, W, gamma, noise) -> float:
    gamma = _check_gamma(gamma, channels.n_users)
    Z = gain_matrix(channels, reflection, W, noise.beta)
    n = noise_vector(channels, reflection, noise)
    power = np.abs(Z) ** 2
    frac = (1.0 + gamma) * np.diag(power) / (power.sum(axis=1) + n)
    return float(np.sum(np.log1p(gamma)) - np.sum(gamma) + np.sum(frac))


def f_r_surrogate(channels, reflection, W, gamma, noise) -> float:
    """Lagrangian-dual surrogate, in bits/s/Hz.

    Equals :func:`sum_rate` when ``gamma`` is the SINR vector and is
    smaller for any other nonnegative ``gamma``.
    """
    return f_r_nats(channels, reflection, W, gamma, noise) / LN2


def g_r_nats(channels, reflection, W, gamma, tau, noise) -> float:
    gamma = _check_gamma(gamma, channels.n_users)
    tau = np.asarray(tau, dtype=complex)
    Z = gain_matrix(channels, reflection, W, noise.beta)
    n = noise_vector(channels, reflection, noise)
    power = np.abs(Z) ** 2
    linear = 2.0 * np.sqrt(1.0 + gamma) * np.real(tau.conj() * np.diag(Z))
    quad = np.abs(tau) ** 2 * (power.sum(axis=1) + n)
    return float(np.sum(np.log1p(gamma)) - np.sum(gamma) + np.sum(linear - quad))


def g_r_surrogate(channels, reflection, W, gamma, tau, noise) -> float:
    """Quadratic-transform surrogate, in bits/s/Hz."""
    return g_r_nats(channels, reflection, W, gamma, tau, noise) / LN2


def _check_gamma(gamma, K):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (K,):
        raise ValueError(f"gamma must have shape ({K},)")
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    return gamma
