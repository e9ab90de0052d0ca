"""Joint BS beamforming and dual-functional RIS design.

Block-coordinate ascent on the quadratic-transform surrogate over
(gamma, tau, W, phi1, phi2). The auxiliary variables have closed forms, the
beamformers come from a regularised zero-forcing structure whose multiplier is
found by bisection, and each phase vector is refined by a
majorization-minimization loop with a largest-eigenvalue majorizer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from . import system
from .channel import ChannelSet
from .system import NoiseAndGainParams, ReflectionState

log = logging.getLogger(__name__)


class BisectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    outer_max_iters: int = 100
    outer_rel_tol: float = 1e-4
    mm_max_iters: int = 200
    mm_rel_tol: float = 1e-6
    # absolute watts; None -> 1e-9 * P_T
    bisection_power_tol: Optional[float] = None
    bisection_mu_bracket_growth: float = 2.0
    bisection_max_steps: int = 2000
    resolution_bits: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.outer_max_iters < 1 or self.mm_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.outer_rel_tol <= 0 or self.mm_rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.bisection_power_tol is not None and self.bisection_power_tol <= 0:
            raise ValueError("bisection_power_tol must be positive")
        if self.bisection_mu_bracket_growth <= 1:
            raise ValueError("bisection_mu_bracket_growth must exceed 1")
        if self.resolution_bits is not None and self.resolution_bits < 1:
            raise ValueError("resolution_bits must be >= 1 or None")


@dataclass(frozen=True)
class EffectiveChannels:
    h_tilde: np.ndarray   # (K, N); row k is the column vector h~_k
    a_matrix: np.ndarray  # (N, N)


@dataclass
class TraceRow:
    iteration: int
    sum_rate: float
    transmit_power: float
    mu: float
    g_r: dict
    mm_iters_phi1: int
    mm_iters_phi2: int


@dataclass
class RunResult:
    W: np.ndarray
    reflection: ReflectionState
    trace: List[TraceRow]
    converged: bool
    initial_sum_rate: float
    sum_rate: float
    warm_start_iterations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.trace)


# ---------------------------------------------------------------- auxiliaries

def update_gamma(channels, reflection, W, noise) -> np.ndarray:
    """gamma_k = SINR_k, the maximizer of the Lagrangian-dual surrogate."""
    return system.sinr_all(channels, reflection, W, noise)


def update_tau(channels, reflection, W, gamma, noise) -> np.ndarray:
    Z = system.gain_matrix(channels, reflection, W, noise.beta)
    n = system.noise_vector(channels, reflection, noise)
    total = np.sum(np.abs(Z) ** 2, axis=1) + n
    return np.sqrt(1.0 + np.asarray(gamma, dtype=float)) * np.diag(Z) / total


# ---------------------------------------------------------------- beamformers

def effective_channels(channels, reflection, gamma, tau, noise) -> EffectiveChannels:
    rows = system.effective_rows(channels, reflection, noise.beta)  # e_k^H, sqrt(beta) folded in
    h_tilde = np.asarray(tau, dtype=complex)[:, None] * rows.conj()
    A = h_tilde.T @ h_tilde.conj()
    return EffectiveChannels(h_tilde, 0.5 * (A + A.conj().T))


def update_beamformers(effective: EffectiveChannels, gamma, p_t: float,
                       config: OptimizerConfig = OptimizerConfig()) -> Tuple[np.ndarray, float]:
    """Maximize the surrogate over W under the sum-power budget.

    Returns ``(W, mu)`` with ``W = (A + mu I)^-1 B`` where column k of ``B`` is
    ``sqrt(1 + gamma_k) h~_k``.
    """
    if not p_t > 0:
        raise ValueError("p_t must be positive")
    B = (effective.h_tilde * np.sqrt(1.0 + np.asarray(gamma, dtype=float))[:, None]).T
    N, K = B.shape
    if not np.any(B):
        return np.zeros((N, K), dtype=complex), 0.0
    tol = config.bisection_power_tol if config.bisection_power_tol is not None else 1e-9 * p_t

    lam, U = np.linalg.eigh(effective.a_matrix)
    lam = np.clip(lam, 0.0, None)
    C = U.conj().T @ B
    c2 = np.sum(np.abs(C) ** 2, axis=1)

    def power(mu):
        return float(np.sum(c2 / (lam + mu) ** 2))

    def beams(mu):
        return U @ (C / (lam + mu)[:, None])

    ridge = 0.0
    if lam[0] <= 1e-12 * lam[-1]:
        ridge = 1e-12 * np.sum(lam) / N
    if power(ridge) <= p_t:
        return beams(ridge), 0.0

    growth = config.bisection_mu_bracket_growth
    hi, steps = 1.0, 0
    while power(hi) > p_t:
        hi *= growth
        steps += 1
        if steps > config.bisection_max_steps:
            raise BisectionError(f"could not bracket mu: power({hi:g}) = {power(hi):g} > {p_t:g}")
    lo = 0.0
    while hi > 1e-300 and power(hi / growth) <= p_t:
        hi /= growth
    lo = hi / growth if hi > 1e-300 else 0.0

    for _ in range(config.bisection_max_steps):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        pm = power(mid)
        if pm > p_t:
            lo = mid
        else:
            hi = mid
            if p_t - pm <= tol:
                break
    return beams(hi), hi


# ---------------------------------------------------------------- phases

def mm_phase_data_phi1(channels, reflection, W, gamma, tau, noise) -> Tuple[np.ndarray, np.ndarray]:
    """Quadratic form ``(R, d)`` of the phi1 subproblem.

    ``phi1^H R phi1 - 2 Re{phi1^H d}`` equals minus the phi1-dependent part of
    the surrogate (in nats).
    """
    lead = np.sqrt(noise.beta) * system.relay_front_gain(channels, reflection)
    a = channels.h_users.conj().copy()
    a[-1] = lead * channels.g_t.conj()
    GW = channels.g_bs_ris @ np.asarray(W, dtype=complex)  # (M, K)
    # X[k, i, m] = r_{k,i}^H[m]
    X = np.asarray(tau, dtype=complex).conj()[:, None, None] * a[:, None, :] * GW.T[None, :, :]
    K, M = X.shape[0], X.shape[2]
    Xf = X.reshape(K * K, M)
    R = Xf.conj().T @ Xf
    d = np.sum(np.sqrt(1.0 + np.asarray(gamma, dtype=float))[:, None]
               * X[np.arange(K), np.arange(K)].conj(), axis=0)
    return 0.5 * (R + R.conj().T), d


def mm_phase_data_phi2(channels, reflection, W, gamma, tau, noise,
                       include_amplifier_noise: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Quadratic form ``(V, b)`` of the phi2 subproblem.

    The amplified horn noise also depends on phi2; it enters ``V`` as an extra
    rank-one term unless ``include_amplifier_noise`` is False.
    """
    tau_K = complex(np.asarray(tau)[-1])
    gamma_K = float(np.asarray(gamma)[-1])
    phi1_g = reflection.phi1[:, None] * channels.g_bs_ris
    c = channels.g_t.conj() @ phi1_g @ np.asarray(W, dtype=complex)  # (K,)
    base = np.sqrt(noise.beta) * tau_K.conjugate() * channels.h_users[-1].conj() * channels.g_r
    X = c[:, None] * base[None, :]  # X[k] = v_{K,k}^H
    if include_amplifier_noise:
        X = np.vstack([X, np.sqrt(noise.sigma0_sq) * base[None, :]])
    V = X.conj().T @ X
    b = np.sqrt(1.0 + gamma_K) * X[-1 if not include_amplifier_noise else -2].conj()
    return 0.5 * (V + V.conj().T), b


def mm_objective(Q, d, phi) -> float:
    return float(np.real(np.vdot(phi, Q @ phi)) - 2.0 * np.real(np.vdot(phi, d)))


def mm_surrogate(Q, d, phi, phi_t, lam_max) -> float:
    """Majorizer of :func:`mm_objective` expanded at ``phi_t``."""
    L_minus_Q_phit = lam_max * phi_t - Q @ phi_t
    return float(lam_max * np.real(np.vdot(phi, phi))
                 - 2.0 * np.real(np.vdot(phi, L_minus_Q_phit))
                 + np.real(np.vdot(phi_t, L_minus_Q_phit))
                 - 2.0 * np.real(np.vdot(phi, d)))


def largest_eigenvalue(Q) -> float:
    return float(max(np.linalg.eigvalsh(Q)[-1], 0.0))


def quantize_phases(p, bits: int) -> np.ndarray:
    """Round the phase of each entry of ``p`` to the nearest multiple of ``2 pi / 2^bits``."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    delta = 2 * np.pi / 2 ** bits
    return np.exp(1j * np.floor(np.angle(p) / delta + 0.5) * delta)


def unit_phase(p, bits: Optional[int] = None) -> np.ndarray:
    # np.angle(0) == 0, so zero entries map to phase 0
    if bits is not None:
        return quantize_phases(p, bits)
    return np.exp(1j * np.angle(p))


def mm_step(Q, d, phi_t, lam_max=None, bits=None) -> np.ndarray:
    if lam_max is None:
        lam_max = largest_eigenvalue(Q)
    p = lam_max * phi_t - Q @ phi_t + d
    return unit_phase(p, bits)


mm_step_phi1 = mm_step
mm_step_phi2 = mm_step


def mm_solve(Q, d, phi0, max_iters=200, rel_tol=1e-6, bits=None) -> Tuple[np.ndarray, int]:
    """Run MM steps from ``phi0``; returns ``(phi, steps_taken)``.

    With finite ``bits`` the continuous MM trajectory keeps driving ``p^t``
    and every step's ``p^t`` is rounded onto the phase grid; the best rounded
    candidate (``phi0`` included) is returned, so the subproblem objective
    never rises above its starting value.
    """
    lam = largest_eigenvalue(Q)
    phi = np.asarray(phi0, dtype=complex)
    obj = mm_objective(Q, d, phi)
    best_phi, best_obj = phi, obj
    steps = 0
    for steps in range(1, max_iters + 1):
        p = lam * phi - Q @ phi + d
        new = unit_phase(p)
        new_obj = mm_objective(Q, d, new)
        if bits is not None:
            cand = quantize_phases(p, bits)
            cand_obj = mm_objective(Q, d, cand)
            if cand_obj < best_obj:
                best_phi, best_obj = cand, cand_obj
        done = (abs(new_obj - obj) <= rel_tol * max(abs(obj), 1e-300)
                or np.array_equal(new, phi))
        phi, obj = new, new_obj
        if done:
            break
    if bits is None:
        return phi, steps
    return best_phi, steps


def update_phi1(channels, reflection, W, gamma, tau, noise,
                config: OptimizerConfig = OptimizerConfig()) -> Tuple[np.ndarray, int]:
    R, d = mm_phase_data_phi1(channels, reflection, W, gamma, tau, noise)
    return mm_solve(R, d, reflection.phi1, config.mm_max_iters, config.mm_rel_tol,
                    config.resolution_bits)


def update_phi2(channels, reflection, W, gamma, tau, noise,
                config: OptimizerConfig = OptimizerConfig()) -> Tuple[np.ndarray, int]:
    V, b = mm_phase_data_phi2(channels, reflection, W, gamma, tau, noise)
    return mm_solve(V, b, reflection.phi2, config.mm_max_iters, config.mm_rel_tol,
                    config.resolution_bits)


# ---------------------------------------------------------------- driver

def quantize_with_rotation(phi, bits: int) -> np.ndarray:
    """Round ``phi`` onto the phase grid after the common rotation that loses least.

    A common phase on either face is absorbed by the beamformers, so only
    relative phases matter; candidate rotations put each element exactly on
    a grid point.
    """
    phi = np.asarray(phi, dtype=complex)
    delta = 2 * np.pi / 2 ** bits
    shifts = np.concatenate([[0.0], np.mod(-np.angle(phi), delta)])
    rotated = phi[None, :] * np.exp(1j * shifts)[:, None]
    rounded = quantize_phases(rotated, bits)
    err = np.sum(np.abs(rounded - rotated) ** 2, axis=1)
    return rounded[int(np.argmin(err))]


def initial_point(channels: ChannelSet, noise: NoiseAndGainParams, config: OptimizerConfig):
    """Random phases and full-power matched-filter beams through them."""
    rng = np.random.default_rng(config.seed)
    M = channels.n_elements
    theta = rng.uniform(0.0, 2 * np.pi, size=(2, M))
    reflection = ReflectionState.from_angles(theta[0], theta[1])
    return reflection, matched_filter(channels, reflection, noise)


def matched_filter(channels, reflection, noise) -> np.ndarray:
    rows = system.effective_rows(channels, reflection, noise.beta)
    W = rows.conj().T.copy()
    norms = np.linalg.norm(W, axis=0)
    K = channels.n_users
    safe = np.where(norms > 0, norms, 1.0)
    W = W / safe * np.sqrt(noise.p_t / K)
    W[:, norms == 0] = np.sqrt(noise.p_t / K) / np.sqrt(W.shape[0])
    return W


def optimize_beamformers(channels, reflection, noise, config: OptimizerConfig = OptimizerConfig(),
                         W0=None) -> np.ndarray:
    """Alternate (gamma, tau, W) with the reflection held fixed."""
    W = matched_filter(channels, reflection, noise) if W0 is None else W0
    rate = system.sum_rate(channels, reflection, W, noise)
    for _ in range(config.outer_max_iters):
        gamma = update_gamma(channels, reflection, W, noise)
        tau = update_tau(channels, reflection, W, gamma, noise)
        eff = effective_channels(channels, reflection, gamma, tau, noise)
        W, _ = update_beamformers(eff, gamma, noise.p_t, config)
        new_rate = system.sum_rate(channels, reflection, W, noise)
        if abs(new_rate - rate) <= config.outer_rel_tol * max(abs(rate), 1e-300):
            break
        rate = new_rate
    return W


def run(channels: ChannelSet, noise: NoiseAndGainParams, config: OptimizerConfig = OptimizerConfig(),
        sink: Optional[Callable[[TraceRow], None]] = None, init=None) -> RunResult:
    """Full alternating optimization.

    ``init`` optionally supplies ``(reflection, W)``; otherwise a seeded random
    start is used. With finite ``resolution_bits`` and no ``init``, the
    continuous-phase problem is solved first and its phases, rounded by
    :func:`quantize_with_rotation`, seed the discrete refinement. ``sink``
    receives each :class:`TraceRow` of the (final-stage) loop as it is produced.
    """
    if noise.p_t <= 0:
        raise ValueError("p_t must be positive")
    bits = config.resolution_bits
    warm_iters = 0
    if init is None:
        init = initial_point(channels, noise, config)
        if bits is not None:
            warm = _ascent(channels, noise, replace(config, resolution_bits=None), init, None)
            warm_iters = warm.iterations
            init = (ReflectionState(quantize_with_rotation(warm.reflection.phi1, bits),
                                    quantize_with_rotation(warm.reflection.phi2, bits), bits),
                    warm.W)
    elif bits is not None:
        refl, W = init
        init = (ReflectionState(quantize_phases(refl.phi1, bits),
                                quantize_phases(refl.phi2, bits), bits), W)
    result = _ascent(channels, noise, config, init, sink)
    result.warm_start_iterations = warm_iters
    return result


def _ascent(channels, noise, config, init, sink) -> RunResult:
    bits = config.resolution_bits
    reflection, W = init
    reflection = replace(reflection, resolution_bits=bits)
    rate = system.sum_rate(channels, reflection, W, noise)
    initial_rate = rate
    best = (rate, W, reflection)
    trace: List[TraceRow] = []
    converged = False

    def g(gamma, tau):
        return system.g_r_surrogate(channels, reflection, W, gamma, tau, noise)

    tau = np.zeros(channels.n_users, dtype=complex)
    for it in range(1, config.outer_max_iters + 1):
        g_vals = {}
        gamma = update_gamma(channels, reflection, W, noise)
        g_vals["gamma"] = g(gamma, tau)
        tau = update_tau(channels, reflection, W, gamma, noise)
        g_vals["tau"] = g(gamma, tau)
        eff = effective_channels(channels, reflection, gamma, tau, noise)
        W, mu = update_beamformers(eff, gamma, noise.p_t, config)
        g_vals["w"] = g(gamma, tau)
        phi1, n1 = update_phi1(channels, reflection, W, gamma, tau, noise, config)
        reflection = replace(reflection, phi1=phi1)
        g_vals["phi1"] = g(gamma, tau)
        phi2, n2 = update_phi2(channels, reflection, W, gamma, tau, noise, config)
        reflection = replace(reflection, phi2=phi2)
        g_vals["phi2"] = g(gamma, tau)

        new_rate = system.sum_rate(channels, reflection, W, noise)
        row = TraceRow(it, new_rate, system.transmit_power(W), mu, g_vals, n1, n2)
        trace.append(row)
        if sink is not None:
            sink(row)
        if new_rate > best[0]:
            best = (new_rate, W, reflection)
        if abs(new_rate - rate) <= config.outer_rel_tol * max(abs(rate), 1e-300):
            converged = True
            rate = new_rate
            break
        rate = new_rate

    if not converged:
        log.info("outer loop hit the %d-iteration cap", config.outer_max_iters)
    if bits is not None and best[0] > rate:
        # quantized ascent is not monotone; hand back the best feasible iterate
        rate, W, reflection = best
    return RunResult(W, reflection, trace, converged, initial_rate, rate)
