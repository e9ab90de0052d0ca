import math

import numpy as np
import pytest

from dfris import optimizer, oracle, system
from dfris.channel import ChannelSet, ScenarioGeometry, default_user_positions, generate_channels
from dfris.optimizer import OptimizerConfig
from dfris.system import NoiseAndGainParams, ReflectionState

_acceptance_lines = []


def cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_instance(rng, N=4, K=3, M=16):
    """Unit-scale random state with SINRs of order one."""
    channels = ChannelSet(cn(rng, M, N), cn(rng, K, M), cn(rng, M), cn(rng, M))
    reflection = ReflectionState.from_angles(rng.uniform(0, 2 * np.pi, M), rng.uniform(0, 2 * np.pi, M))
    W = cn(rng, N, K) * rng.uniform(0.2, 2.0)
    p = float(np.sum(np.abs(W) ** 2))
    noise = NoiseAndGainParams(sigma_k_sq=rng.uniform(0.5, 2.0, K) * M * N,
                               sigma0_sq=float(rng.uniform(0.1, 1.0)),
                               beta=float(rng.uniform(0.5, 4.0)),
                               p_t=p * float(rng.uniform(1.0, 2.0)))
    return channels, reflection, W, noise


def physical_instance(seed, N=4, K=3, M=16, p_t_dbm=40.0):
    geo = ScenarioGeometry(user_positions=tuple(default_user_positions(K)))
    ch = generate_channels(geo, N, M, seed=seed)
    noise = NoiseAndGainParams.from_db(K, p_t_dbm=p_t_dbm)
    return ch, noise


def state_with_aux(instance):
    channels, reflection, W, noise = instance
    gamma = optimizer.update_gamma(channels, reflection, W, noise)
    tau = optimizer.update_tau(channels, reflection, W, gamma, noise)
    return channels, reflection, W, noise, gamma, tau


def tau_gradient_residual(channels, reflection, W, noise, gamma, tau):
    """Largest scaled finite-difference gradient of g_R w.r.t. each tau_k."""
    Z = system.gain_matrix(channels, reflection, W, noise.beta)
    n = system.noise_vector(channels, reflection, noise)
    total = np.sum(np.abs(Z) ** 2, axis=1) + n
    worst = 0.0
    for k in range(len(tau)):
        def g(z):
            t = tau.copy()
            t[k] = z[0]
            return system.g_r_nats(channels, reflection, W, gamma, t, noise)
        # g_R is quadratic in tau_k, so a wide central difference is exact up to rounding
        step = abs(tau[k]) + 1e-3
        grad = oracle.finite_difference_gradient(g, np.array([tau[k]]), step)[0]
        scale = 2 * math.sqrt(1 + gamma[k]) * abs(Z[k, k]) + 2 * abs(tau[k]) * total[k] + 1e-300
        worst = max(worst, abs(grad) / scale)
    return worst


def kkt_residuals(channels, reflection, gamma, tau, noise, config=OptimizerConfig()):
    """(stationarity, slackness, power) for the beamformer block at its returned point."""
    eff = optimizer.effective_channels(channels, reflection, gamma, tau, noise)
    W, mu = optimizer.update_beamformers(eff, gamma, noise.p_t, config)
    p = system.transmit_power(W)

    def lagrangian(X):
        return system.g_r_nats(channels, reflection, X, gamma, tau, noise) - mu * (system.transmit_power(X) - noise.p_t)

    # the Lagrangian is quadratic in W: wide central differences are exact up to rounding
    step = float(np.abs(W).max()) + 1e-30
    grad = oracle.finite_difference_gradient(lagrangian, W, step)
    B = eff.h_tilde.T * np.sqrt(1 + gamma)[None, :]
    scale = (np.linalg.norm(B) + np.linalg.norm(eff.a_matrix @ W) + mu * np.linalg.norm(W)) + 1e-300
    return np.linalg.norm(grad) / scale, abs(mu * (noise.p_t - p)), p, W


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def instance(rng):
    return random_instance(rng)


@pytest.fixture
def acceptance_report():
    def record(criterion, passed, detail=""):
        _acceptance_lines.append(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
