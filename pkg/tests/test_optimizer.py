import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfris import optimizer, oracle, system
from dfris.optimizer import BisectionError, EffectiveChannels, OptimizerConfig
from dfris.system import NoiseAndGainParams, ReflectionState

from conftest import (cn, kkt_residuals, physical_instance, random_instance,
                      state_with_aux, tau_gradient_residual)


# ---------------------------------------------------------------- gamma / tau

def test_gamma_zero_for_zero_beams(instance):
    channels, reflection, W, noise = instance
    assert np.all(optimizer.update_gamma(channels, reflection, np.zeros_like(W), noise) == 0)


def test_gamma_relay_entry_is_relay_sinr(instance):
    channels, reflection, W, noise = instance
    g = optimizer.update_gamma(channels, reflection, W, noise)
    assert g[-1] == system.sinr_relay_user(channels, reflection, W, noise)


def test_gamma_maximizes_f_r_per_axis(rng):
    for _ in range(10):
        channels, reflection, W, noise = random_instance(rng)
        gamma = optimizer.update_gamma(channels, reflection, W, noise)
        for k in range(channels.n_users):
            def f(x):
                g = gamma.copy()
                g[k] = x
                return system.f_r_nats(channels, reflection, W, g, noise)
            best = oracle.golden_section_max(f, 0.0, 10 * gamma[k] + 10)
            assert best == pytest.approx(gamma[k], rel=1e-6, abs=1e-6)


def test_tau_reflect_branch_with_zero_gamma(instance):
    channels, reflection, W, noise = instance
    tau = optimizer.update_tau(channels, reflection, W, np.zeros(3), noise)
    Gw = channels.g_bs_ris @ W
    amps = [np.vdot(channels.h_users[0], reflection.phi1 * Gw[:, i]) for i in range(3)]
    expected = amps[0] / (sum(abs(a) ** 2 for a in amps) + noise.sigma_k_sq[0])
    assert tau[0] == pytest.approx(expected, rel=1e-12)


def test_tau_maximizes_g_r_on_grid(rng):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
    for k in range(3):
        def g(z):
            t = tau.copy()
            t[k] = z
            return system.g_r_nats(channels, reflection, W, gamma, t, noise)
        # coarse grid around the candidate, then golden refinement along each axis
        r = 2 * abs(tau[k]) + 1e-3
        xs = np.linspace(tau[k].real - r, tau[k].real + r, 41)
        ys = np.linspace(tau[k].imag - r, tau[k].imag + r, 41)
        vals = [[g(x + 1j * y) for y in ys] for x in xs]
        i, j = np.unravel_index(np.argmax(vals), (41, 41))
        x, y = xs[i], ys[j]
        for _ in range(5):
            x = oracle.golden_section_max(lambda a: g(a + 1j * y), x - r, x + r)
            y = oracle.golden_section_max(lambda b: g(x + 1j * b), y - r, y + r)
        assert abs((x + 1j * y) - tau[k]) <= 1e-5 * max(abs(tau[k]), 1.0)


def test_tau_finite_difference_gradient_vanishes(rng):
    for _ in range(10):
        state = state_with_aux(random_instance(rng))
        assert tau_gradient_residual(*state) <= 1e-6


# ---------------------------------------------------------------- beamformers

def test_effective_channels_zero_tau(instance):
    channels, reflection, W, noise = instance
    eff = optimizer.effective_channels(channels, reflection, np.ones(3), np.zeros(3), noise)
    assert not np.any(eff.a_matrix)


def test_effective_channels_rank_and_gram(rng):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng, N=6, K=3))
    eff = optimizer.effective_channels(channels, reflection, gamma, tau, noise)
    assert np.linalg.matrix_rank(eff.a_matrix, tol=1e-10 * np.abs(eff.a_matrix).max()) <= 3
    assert np.linalg.eigvalsh(eff.a_matrix)[0] >= -1e-10 * np.abs(eff.a_matrix).max()
    N = channels.n_antennas
    # h~_k from its definition, then the Gram matrix by loops
    phi1_g = reflection.phi1[:, None] * channels.g_bs_ris
    front = np.sum(channels.h_users[-1].conj() * reflection.phi2 * channels.g_r)
    hs = []
    for k in range(3):
        if k < 2:
            row = tau[k].conjugate() * (channels.h_users[k].conj() @ phi1_g)
        else:
            row = math.sqrt(noise.beta) * tau[k].conjugate() * front * (channels.g_t.conj() @ phi1_g)
        hs.append(row.conj())
    A = np.zeros((N, N), complex)
    for h in hs:
        for a in range(N):
            for b in range(N):
                A[a, b] += h[a] * h[b].conjugate()
    np.testing.assert_allclose(eff.a_matrix, A, rtol=0, atol=1e-12 * np.abs(A).max())
    np.testing.assert_allclose(eff.h_tilde, np.array(hs), rtol=1e-12)


def test_beamformers_inactive_constraint():
    h = np.array([[1.0 + 1.0j, 0.5, -2.0j]])
    eff = EffectiveChannels(h, np.eye(3, dtype=complex))
    W, mu = optimizer.update_beamformers(eff, np.zeros(1), 1e6)
    assert mu == 0.0
    np.testing.assert_allclose(W[:, 0], h[0], rtol=1e-12)


def test_beamformers_tiny_budget_is_active(rng):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
    eff = optimizer.effective_channels(channels, reflection, gamma, tau, noise)
    for p_t in (1e-3, 1e-6, 1e-9):
        Wn, mu = optimizer.update_beamformers(eff, gamma, p_t)
        assert system.transmit_power(Wn) == pytest.approx(p_t, rel=1e-8)
        assert mu > 0
    _, mu_big = optimizer.update_beamformers(eff, gamma, 1e-12)
    assert mu_big > mu


def test_beamformers_reject_nonpositive_budget(rng):
    eff = EffectiveChannels(np.ones((1, 2), complex), np.eye(2, dtype=complex))
    with pytest.raises(ValueError):
        optimizer.update_beamformers(eff, np.zeros(1), 0.0)


def test_beamformers_zero_channels():
    eff = EffectiveChannels(np.zeros((2, 3), complex), np.zeros((3, 3), complex))
    W, mu = optimizer.update_beamformers(eff, np.ones(2), 1.0)
    assert mu == 0.0 and not np.any(W)


def test_bisection_cap_raises():
    eff = EffectiveChannels(np.ones((1, 2), complex) * 1e6, np.eye(2, dtype=complex) * 1e-12)
    cfg = OptimizerConfig(bisection_max_steps=1)
    with pytest.raises(BisectionError):
        optimizer.update_beamformers(eff, np.zeros(1), 1e-9, cfg)


def test_beamformer_kkt_on_random_state(rng):
    for _ in range(5):
        channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
        stat, slack, p, _ = kkt_residuals(channels, reflection, gamma, tau, noise)
        assert stat <= 1e-6
        assert slack <= 1e-6 * noise.p_t
        assert p <= noise.p_t * (1 + 1e-9)


# ---------------------------------------------------------------- phase data

def test_phase_data_zero_tau(instance):
    channels, reflection, W, noise = instance
    R, d = optimizer.mm_phase_data_phi1(channels, reflection, W, np.ones(3), np.zeros(3), noise)
    V, b = optimizer.mm_phase_data_phi2(channels, reflection, W, np.ones(3), np.zeros(3), noise)
    for a in (R, d, V, b):
        assert not np.any(a)


def test_phase_data_psd(rng):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
    for Q, _ in (optimizer.mm_phase_data_phi1(channels, reflection, W, gamma, tau, noise),
                 optimizer.mm_phase_data_phi2(channels, reflection, W, gamma, tau, noise)):
        np.testing.assert_allclose(Q, Q.conj().T, atol=0)
        ev = np.linalg.eigvalsh(Q)
        assert ev[0] >= -1e-10 * max(ev[-1], 1.0)


def _g_pair(state, face, a, b):
    channels, reflection, W, noise, gamma, tau = state
    ra = ReflectionState(a, reflection.phi2) if face == 1 else ReflectionState(reflection.phi1, a)
    rb = ReflectionState(b, reflection.phi2) if face == 1 else ReflectionState(reflection.phi1, b)
    ga = system.g_r_nats(channels, ra, W, gamma, tau, noise)
    gb = system.g_r_nats(channels, rb, W, gamma, tau, noise)
    return ga, gb


@pytest.mark.parametrize("face", [1, 2])
def test_phase_objective_matches_surrogate_differences(rng, face):
    for _ in range(10):
        state = state_with_aux(random_instance(rng))
        channels, reflection, W, noise, gamma, tau = state
        data = optimizer.mm_phase_data_phi1 if face == 1 else optimizer.mm_phase_data_phi2
        Q, d = data(channels, reflection, W, gamma, tau, noise)
        M = channels.n_elements
        a = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
        b = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
        ga, gb = _g_pair(state, face, a, b)
        lhs = optimizer.mm_objective(Q, d, a) - optimizer.mm_objective(Q, d, b)
        assert lhs == pytest.approx(-(ga - gb), abs=1e-10 * max(1.0, abs(ga), abs(gb)))


def test_phi1_objective_matches_direct_bracket(rng):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
    R, d = optimizer.mm_phase_data_phi1(channels, reflection, W, gamma, tau, noise)
    K, M = 3, channels.n_elements
    front = np.sum(channels.h_users[-1].conj() * reflection.phi2 * channels.g_r)
    phi = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
    # phi1-dependent part of the surrogate, straight from the received amplitudes
    bracket = 0.0
    for k in range(K):
        lead = channels.h_users[k].conj() if k < K - 1 else math.sqrt(noise.beta) * front * channels.g_t.conj()
        amps = [np.sum(lead * phi * (channels.g_bs_ris @ W[:, i])) for i in range(K)]
        bracket += 2 * math.sqrt(1 + gamma[k]) * (tau[k].conjugate() * amps[k]).real
        bracket -= abs(tau[k]) ** 2 * sum(abs(a) ** 2 for a in amps)
    assert optimizer.mm_objective(R, d, phi) == pytest.approx(-bracket, rel=1e-10, abs=1e-12)


def test_phi2_data_without_amplifier_noise_is_smaller(rng):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
    V, b = optimizer.mm_phase_data_phi2(channels, reflection, W, gamma, tau, noise)
    V0, b0 = optimizer.mm_phase_data_phi2(channels, reflection, W, gamma, tau, noise,
                                          include_amplifier_noise=False)
    np.testing.assert_allclose(b, b0)
    assert np.linalg.eigvalsh(V - V0)[0] >= -1e-12 * np.abs(V).max()


# ---------------------------------------------------------------- MM

def test_mm_step_linear_problem(rng):
    d = cn(rng, 6)
    phi = np.exp(1j * rng.uniform(0, 6, 6))
    out = optimizer.mm_step(np.zeros((6, 6), complex), d, phi)
    np.testing.assert_allclose(out, np.exp(1j * np.angle(d)), rtol=1e-15)


def test_mm_step_degenerate_zero_vector():
    lam = 2.5
    phi = np.exp(1j * np.array([0.4, -1.0, 2.0]))
    out = optimizer.mm_step(lam * np.eye(3), np.zeros(3), phi)
    np.testing.assert_array_equal(out, np.ones(3))
    assert optimizer.mm_objective(lam * np.eye(3), np.zeros(3), out) == pytest.approx(
        optimizer.mm_objective(lam * np.eye(3), np.zeros(3), phi))


def random_quadratic(rng, M):
    X = cn(rng, 2 * M, M)
    return X.conj().T @ X, cn(rng, M) * 3


def test_majorizer_dominates(rng):
    Q, d = random_quadratic(rng, 8)
    lam = optimizer.largest_eigenvalue(Q)
    t = np.exp(1j * rng.uniform(0, 6.3, 8))
    assert optimizer.mm_surrogate(Q, d, t, t, lam) == pytest.approx(optimizer.mm_objective(Q, d, t), rel=1e-12)
    for _ in range(100):
        phi = np.exp(1j * rng.uniform(0, 6.3, 8))
        assert optimizer.mm_surrogate(Q, d, phi, t, lam) >= optimizer.mm_objective(Q, d, phi) - 1e-10 * lam


def test_mm_monotone_over_steps(rng):
    Q, d = random_quadratic(rng, 8)
    phi = np.exp(1j * rng.uniform(0, 6.3, 8))
    objs = [optimizer.mm_objective(Q, d, phi)]
    for _ in range(50):
        phi = optimizer.mm_step(Q, d, phi)
        objs.append(optimizer.mm_objective(Q, d, phi))
    assert np.all(np.diff(objs) <= 1e-12 * np.abs(objs).max())


@pytest.mark.parametrize("update", [optimizer.update_phi1, optimizer.update_phi2])
def test_phase_update_fast_return_when_optimal(rng, update):
    channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
    cfg = OptimizerConfig(mm_max_iters=5000, mm_rel_tol=1e-14)
    phi, _ = update(channels, reflection, W, gamma, tau, noise, cfg)
    again = (ReflectionState(phi, reflection.phi2) if update is optimizer.update_phi1
             else ReflectionState(reflection.phi1, phi))
    _, steps = update(channels, again, W, gamma, tau, noise)
    assert steps <= 2


def _grid_min(Q, d, points=721):
    theta = np.linspace(0, 2 * np.pi, points)
    a, b = np.meshgrid(theta, theta, indexing="ij")
    P = np.stack([np.exp(1j * a), np.exp(1j * b)], axis=-1)
    quad = np.real(np.einsum("...i,ij,...j->...", P.conj(), Q, P))
    lin = np.real(np.einsum("...i,i->...", P.conj(), d))
    return float(np.min(quad - 2 * lin))


@pytest.mark.parametrize("face", [1, 2])
def test_phase_update_matches_grid_optimum_m2(face):
    rng = np.random.default_rng(7 + face)
    for _ in range(10):
        state = state_with_aux(random_instance(rng, N=2, K=2, M=2))
        channels, reflection, W, noise, gamma, tau = state
        if face == 1:
            Q, d = optimizer.mm_phase_data_phi1(channels, reflection, W, gamma, tau, noise)
            phi, _ = optimizer.update_phi1(channels, reflection, W, gamma, tau, noise)
        else:
            Q, d = optimizer.mm_phase_data_phi2(channels, reflection, W, gamma, tau, noise)
            phi, _ = optimizer.update_phi2(channels, reflection, W, gamma, tau, noise)
        best = _grid_min(Q, d)
        got = optimizer.mm_objective(Q, d, phi)
        assert got <= best + 1e-3 * max(1.0, abs(best))


def test_phase_updates_never_decrease_g_r(rng):
    for _ in range(10):
        channels, reflection, W, noise, gamma, tau = state_with_aux(random_instance(rng))
        g0 = system.g_r_nats(channels, reflection, W, gamma, tau, noise)
        phi1, _ = optimizer.update_phi1(channels, reflection, W, gamma, tau, noise)
        r1 = ReflectionState(phi1, reflection.phi2)
        g1 = system.g_r_nats(channels, r1, W, gamma, tau, noise)
        phi2, _ = optimizer.update_phi2(channels, r1, W, gamma, tau, noise)
        g2 = system.g_r_nats(channels, ReflectionState(phi1, phi2), W, gamma, tau, noise)
        assert g1 >= g0 - 1e-9 * abs(g0)
        assert g2 >= g1 - 1e-9 * abs(g1)


# ---------------------------------------------------------------- quantization

def test_quantize_one_bit():
    p = np.exp(1j * np.linspace(-3, 3, 25))
    q = optimizer.quantize_phases(p, 1)
    assert np.allclose(np.abs(np.sin(np.angle(q))), 0.0, atol=1e-12)


def test_quantize_hand_value():
    q = optimizer.quantize_phases(np.array([np.exp(0.3j * np.pi)]), 2)
    assert np.angle(q[0]) == pytest.approx(np.pi / 2)


@settings(max_examples=50, deadline=None)
@given(bits=st.integers(1, 16), angle=st.floats(-math.pi, math.pi), mag=st.floats(1e-6, 1e6))
def test_quantize_error_bound(bits, angle, mag):
    q = optimizer.quantize_phases(np.array([mag * np.exp(1j * angle)]), bits)
    err = abs(np.angle(q[0] * np.exp(-1j * angle)))
    assert err <= math.pi / 2 ** bits + 1e-12
    assert abs(abs(q[0]) - 1) <= 1e-15


def test_quantize_rejects_zero_bits():
    with pytest.raises(ValueError):
        optimizer.quantize_phases(np.ones(2), 0)


def test_quantize_with_rotation_never_worse(rng):
    for bits in (1, 2, 3):
        phi = np.exp(1j * rng.uniform(0, 6.3, 16))
        plain = optimizer.quantize_phases(phi, bits)
        rot = optimizer.quantize_with_rotation(phi, bits)
        # rotation-invariant distance: best common phase alignment
        def dist(q):
            c = np.vdot(q, phi)
            return np.sum(np.abs(phi - q * np.exp(1j * np.angle(c))) ** 2)
        assert dist(rot) <= dist(plain) + 1e-12
        delta = 2 * np.pi / 2 ** bits
        steps = np.angle(rot) / delta
        np.testing.assert_allclose(steps, np.round(steps), atol=1e-9)


# ---------------------------------------------------------------- full runs

def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(outer_max_iters=0)
    with pytest.raises(ValueError):
        OptimizerConfig(outer_rel_tol=0)
    with pytest.raises(ValueError):
        OptimizerConfig(bisection_mu_bracket_growth=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(resolution_bits=0)


def test_zero_power_budget_rejected():
    with pytest.raises(ValueError):
        NoiseAndGainParams(np.ones(2), 0.1, 1.0, 0.0)


def check_run_invariants(channels, noise, result):
    assert system.transmit_power(result.W) <= noise.p_t * (1 + 1e-9)
    for phi in (result.reflection.phi1, result.reflection.phi2):
        assert np.max(np.abs(np.abs(phi) - 1)) <= 1e-12
    assert result.sum_rate == pytest.approx(
        system.sum_rate(channels, result.reflection, result.W, noise), rel=1e-12)


def test_run_feasible_and_monotone():
    for seed in range(5):
        channels, noise = physical_instance(seed)
        res = optimizer.run(channels, noise, OptimizerConfig(seed=seed))
        check_run_invariants(channels, noise, res)
        assert res.sum_rate >= res.initial_sum_rate
        rates = [row.sum_rate for row in res.trace]
        assert np.all(np.diff(rates) >= -1e-9 * np.abs(rates).max())
        order = ["tau", "w", "phi1", "phi2"]
        prev = None
        for row in res.trace:
            vals = [row.g_r[k] for k in order]
            if prev is not None:
                vals = [prev] + vals
            assert np.all(np.diff(vals) >= -1e-9 * np.abs(vals).max())
            assert row.transmit_power <= noise.p_t * (1 + 1e-9)
            prev = row.g_r["phi2"]


def test_run_sink_receives_every_row():
    channels, noise = physical_instance(1)
    rows = []
    res = optimizer.run(channels, noise, OptimizerConfig(), sink=rows.append)
    assert [r.iteration for r in rows] == list(range(1, res.iterations + 1))


def test_run_reports_cap():
    channels, noise = physical_instance(2)
    res = optimizer.run(channels, noise, OptimizerConfig(outer_max_iters=1, outer_rel_tol=1e-15))
    assert res.iterations == 1 and not res.converged


def test_run_is_deterministic():
    channels, noise = physical_instance(3)
    a = optimizer.run(channels, noise, OptimizerConfig(seed=4))
    b = optimizer.run(channels, noise, OptimizerConfig(seed=4))
    assert a.sum_rate == b.sum_rate
    np.testing.assert_array_equal(a.W, b.W)


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_quantized_run_feasible_and_dominated(bits):
    for seed in range(4):
        channels, noise = physical_instance(seed)
        cont = optimizer.run(channels, noise, OptimizerConfig(seed=seed))
        quant = optimizer.run(channels, noise, OptimizerConfig(seed=seed, resolution_bits=bits))
        check_run_invariants(channels, noise, quant)
        delta = 2 * np.pi / 2 ** bits
        for phi in (quant.reflection.phi1, quant.reflection.phi2):
            steps = np.angle(phi) / delta
            np.testing.assert_allclose(steps, np.round(steps), atol=1e-9)
        assert quant.reflection.resolution_bits == bits
        assert quant.sum_rate <= cont.sum_rate * (1 + 1e-9)


def test_run_with_supplied_start():
    channels, noise = physical_instance(5)
    refl = ReflectionState(np.ones(16), np.ones(16))
    W = optimizer.matched_filter(channels, refl, noise)
    res = optimizer.run(channels, noise, OptimizerConfig(resolution_bits=2), init=(refl, W))
    check_run_invariants(channels, noise, res)
    assert res.warm_start_iterations == 0


def test_optimize_beamformers_improves_rate():
    channels, noise = physical_instance(6)
    refl, W0 = optimizer.initial_point(channels, noise, OptimizerConfig())
    W = optimizer.optimize_beamformers(channels, refl, noise)
    assert system.sum_rate(channels, refl, W, noise) >= system.sum_rate(channels, refl, W0, noise)
    assert system.transmit_power(W) <= noise.p_t * (1 + 1e-9)
