"""Slow reference computations used to cross-check the vectorised code paths.

Nothing here calls into :mod:`dfris.system` or :mod:`dfris.optimizer`; the
duplication is deliberate.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

GRID_GUARD = 10 ** 6


@dataclass(frozen=True)
class GridSpec:
    phase_points_per_element: int
    elements: int
    bits: Optional[int] = None

    @classmethod
    def from_bits(cls, bits: int, elements: int) -> "GridSpec":
        return cls(2 ** bits, elements, bits)

    @property
    def size(self) -> int:
        """Number of joint (phi1, phi2) candidates."""
        return self.phase_points_per_element ** (2 * self.elements)


def loop_model_eval(channels, reflection, W, noise):
    """SINRs and sum rate from the received-signal models, written as scalar loops.

    Returns ``(sinrs, sum_rate_bits)``.
    """
    G, H, g_t, g_r = channels.g_bs_ris, channels.h_users, channels.g_t, channels.g_r
    phi1, phi2 = reflection.phi1, reflection.phi2
    M, N = G.shape
    K = H.shape[0]
    beta = noise.beta
    sigma = list(np.broadcast_to(noise.sigma_k_sq, (K,)))

    def bs_to_element(m, i):
        acc = 0j
        for n in range(N):
            acc += G[m, n] * W[n, i]
        return acc

    # coefficient of s_i at each user
    coeff = [[0j] * K for _ in range(K)]
    for k in range(K - 1):
        for i in range(K):
            acc = 0j
            for m in range(M):
                acc += H[k, m].conjugate() * phi1[m] * bs_to_element(m, i)
            coeff[k][i] = acc

    horn2_to_user = 0j
    for m in range(M):
        horn2_to_user += H[K - 1, m].conjugate() * phi2[m] * g_r[m]
    for i in range(K):
        at_horn1 = 0j
        for m in range(M):
            at_horn1 += g_t[m].conjugate() * phi1[m] * bs_to_element(m, i)
        coeff[K - 1][i] = math.sqrt(beta) * horn2_to_user * at_horn1

    sinrs = []
    for k in range(K):
        noise_power = sigma[k]
        if k == K - 1:
            noise_power += beta * noise.sigma0_sq * abs(horn2_to_user) ** 2
        interference = 0.0
        for i in range(K):
            if i != k:
                interference += abs(coeff[k][i]) ** 2
        sinrs.append(abs(coeff[k][k]) ** 2 / (interference + noise_power))
    rate = 0.0
    for s in sinrs:
        rate += math.log2(1.0 + s)
    return np.array(sinrs), rate


def finite_difference_gradient(field: Callable, point, step: float) -> np.ndarray:
    """Central differences per real coordinate.

    A complex ``point`` is split into real and imaginary parts; the result
    is returned as ``d/dRe + 1j d/dIm`` with the input's shape.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(point)
    is_complex = np.iscomplexobj(x)
    x = x.astype(complex if is_complex else float)
    flat = x.ravel()
    grad = np.zeros(flat.shape, dtype=complex if is_complex else float)
    directions = (1.0, 1j) if is_complex else (1.0,)
    for j in range(flat.size):
        for direction in directions:
            up = flat.copy()
            down = flat.copy()
            up[j] += step * direction
            down[j] -= step * direction
            df = (field(up.reshape(x.shape)) - field(down.reshape(x.shape))) / (2 * step)
            grad[j] += df * (1j if direction == 1j else 1.0)
    return grad.reshape(x.shape)


def golden_section_max(f: Callable[[float], float], lo: float, hi: float,
                       tol: float = 1e-12, max_iter: int = 500) -> float:
    """Argmax of a unimodal scalar function on ``[lo, hi]``."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def exhaustive_phase_search(channels, beamformer_rule: Callable, grid: GridSpec, noise,
                            make_reflection: Optional[Callable] = None):
    """Enumerate every discrete (phi1, phi2) pair.

    ``beamformer_rule(channels, reflection, noise) -> W`` picks the
    beamformers for each candidate. Ties keep the lexicographically first
    index tuple. Returns ``(phi1, phi2, best_rate)``.
    """
    if grid.elements != channels.n_elements:
        raise ValueError("grid element count does not match the channels")
    if grid.size > GRID_GUARD:
        raise ValueError(f"grid has {grid.size} candidates, above the {GRID_GUARD} guard")
    if make_reflection is None:
        from .system import ReflectionState as make_reflection  # container only
    P, M = grid.phase_points_per_element, grid.elements
    alphabet = np.exp(2j * np.pi * np.arange(P) / P)
    best = (-math.inf, None, None)
    for idx in itertools.product(range(P), repeat=2 * M):
        phi1 = alphabet[list(idx[:M])]
        phi2 = alphabet[list(idx[M:])]
        reflection = make_reflection(phi1, phi2, grid.bits)
        W = beamformer_rule(channels, reflection, noise)
        _, rate = loop_model_eval(channels, reflection, W, noise)
        if rate > best[0]:
            best = (rate, phi1, phi2)
    return best[1], best[2], best[0]
