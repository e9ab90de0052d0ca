"""Channel generation: path loss, Rician/Rayleigh fading and near-field horn links."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class PathLossParams:
    c0_db: float = -30.0
    d0_m: float = 1.0
    kappa: float = 2.5

    def __post_init__(self):
        if not self.d0_m > 0:
            raise ValueError("d0_m must be positive")
        if not self.kappa >= 0:
            raise ValueError("kappa must be nonnegative")


@dataclass(frozen=True)
class LinkModels:
    """Large-scale parameters for the two random link classes."""

    bs_ris: PathLossParams = PathLossParams(kappa=2.5)
    ris_user: PathLossParams = PathLossParams(kappa=3.0)
    rician_factor_db: float = 3.0
    # LoS steering angles in degrees: (azimuth, elevation) at the BS and at the RIS.
    los_bs_angles: Tuple[float, float] = (0.0, 0.0)
    los_ris_angles: Tuple[float, float] = (0.0, 0.0)


def default_user_positions(n_users: int, ris_position=(50.0, 0.0, 0.0),
                           near_distance=2.0, far_distance=20.0):
    """Users 0..K-2 on the BS-facing side at ``near_distance``; the last user behind the RIS."""
    ris = np.asarray(ris_position, dtype=float)
    users = []
    n_near = n_users - 1
    for k in range(n_near):
        # spread over the half-plane facing the BS (-x side)
        angle = math.pi / 2 + math.pi * (k + 1) / (n_near + 1)
        users.append(tuple(float(x) for x in ris + near_distance * np.array([math.cos(angle), math.sin(angle), 0.0])))
    users.append(tuple(float(x) for x in ris + np.array([far_distance, 0.0, 0.0])))
    return users


@dataclass(frozen=True)
class ScenarioGeometry:
    bs_position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    ris_position: Tuple[float, float, float] = (50.0, 0.0, 0.0)
    user_positions: Tuple[Tuple[float, float, float], ...] = field(
        default_factory=lambda: tuple(default_user_positions(4)))
    horn_offsets: Tuple[Tuple[float, float, float], Tuple[float, float, float]] = (
        (-0.25, 0.0, 0.0), (0.25, 0.0, 0.0))
    element_spacing: float = 0.5
    carrier_wavelength: float = 0.1

    def __post_init__(self):
        if len(self.user_positions) < 2:
            raise ValueError("geometry needs at least two users (one reflect-served, one relay-served)")
        if self.element_spacing <= 0 or self.carrier_wavelength <= 0:
            raise ValueError("element_spacing and carrier_wavelength must be positive")
        if self.bs_ris_distance <= 0:
            raise ValueError("BS and RIS positions coincide")
        if np.any(self.user_distances <= 0):
            raise ValueError("a user is located at the RIS position")

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    @property
    def bs_ris_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.ris_position, self.bs_position)))

    @property
    def user_distances(self) -> np.ndarray:
        return np.linalg.norm(np.asarray(self.user_positions, dtype=float)
                              - np.asarray(self.ris_position, dtype=float), axis=1)

    def horn_positions(self):
        ris = np.asarray(self.ris_position, dtype=float)
        return ris + np.asarray(self.horn_offsets[0]), ris + np.asarray(self.horn_offsets[1])

    def element_positions(self, n_elements: int) -> np.ndarray:
        """Planar array in the y-z plane centred on the RIS, as close to square as M allows."""
        rows, cols = planar_shape(n_elements)
        step = self.element_spacing * self.carrier_wavelength
        y = (np.arange(cols) - (cols - 1) / 2.0) * step
        z = (np.arange(rows) - (rows - 1) / 2.0) * step
        zz, yy = np.meshgrid(z, y, indexing="ij")
        pos = np.zeros((n_elements, 3))
        pos[:, 1] = yy.ravel()
        pos[:, 2] = zz.ravel()
        return pos + np.asarray(self.ris_position, dtype=float)


@dataclass(frozen=True)
class ChannelSet:
    """One channel realization.

    Attributes
    ----------
    g_bs_ris : (M, N) BS -> RIS-1 channel ``G``.
    h_users : (K, M) RIS -> user channels; the last row is RIS-2 -> relay user.
    g_t : (M,) RIS-1 -> horn-1.
    g_r : (M,) horn-2 -> RIS-2.
    """

    g_bs_ris: np.ndarray
    h_users: np.ndarray
    g_t: np.ndarray
    g_r: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.g_bs_ris, dtype=complex)
        H = np.atleast_2d(np.asarray(self.h_users, dtype=complex))
        gt = np.asarray(self.g_t, dtype=complex)
        gr = np.asarray(self.g_r, dtype=complex)
        M = G.shape[0]
        if G.ndim != 2 or H.shape[1] != M or gt.shape != (M,) or gr.shape != (M,):
            raise ValueError("inconsistent channel dimensions")
        for a in (G, H, gt, gr):
            if not np.all(np.isfinite(a)):
                raise ValueError("channel entries must be finite")
        object.__setattr__(self, "g_bs_ris", G)
        object.__setattr__(self, "h_users", H)
        object.__setattr__(self, "g_t", gt)
        object.__setattr__(self, "g_r", gr)

    @property
    def n_elements(self) -> int:
        return self.g_bs_ris.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.g_bs_ris.shape[1]

    @property
    def n_users(self) -> int:
        return self.h_users.shape[0]


def path_loss(d, p: PathLossParams) -> float:
    """Linear power gain ``C0 (d0/d)^kappa``."""
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    return 10.0 ** (p.c0_db / 10.0) * (p.d0_m / d) ** p.kappa


def planar_shape(n: int) -> Tuple[int, int]:
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def ula_steering(n: int, azimuth_deg: float, spacing: float = 0.5) -> np.ndarray:
    return np.exp(1j * 2 * np.pi * spacing * np.arange(n) * np.sin(np.deg2rad(azimuth_deg)))


def upa_steering(n: int, azimuth_deg: float, elevation_deg: float, spacing: float = 0.5) -> np.ndarray:
    rows, cols = planar_shape(n)
    az, el = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    iz, iy = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    phase = 2 * np.pi * spacing * (iy.ravel() * np.sin(az) * np.cos(el) + iz.ravel() * np.sin(el))
    return np.exp(1j * phase)


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def rayleigh_channel(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    if not gain > 0:
        raise ValueError("gain must be positive")
    return np.sqrt(gain) * _cn(rng, (rows, cols))


def rician_channel(rows: int, cols: int, rician_factor_db: float, gain: float,
                   rng: np.random.Generator, h_los: Optional[np.ndarray] = None) -> np.ndarray:
    """Rician matrix with per-entry second moment ``gain``.

    ``h_los`` defaults to the all-ones boresight outer product. An infinite
    Rician factor returns the scaled LoS component and draws nothing.
    """
    if not gain > 0:
        raise ValueError("gain must be positive")
    if math.isnan(rician_factor_db):
        raise ValueError("rician_factor_db must be a number")
    if h_los is None:
        h_los = np.ones((rows, cols), dtype=complex)
    if rician_factor_db == math.inf:
        return np.sqrt(gain) * np.asarray(h_los, dtype=complex)
    k = 10.0 ** (rician_factor_db / 10.0)
    nlos = _cn(rng, (rows, cols))
    return np.sqrt(gain) * (np.sqrt(k / (1 + k)) * h_los + np.sqrt(1 / (1 + k)) * nlos)


def near_field_channel(element_positions, horn_position, wavelength: float) -> np.ndarray:
    """Free-space spherical-wave response between each element and a horn."""
    d = np.linalg.norm(np.asarray(element_positions, dtype=float)
                       - np.asarray(horn_position, dtype=float), axis=-1)
    if np.any(d <= 0):
        raise ValueError("an element coincides with the horn position")
    return wavelength / (4 * np.pi * d) * np.exp(-2j * np.pi * d / wavelength)


def generate_channels(geometry: ScenarioGeometry, n_antennas: int, n_elements: int,
                      links: LinkModels = LinkModels(), seed=None) -> ChannelSet:
    """Draw one realization. ``seed`` may be an int or a ``numpy.random.Generator``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    M, N = n_elements, n_antennas
    lam = geometry.carrier_wavelength
    h_los = np.outer(upa_steering(M, *links.los_ris_angles, spacing=geometry.element_spacing),
                     ula_steering(N, links.los_bs_angles[0]).conj())
    G = rician_channel(M, N, links.rician_factor_db,
                       path_loss(geometry.bs_ris_distance, links.bs_ris), rng, h_los=h_los)
    H = np.stack([rayleigh_channel(M, 1, path_loss(d, links.ris_user), rng)[:, 0]
                  for d in geometry.user_distances])
    elements = geometry.element_positions(M)
    horn1, horn2 = geometry.horn_positions()
    g_t = near_field_channel(elements, horn1, lam)
    g_r = near_field_channel(elements, horn2, lam)
    return ChannelSet(G, H, g_t, g_r)


def dump_channels(channels: ChannelSet, path) -> None:
    """Plain-text dump: ``M N K`` header, then one ``re im`` pair per line.

    Order: G (row-major), h_users (row-major), g_t, g_r.
    """
    lines = [f"{channels.n_elements} {channels.n_antennas} {channels.n_users}"]
    for arr in (channels.g_bs_ris, channels.h_users, channels.g_t, channels.g_r):
        for z in np.ravel(arr, order="C"):
            lines.append(f"{float(z.real)!r} {float(z.imag)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_channels(path) -> ChannelSet:
    with open(path) as fh:
        header = fh.readline().split()
        M, N, K = (int(x) for x in header)
        data = np.loadtxt(fh, ndmin=2)
    z = data[:, 0] + 1j * data[:, 1]
    sizes = [M * N, K * M, M, M]
    if z.size != sum(sizes):
        raise ValueError(f"expected {sum(sizes)} entries, found {z.size}")
    parts = np.split(z, np.cumsum(sizes)[:-1])
    return ChannelSet(parts[0].reshape(M, N), parts[1].reshape(K, M), parts[2], parts[3])

