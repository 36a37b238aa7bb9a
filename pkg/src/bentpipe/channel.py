"""Feeder-link and user-link channel generation for a GEO bent-pipe payload.

The feeder link is an L x L line-of-sight MIMO channel per sub-carrier,
stacked block-diagonally into the N x N matrix ``F`` (N = S * L).  The user
link is a Rician N x K matrix ``H`` whose line-of-sight part follows a
Gaussian-taper multibeam pattern.

Everything here is a pure function of its inputs; randomness enters only
through the impairment arrays, which are drawn by :mod:`bentpipe.scenario`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .units import SPEED_OF_LIGHT, db_to_linear, parabolic_gain

EARTH_RADIUS_M = 6_371_000.0
GEO_ALTITUDE_M = 35_786_000.0
GEO_RADIUS_M = EARTH_RADIUS_M + GEO_ALTITUDE_M


class ChannelDomainError(ValueError):
    """Raised for degenerate geometry (zero distance)."""


def ground_ecef(lat_deg: float, lon_deg: float, alt_m: float = 0.0) -> np.ndarray:
    lat, lon = np.radians(lat_deg), np.radians(lon_deg)
    r = EARTH_RADIUS_M + alt_m
    return np.array([r * np.cos(lat) * np.cos(lon), r * np.cos(lat) * np.sin(lon), r * np.sin(lat)])


def geo_ecef(sat_longitude_deg: float) -> np.ndarray:
    lon = np.radians(sat_longitude_deg)
    return np.array([GEO_RADIUS_M * np.cos(lon), GEO_RADIUS_M * np.sin(lon), 0.0])


def slant_range(lat_deg: float, lon_deg: float, alt_m: float, sat_longitude_deg: float) -> float:
    """Straight-line distance (m) from a ground point to a GEO satellite."""
    return float(np.linalg.norm(ground_ecef(lat_deg, lon_deg, alt_m) - geo_ecef(sat_longitude_deg)))


def _check_range(r) -> None:
    if np.any(np.asarray(r) <= 0.0):
        raise ChannelDomainError("zero slant range: degenerate geometry")


# --------------------------------------------------------------------------
# Feeder link
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeederGeometry:
    gw_positions: tuple[tuple[float, float, float], ...]  # (lat deg, lon deg, alt m)
    sat_longitude: float
    rx_element_separation: float
    gw_antenna_diameter: float
    sat_rx_antenna_diameter: float
    misc_loss_db: float
    subcarrier_freqs: tuple[float, ...]  # Hz
    num_feeds_per_gw: int = 1
    antenna_efficiency: float = 0.6
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        f = np.asarray(self.subcarrier_freqs, dtype=float)
        if f.size < 1 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("subcarrier frequencies must be positive and strictly increasing")
        if self.num_feeds_per_gw < 1:
            raise ValueError("num_feeds_per_gw must be >= 1")

    @property
    def num_subcarriers(self) -> int:
        return len(self.subcarrier_freqs)

    @property
    def num_feeds(self) -> int:
        return len(self.gw_positions) * self.num_feeds_per_gw

    def feed_positions(self) -> np.ndarray:
        """ECEF positions of the L ground feeds, GW-major order."""
        pts = [ground_ecef(*gw) for gw in self.gw_positions for _ in range(self.num_feeds_per_gw)]
        return np.array(pts)

    def rx_element_positions(self) -> np.ndarray:
        """ECEF positions of the L satellite receive elements.

        Elements sit on a line along the local east direction of the orbit,
        centred on the satellite and spaced by ``rx_element_separation``.
        """
        lon = np.radians(self.sat_longitude)
        east = np.array([-np.sin(lon), np.cos(lon), 0.0])
        L = self.num_feeds
        offsets = (np.arange(L) - (L - 1) / 2.0) * self.rx_element_separation
        return geo_ecef(self.sat_longitude)[None, :] + offsets[:, None] * east[None, :]

    def distances(self) -> np.ndarray:
        """r[m, n]: feed m to satellite element n, in metres."""
        gw = self.feed_positions()
        rx = self.rx_element_positions()
        return np.linalg.norm(gw[:, None, :] - rx[None, :, :], axis=-1)


@dataclass(frozen=True)
class FeederImpairments:
    phase_noise: np.ndarray  # (L, L) radians
    atm_amplitude: np.ndarray  # (L,) in (0, 1]
    atm_phase: np.ndarray  # (S, L) radians in [-pi, pi]

    def __post_init__(self):
        amp = np.asarray(self.atm_amplitude)
        if np.any(amp <= 0) or np.any(amp > 1):
            raise ValueError("atmospheric amplitude must lie in (0, 1]")
        if np.any(np.abs(self.atm_phase) > np.pi):
            raise ValueError("atmospheric phase must lie in [-pi, pi]")

    @classmethod
    def ideal(cls, num_feeds: int, num_subcarriers: int) -> "FeederImpairments":
        return cls(
            phase_noise=np.zeros((num_feeds, num_feeds)),
            atm_amplitude=np.ones(num_feeds),
            atm_phase=np.zeros((num_subcarriers, num_feeds)),
        )


@dataclass(frozen=True)
class FeederChannel:
    blocks: np.ndarray  # (S, L, L)
    assembled: np.ndarray  # (N, N)

    @property
    def num_subcarriers(self) -> int:
        return self.blocks.shape[0]

    @property
    def num_feeds(self) -> int:
        return self.blocks.shape[1]


def feeder_subcarrier_channel(
    s: int,
    geom: FeederGeometry,
    imp: FeederImpairments,
    distances: np.ndarray | None = None,
) -> np.ndarray:
    """L x L feeder-link matrix of sub-carrier ``s`` (0-based).

    ``sqrt(G_gw G_rx) * Ftilde * diag(alpha)``, with the miscellaneous loss
    applied as an amplitude factor.  ``distances`` overrides the geometric
    feed-to-element ranges.
    """
    if not 0 <= s < geom.num_subcarriers:
        raise IndexError(f"sub-carrier index {s} outside [0, {geom.num_subcarriers})")
    r = geom.distances() if distances is None else np.asarray(distances, dtype=float)
    _check_range(r)
    freq = geom.subcarrier_freqs[s]
    c0 = geom.speed_of_light
    g_gw = parabolic_gain(geom.gw_antenna_diameter, freq, geom.antenna_efficiency, c0)
    g_rx = parabolic_gain(geom.sat_rx_antenna_diameter, freq, geom.antenna_efficiency, c0)
    loss = np.sqrt(db_to_linear(-geom.misc_loss_db))

    psi = 4.0 * np.pi * freq * r / c0
    f_tilde = np.exp(-1j * (psi + imp.phase_noise)) / psi
    alpha = np.asarray(imp.atm_amplitude) * np.exp(-1j * np.asarray(imp.atm_phase)[s])
    return np.sqrt(g_gw * g_rx) * loss * f_tilde * alpha[None, :]


def assemble_feeder_channel(blocks: Sequence[np.ndarray]) -> FeederChannel:
    blocks = [np.asarray(b, dtype=complex) for b in blocks]
    if not blocks:
        raise ValueError("at least one sub-carrier block is required")
    L = blocks[0].shape[0]
    for b in blocks:
        if b.ndim != 2 or b.shape != (L, L):
            raise ValueError(f"inconsistent block shape {b.shape}, expected ({L}, {L})")
    return FeederChannel(blocks=np.stack(blocks), assembled=block_diag(*blocks))


def build_feeder_channel(geom: FeederGeometry, imp: FeederImpairments) -> FeederChannel:
    r = geom.distances()
    blocks = [feeder_subcarrier_channel(s, geom, imp, distances=r) for s in range(geom.num_subcarriers)]
    return assemble_feeder_channel(blocks)


# --------------------------------------------------------------------------
# User link
# --------------------------------------------------------------------------


def angular_separation(point_a, point_b, sat_longitude: float) -> float:
    """Angle (deg) between two ground points as seen from the satellite."""
    sat = geo_ecef(sat_longitude)
    u = ground_ecef(*point_a) - sat
    v = ground_ecef(*point_b) - sat
    cosang = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))


def beam_pattern_coefficient(beam_center, user_pos, beam_3db_width: float, sat_longitude: float) -> complex:
    """Gaussian-taper pattern amplitude of a beam towards a user.

    Power gain is ``10 ** (-0.3 * (theta / theta_3dB) ** 2)`` so the user
    sees -3 dB at ``theta = theta_3dB``; the returned amplitude is its square
    root, with zero phase.
    """
    if beam_3db_width <= 0:
        raise ValueError("beam_3db_width must be positive")
    theta = angular_separation(beam_center, user_pos, sat_longitude)
    return complex(np.sqrt(10.0 ** (-3.0 * theta**2 / (10.0 * beam_3db_width**2))))


@dataclass(frozen=True)
class UserLinkParams:
    user_positions: tuple[tuple[float, float], ...]
    rician_factor: float  # linear kappa
    wavelength: float
    user_rx_gain: float  # linear, end-to-end receive gain
    beam_centers: tuple[tuple[float, float], ...]
    beam_3db_width: float  # deg
    phase_noise: np.ndarray  # (N, K) radians
    nlos_fading: np.ndarray  # (N, K) complex, unit variance
    sat_longitude: float = 13.0

    def __post_init__(self):
        if self.rician_factor < 0:
            raise ValueError("rician factor must be non-negative")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        shape = (len(self.beam_centers), len(self.user_positions))
        if np.shape(self.phase_noise) != shape or np.shape(self.nlos_fading) != shape:
            raise ValueError(f"phase noise / NLOS arrays must have shape {shape}")

    def distances(self) -> np.ndarray:
        return np.array([slant_range(lat, lon, 0.0, self.sat_longitude) for lat, lon in self.user_positions])

    def pattern(self) -> np.ndarray:
        return np.array(
            [
                [beam_pattern_coefficient(c, u, self.beam_3db_width, self.sat_longitude) for u in self.user_positions]
                for c in self.beam_centers
            ]
        )


@dataclass(frozen=True)
class UserChannel:
    matrix: np.ndarray  # (N, K)

    def column(self, u: int) -> np.ndarray:
        return self.matrix[:, u]


def build_user_channel(params: UserLinkParams) -> UserChannel:
    d = params.distances()
    _check_range(d)
    psi = 2.0 * np.pi * d / params.wavelength  # (K,)
    kappa = params.rician_factor
    los = np.sqrt(kappa / (kappa + 1.0)) * params.pattern()
    nlos = np.sqrt(1.0 / (kappa + 1.0)) * np.asarray(params.nlos_fading)
    scale = np.sqrt(params.user_rx_gain) / psi
    phase = np.exp(-1j * (psi[None, :] + np.asarray(params.phase_noise)))
    H = scale[None, :] * phase * (los + nlos)
    if not np.all(np.isfinite(H)):
        raise ChannelDomainError("non-finite user channel entry")
    return UserChannel(matrix=H)
