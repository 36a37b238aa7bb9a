"""SINR, sum rate and power-consumption accounting for a design (W, B).

Shapes: ``W`` is N x K complex, ``B`` is N x N real non-negative with
``B[n, t]`` the gain routing received feeder stream ``t`` to beam ``n``,
``F`` is the N x N feeder matrix and ``H`` the N x K user matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

ZERO_REL_THRESHOLD = 1e-9


class PowerModelWarning(UserWarning):
    """The satellite power formula evaluated negative and was clamped."""


class UndefinedRatioError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PowerParams:
    gw_hw_power: float
    sat_hw_power: float
    rho_gw: float
    rho_sa: float
    delta_gw: float
    delta_sa: float
    baud_rate: float
    noise_cov_sat: np.ndarray  # (N,) W
    noise_user: np.ndarray  # (K,) W

    def __post_init__(self):
        if not (0 < self.rho_gw <= 1 and 0 < self.rho_sa <= 1):
            raise ValueError("amplifier efficiencies must lie in (0, 1]")
        if np.any(np.asarray(self.noise_cov_sat) <= 0) or np.any(np.asarray(self.noise_user) <= 0):
            raise ValueError("noise powers must be positive")
        if self.delta_gw < 0 or self.delta_sa < 0 or self.delta_gw + self.delta_sa <= 0:
            raise ValueError("weights must be non-negative with a positive sum")

    def with_weights(self, delta_gw: float, delta_sa: float) -> "PowerParams":
        return replace(self, delta_gw=delta_gw, delta_sa=delta_sa)


@dataclass(frozen=True)
class DesignVariables:
    W: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.B) < 0):
            raise ValueError("B must be element-wise non-negative")


@dataclass(frozen=True)
class MetricsReport:
    sinr_per_user: np.ndarray
    rate_total: float
    p_gw: float
    p_sat: float
    p_total_weighted: float
    swee: float
    active_fl_count: int
    warnings: tuple[str, ...] = ()


def is_hard_matching(B: np.ndarray) -> bool:
    """At most one non-zero per row and per column (C1, C2)."""
    nz = np.asarray(B) != 0
    return bool(np.all(nz.sum(axis=0) <= 1) and np.all(nz.sum(axis=1) <= 1))


def count_nonzero(values, rel: float = ZERO_REL_THRESHOLD) -> int:
    """Number of entries above ``rel`` times the largest magnitude."""
    v = np.abs(np.asarray(values, dtype=float)).ravel()
    if v.size == 0 or v.max() <= 0:
        return 0
    return int(np.count_nonzero(v > rel * v.max()))


def effective_gains(W, B, F, H) -> np.ndarray:
    """G[u, i] = h_u^H B F^H w_i."""
    return H.conj().T @ B @ F.conj().T @ W


def forwarded_noise(B, H, noise_cov_sat) -> np.ndarray:
    """h_u^H B Sigma B^T h_u for every user."""
    BH = B.T @ H  # (N, K), column u is B^T h_u
    return np.real(np.einsum("tu,t,tu->u", BH.conj(), noise_cov_sat, BH))


def sinr_all(W, B, F, H, power: PowerParams) -> np.ndarray:
    G = effective_gains(W, B, F, H)
    p = np.abs(G) ** 2
    signal = np.diag(p).copy()
    interference = p.sum(axis=1) - signal
    return signal / (interference + forwarded_noise(B, H, power.noise_cov_sat) + power.noise_user)


def sinr(u: int, W, B, F, H, power: PowerParams) -> float:
    return float(sinr_all(W, B, F, H, power)[u])


def sum_rate(W, B, F, H, power: PowerParams) -> float:
    return float(power.baud_rate * np.sum(np.log2(1.0 + sinr_all(W, B, F, H, power))))


def feeder_powers(W) -> np.ndarray:
    """P_t^GW for every feeder link t (row energies of W)."""
    return np.sum(np.abs(W) ** 2, axis=1)


def gw_feeder_power(t: int, W) -> float:
    return float(feeder_powers(W)[t])


def antenna_load(W, B, F, noise_cov_sat) -> np.ndarray:
    """Per-antenna budget usage sum_t B[n,t]^2 (sum_u |f_t^H w_u|^2 + sigma_t).

    Each received feeder stream is amplified independently, so the stream
    powers add per antenna; for a hard matching this equals the antenna
    output power.
    """
    gamma = np.sum(np.abs(F.conj().T @ W) ** 2, axis=1) + np.asarray(noise_cov_sat)
    return (np.asarray(B) ** 2) @ gamma


def active_fl_count(W) -> int:
    return count_nonzero(feeder_powers(W))


def gw_power(W, power: PowerParams, active: int | None = None) -> float:
    """Gateway power; ``active`` overrides the feeder-link count taken from W."""
    t_fd = active_fl_count(W) if active is None else active
    return float(power.gw_hw_power * t_fd + (power.rho_gw + 1.0) / power.rho_gw * np.sum(np.abs(W) ** 2))


def satellite_power_raw(W, B, F, power: PowerParams, active: int | None = None) -> float:
    """Satellite power formula without the non-negativity clamp."""
    t_fd = active_fl_count(W) if active is None else active
    rho = power.rho_sa
    sigma = np.asarray(power.noise_cov_sat)
    FhW = F.conj().T @ W
    out = np.sum(np.abs(B @ FhW) ** 2) + np.sum((B**2) @ sigma)
    inp = np.sum(np.abs(FhW) ** 2) + np.sum(sigma)
    return float(power.sat_hw_power * t_fd + (rho + 1.0) / rho * out - inp / rho)


def satellite_power(W, B, F, power: PowerParams, active: int | None = None) -> float:
    value = satellite_power_raw(W, B, F, power, active)
    if value < 0:
        warnings.warn(f"satellite power formula negative ({value:.3e} W); clamped to 0", PowerModelWarning, stacklevel=2)
        return 0.0
    return value


def total_weighted_power(W, B, F, power: PowerParams, active: int | None = None) -> float:
    return power.delta_gw * gw_power(W, power, active) + power.delta_sa * satellite_power(W, B, F, power, active)


def swee(W, B, F, H, power: PowerParams, active: int | None = None) -> float:
    p_tot = total_weighted_power(W, B, F, power, active)
    if p_tot <= 0:
        raise UndefinedRatioError("total weighted power is zero; SWEE undefined")
    return sum_rate(W, B, F, H, power) / p_tot


def evaluate(W, B, F, H, power: PowerParams, active: int | None = None) -> MetricsReport:
    """Full metric set for a design. Zero total power yields ``swee = nan``."""
    notes = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PowerModelWarning)
        p_sat = satellite_power(W, B, F, power, active)
    notes.extend(str(w.message) for w in caught)
    t_fd = active_fl_count(W) if active is None else active
    p_gw = gw_power(W, power, active)
    p_tot = power.delta_gw * p_gw + power.delta_sa * p_sat
    s = sinr_all(W, B, F, H, power)
    rate = float(power.baud_rate * np.sum(np.log2(1.0 + s)))
    return MetricsReport(
        sinr_per_user=s,
        rate_total=rate,
        p_gw=p_gw,
        p_sat=p_sat,
        p_total_weighted=p_tot,
        swee=rate / p_tot if p_tot > 0 else float("nan"),
        active_fl_count=t_fd,
        warnings=tuple(notes),
    )
