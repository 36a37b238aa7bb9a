"""Closed-form receive coefficients and MSE weights of the WMMSE transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..metrics import effective_gains, forwarded_noise


@dataclass(frozen=True)
class WmmseState:
    delta: np.ndarray  # (K,) complex receive coefficients
    omega: np.ndarray  # (K,) MSE weights, >= 1
    theta: np.ndarray  # (K,) total received power incl. noise
    mse: np.ndarray  # (K,) e_u in (0, 1]


def received_power(W, B, F, H, noise_sat, noise_user) -> tuple[np.ndarray, np.ndarray]:
    """Effective gains G[u, i] and Theta_u = sum_i |G[u, i]|^2 + forwarded noise + user noise."""
    G, theta, _ = _received_terms(W, B, F, H, noise_sat, noise_user)
    return G, theta


def _received_terms(W, B, F, H, noise_sat, noise_user):
    G = effective_gains(W, B, F, H)
    p = np.abs(G) ** 2
    signal = np.diag(p)
    disturbance = (p.sum(axis=1) - signal) + forwarded_noise(B, H, noise_sat) + noise_user
    return G, signal + disturbance, disturbance


def update_receive_coeffs(W, B, F, H, noise_sat, noise_user) -> np.ndarray:
    """MMSE receive coefficient of every user for a fixed design.

    ``delta_u = conj(h_u^H B F^H w_u) / Theta_u``.
    """
    G, theta = received_power(W, B, F, H, noise_sat, noise_user)
    if np.any(theta <= 0):
        raise ValueError("received power must be positive")
    return np.conj(np.diag(G)) / theta


def mse(delta, W, B, F, H, noise_sat, noise_user) -> np.ndarray:
    """e_u = E|x_u - delta_u z_u|^2 for arbitrary receive coefficients."""
    G, theta = received_power(W, B, F, H, noise_sat, noise_user)
    delta = np.asarray(delta)
    return 1.0 - 2.0 * np.real(delta * np.diag(G)) + np.abs(delta) ** 2 * theta


def update_mse_weights(state: WmmseState) -> np.ndarray:
    """omega_u = 1 / e_u, evaluated at the MMSE receive coefficients."""
    e = np.asarray(state.mse)
    assert np.all(e > 0), "MSE must be positive when the noise power is positive"
    return 1.0 / e


def wmmse_update(W, B, F, H, noise_sat, noise_user) -> WmmseState:
    """Receive coefficients followed by the MSE weights they induce."""
    G, theta, disturbance = _received_terms(W, B, F, H, noise_sat, noise_user)
    delta = np.conj(np.diag(G)) / theta
    # At the MMSE coefficient e_u = 1 - |g_u|^2 / Theta_u, i.e. disturbance / Theta.
    e = disturbance / theta
    partial = WmmseState(delta=delta, omega=np.ones_like(e), theta=theta, mse=e)
    return WmmseState(delta=delta, omega=update_mse_weights(partial), theta=theta, mse=e)
