"""Small random instances shared by the test modules."""

from __future__ import annotations

import numpy as np

from bentpipe.metrics import PowerParams
from bentpipe.optimizer import SystemInstance
from bentpipe.scenario import AlgoConfig


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2.0)


def toy_power(N, K, rng=None, delta_gw=1.0, delta_sa=1.0) -> PowerParams:
    sig = 2e-4 if rng is None else rng.uniform(1e-4, 4e-4)
    nu = 0.1 if rng is None else rng.uniform(0.05, 0.2)
    return PowerParams(
        gw_hw_power=0.2,
        sat_hw_power=0.1,
        rho_gw=0.6,
        rho_sa=0.6,
        delta_gw=delta_gw,
        delta_sa=delta_sa,
        baud_rate=1.0,
        noise_cov_sat=np.full(N, sig),
        noise_user=np.full(K, nu),
    )


def toy_instance(seed: int, N: int = 2, K: int = 2, algo: AlgoConfig | None = None, **power_kw) -> SystemInstance:
    rng = np.random.default_rng(seed)
    F = 0.05 * (crandn(rng, N, N) + 2.0 * np.eye(N))
    H = crandn(rng, N, K) + 1.5 * np.eye(N, K)
    return SystemInstance(
        F=F,
        H=H,
        power=toy_power(N, K, rng, **power_kw),
        gw_budget=np.full(N, 1.0),
        sat_budget=np.full(N, 2.0),
        algo=algo or AlgoConfig(),
    )


def random_design(rng, N, K, scale=0.5):
    W = scale * crandn(rng, N, K)
    B = rng.uniform(0.0, 1.0, size=(N, N))
    return W, B


def small_scenario(seed: int = 3):
    """Default-scenario physics cut down to one sub-carrier, two beams and two users."""
    from dataclasses import replace

    from bentpipe.scenario import Budgets, Dimensions, default_scenario

    s = default_scenario()
    return replace(
        s,
        dims=Dimensions(num_beams=2, num_users=2, num_feeds=2, num_subcarriers=1),
        feeder=replace(s.feeder, subcarrier_freqs_hz=s.feeder.subcarrier_freqs_hz[:1]),
        users=replace(s.users, user_positions=s.users.user_positions[:2], beam_centers=s.users.beam_centers[:2]),
        budgets=Budgets(gw_budget_w=s.budgets.gw_budget_w[:2], sat_budget_w=s.budgets.sat_budget_w[:2]),
        seed=seed,
    )
