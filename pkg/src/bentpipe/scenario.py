"""Scenario definition, YAML config I/O and seeded channel realizations.

Config documents are YAML with units spelled out in key names.  Decibel
keys (``*_dbw``, ``*_db``, ``*_dbi``) are accepted as alternatives to their
linear counterparts and converted once, at load time, through
:func:`bentpipe.units.db_to_linear`.  Serialization always writes the linear
keys, so ``load_scenario(dump_scenario(s)) == s``.

Random streams: every realization draws from a Philox counter-based
generator keyed by ``SeedSequence(seed, spawn_key=(offset, stream))`` with
``stream`` 0 for feeder impairments and 1 for user-link impairments.  The
streams do not depend on the order in which realizations are produced.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .channel import (
    FeederChannel,
    FeederGeometry,
    FeederImpairments,
    UserChannel,
    UserLinkParams,
    build_feeder_channel,
    build_user_channel,
)
from .metrics import PowerParams
from .units import SPEED_OF_LIGHT, db_to_linear, parabolic_gain

SCHEMA_VERSION = 1
SCENARIO_ENV_VAR = "BENTPIPE_SCENARIO"

STREAM_FEEDER = 0
STREAM_USER = 1


class ScenarioError(ValueError):
    """Invalid or unparsable scenario document."""


@dataclass(frozen=True)
class Dimensions:
    num_beams: int  # N
    num_users: int  # K
    num_feeds: int  # L
    num_subcarriers: int  # S


@dataclass(frozen=True)
class FeederConfig:
    gateways: tuple[tuple[float, float, float], ...]  # (lat deg, lon deg, alt m)
    sat_longitude_deg: float
    rx_element_separation_m: float
    gw_antenna_diameter_m: float
    sat_rx_antenna_diameter_m: float
    misc_loss_db: float
    subcarrier_freqs_hz: tuple[float, ...]
    antenna_efficiency: float = 0.6
    phase_noise_max_rad: float = math.pi / 18
    atm_amplitude_min: float = 0.9
    atm_amplitude_max: float = 1.0


@dataclass(frozen=True)
class UserConfig:
    user_positions: tuple[tuple[float, float], ...]
    beam_centers: tuple[tuple[float, float], ...]
    beam_3db_width_deg: float
    downlink_freq_hz: float
    rician_factor: float  # linear
    user_rx_gain: float  # linear, user terminal
    sat_tx_gain: float  # linear, beam peak gain folded into the pattern
    phase_noise_max_rad: float = math.pi / 18


@dataclass(frozen=True)
class PowerConfig:
    gw_hw_power_w: float
    sat_hw_power_w: float
    rho_gw: float
    rho_sa: float
    baud_rate_hz: float
    noise_sat_w: float
    noise_user_w: float


@dataclass(frozen=True)
class Budgets:
    gw_budget_w: tuple[float, ...]  # per feeder link
    sat_budget_w: tuple[float, ...]  # per satellite antenna


@dataclass(frozen=True)
class Weights:
    delta_gw: float
    delta_sa: float


@dataclass(frozen=True)
class AlgoConfig:
    epsilon: float = 1e-6
    inner_tol: float = 1e-5
    inner_max_iter: int = 200
    outer_tol: float = 1e-4
    outer_max_iter: int = 300
    qcqp_tol: float = 1e-7
    qcqp_max_iter: int = 5000


@dataclass(frozen=True)
class Scenario:
    dims: Dimensions
    feeder: FeederConfig
    users: UserConfig
    power: PowerConfig
    budgets: Budgets
    weights: Weights
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    seed: int = 42
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        d = self.dims
        if d.num_beams != d.num_subcarriers * d.num_feeds:
            raise ScenarioError(
                f"N = S*L is required: num_beams={d.num_beams}, num_subcarriers*num_feeds={d.num_subcarriers * d.num_feeds}"
            )
        if len(self.feeder.subcarrier_freqs_hz) != d.num_subcarriers:
            raise ScenarioError("number of sub-carrier frequencies must equal num_subcarriers")
        if len(self.feeder.gateways) == 0 or d.num_feeds % len(self.feeder.gateways):
            raise ScenarioError("num_feeds must be a positive multiple of the number of gateways")
        if len(self.users.user_positions) != d.num_users:
            raise ScenarioError("number of user positions must equal num_users")
        if len(self.users.beam_centers) != d.num_beams:
            raise ScenarioError("number of beam centers must equal num_beams")
        for name, b in (("gw_budget", self.budgets.gw_budget_w), ("sat_budget", self.budgets.sat_budget_w)):
            if len(b) != d.num_beams:
                raise ScenarioError(f"{name} must have one entry per beam/feeder link")
            if not all(math.isfinite(v) and v > 0 for v in b):
                raise ScenarioError(f"{name} must be finite and positive in linear units")
        w = self.weights
        if w.delta_gw < 0 or w.delta_sa < 0 or w.delta_gw + w.delta_sa <= 0:
            raise ScenarioError("weights must satisfy delta_gw, delta_sa >= 0 and delta_gw + delta_sa > 0")
        if self.users.rician_factor < 0:
            raise ScenarioError("rician_factor must be non-negative")
        p = self.power
        if not (0 < p.rho_gw <= 1 and 0 < p.rho_sa <= 1):
            raise ScenarioError("amplifier efficiencies must lie in (0, 1]")
        if p.noise_sat_w <= 0 or p.noise_user_w <= 0:
            raise ScenarioError("noise powers must be positive")

    # convenience views -----------------------------------------------------

    def power_params(self) -> PowerParams:
        p = self.power
        return PowerParams(
            gw_hw_power=p.gw_hw_power_w,
            sat_hw_power=p.sat_hw_power_w,
            rho_gw=p.rho_gw,
            rho_sa=p.rho_sa,
            delta_gw=self.weights.delta_gw,
            delta_sa=self.weights.delta_sa,
            baud_rate=p.baud_rate_hz,
            noise_cov_sat=np.full(self.dims.num_beams, p.noise_sat_w),
            noise_user=np.full(self.dims.num_users, p.noise_user_w),
        )

    def feeder_geometry(self) -> FeederGeometry:
        f = self.feeder
        return FeederGeometry(
            gw_positions=f.gateways,
            sat_longitude=f.sat_longitude_deg,
            rx_element_separation=f.rx_element_separation_m,
            gw_antenna_diameter=f.gw_antenna_diameter_m,
            sat_rx_antenna_diameter=f.sat_rx_antenna_diameter_m,
            misc_loss_db=f.misc_loss_db,
            subcarrier_freqs=f.subcarrier_freqs_hz,
            num_feeds_per_gw=self.dims.num_feeds // len(f.gateways),
            antenna_efficiency=f.antenna_efficiency,
        )

    def with_sat_budget_dbw(self, value_dbw: float) -> "Scenario":
        return replace(self, budgets=replace(self.budgets, sat_budget_w=(db_to_linear(value_dbw),) * self.dims.num_beams))

    def with_gw_budget_dbw(self, value_dbw: float) -> "Scenario":
        return replace(self, budgets=replace(self.budgets, gw_budget_w=(db_to_linear(value_dbw),) * self.dims.num_beams))

    def with_weights(self, delta_gw: float, delta_sa: float) -> "Scenario":
        return replace(self, weights=Weights(delta_gw, delta_sa))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def digest(self) -> str:
        """Stable short hash of the serialized scenario."""
        return hashlib.sha256(dump_scenario(self).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Built-in default scenario
# --------------------------------------------------------------------------

REDU = (50.002461, 5.148105, 0.0)
BETZDORF = (49.692915, 6.327135, 0.0)

# 2 x 5 grid over Europe, ~0.75-0.85 deg apart as seen from 13E GEO
_BEAM_CENTERS = tuple((lat, lon) for lat in (44.0, 53.0) for lon in (-6.0, 2.0, 10.0, 18.0, 26.0))


def _default_users(centers, spread_deg=0.4):
    users = []
    for u, (lat, lon) in enumerate(centers):
        a = 2.0 * math.pi * u / len(centers) + 0.3
        users.append((round(lat + spread_deg * math.cos(a), 6), round(lon + spread_deg * math.sin(a), 6)))
    return tuple(users)


def default_scenario() -> Scenario:
    """Default system: 10 beams, 10 users, two gateways (Redu, Betzdorf), 5 sub-carriers."""
    n = 10
    downlink = 19.5e9
    return Scenario(
        dims=Dimensions(num_beams=n, num_users=10, num_feeds=2, num_subcarriers=5),
        feeder=FeederConfig(
            gateways=(REDU, BETZDORF),
            sat_longitude_deg=13.0,
            rx_element_separation_m=3.0,
            gw_antenna_diameter_m=6.8,
            sat_rx_antenna_diameter_m=1.4,
            misc_loss_db=1.0,
            subcarrier_freqs_hz=(49.075e9, 49.325e9, 49.575e9, 49.825e9, 50.075e9),
            antenna_efficiency=0.6,
        ),
        users=UserConfig(
            user_positions=_default_users(_BEAM_CENTERS),
            beam_centers=_BEAM_CENTERS,
            beam_3db_width_deg=0.6,
            downlink_freq_hz=downlink,
            rician_factor=db_to_linear(10.0),
            user_rx_gain=parabolic_gain(0.75, downlink, 0.6),
            sat_tx_gain=db_to_linear(50.0),
        ),
        power=PowerConfig(
            gw_hw_power_w=10.0,
            sat_hw_power_w=5.0,
            rho_gw=0.6,
            rho_sa=0.6,
            baud_rate_hz=250e6,
            noise_sat_w=db_to_linear(-121.3),
            noise_user_w=db_to_linear(-118.6),
        ),
        budgets=Budgets(gw_budget_w=(db_to_linear(15.0),) * n, sat_budget_w=(db_to_linear(5.0),) * n),
        weights=Weights(1.0, 1.0),
        algo=AlgoConfig(),
        seed=42,
    )


# --------------------------------------------------------------------------
# Config documents
# --------------------------------------------------------------------------

_HZ = {"_ghz": 1e9, "_mhz": 1e6}

# section -> {canonical key: {alias suffix: converter}}; aliases replace the
# canonical suffix (e.g. noise_sat_w <- noise_sat_dbw).
_ALIASES = {
    "feeder": {"subcarrier_freqs_hz": {"_ghz": lambda v: [x * 1e9 for x in v]}},
    "users": {
        "downlink_freq_hz": {"_ghz": lambda v: v * 1e9},
        "rician_factor": {"_db": db_to_linear},
        "user_rx_gain": {"_dbi": db_to_linear},
        "sat_tx_gain": {"_dbi": db_to_linear},
    },
    "power": {
        "baud_rate_hz": {"_mhz": lambda v: v * 1e6},
        "noise_sat_w": {"_dbw": db_to_linear},
        "noise_user_w": {"_dbw": db_to_linear},
    },
    "budgets": {"gw_budget_w": {"_dbw": db_to_linear}, "sat_budget_w": {"_dbw": db_to_linear}},
}

_SECTIONS = {
    "dimensions": Dimensions,
    "feeder": FeederConfig,
    "users": UserConfig,
    "power": PowerConfig,
    "budgets": Budgets,
    "weights": Weights,
    "algorithm": AlgoConfig,
}
_REQUIRED_TOP = ("schema_version", "seed", "dimensions", "feeder", "users", "power", "budgets", "weights")


def _stem(key: str, canonical: str) -> str:
    for unit in ("_hz", "_w"):
        if canonical.endswith(unit):
            return canonical[: -len(unit)]
    return canonical


def _parse_section(name: str, raw, num_beams: int | None):
    cls = _SECTIONS[name]
    if not isinstance(raw, dict):
        raise ScenarioError(f"section '{name}' must be a mapping")
    aliases = _ALIASES.get(name, {})
    lookup = {}  # document key -> (canonical, converter)
    for f in fields(cls):
        lookup[f.name] = (f.name, None)
        for suffix, conv in aliases.get(f.name, {}).items():
            lookup[_stem(f.name, f.name) + suffix] = (f.name, conv)
    values = {}
    for key, val in raw.items():
        if key not in lookup:
            raise ScenarioError(f"unknown key '{name}.{key}'")
        canonical, conv = lookup[key]
        if canonical in values:
            raise ScenarioError(f"'{name}.{canonical}' given more than once (linear and dB forms)")
        if conv is not None:
            val = [conv(v) for v in val] if isinstance(val, list) and name == "budgets" else conv(val)
        values[canonical] = val
    missing = [f.name for f in fields(cls) if f.name not in values and _is_required(f)]
    if missing:
        raise ScenarioError(f"section '{name}' is missing required fields: {', '.join(missing)}")
    if name == "budgets":
        for key in ("gw_budget_w", "sat_budget_w"):
            v = values[key]
            values[key] = tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else (float(v),) * (num_beams or 1)
    return cls(**_coerce(cls, values))


def _is_required(f) -> bool:
    return f.default is MISSING and f.default_factory is MISSING


def _coerce(cls, values: dict) -> dict:
    out = {}
    for k, v in values.items():
        if k in ("gateways",):
            out[k] = tuple((float(a), float(b), float(c)) for a, b, c in v)
        elif k in ("user_positions", "beam_centers"):
            out[k] = tuple((float(a), float(b)) for a, b in v)
        elif k == "subcarrier_freqs_hz":
            out[k] = tuple(float(x) for x in v)
        elif isinstance(v, tuple):
            out[k] = v
        elif k in ("num_beams", "num_users", "num_feeds", "num_subcarriers", "inner_max_iter", "outer_max_iter", "qcqp_max_iter"):
            if int(v) != v:
                raise ScenarioError(f"'{k}' must be an integer")
            out[k] = int(v)
        else:
            try:
                out[k] = float(v)
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"'{k}' must be a number, got {v!r}") from exc
    return out


def load_scenario(text: str) -> Scenario:
    """Parse and validate a YAML scenario document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ScenarioError(f"parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    missing = [k for k in _REQUIRED_TOP if k not in doc]
    if missing:
        raise ScenarioError(f"scenario document is missing required fields: {', '.join(missing)}")
    unknown = [k for k in doc if k not in _REQUIRED_TOP and k != "algorithm"]
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {', '.join(map(str, unknown))}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {doc['schema_version']!r} (expected {SCHEMA_VERSION})")
    dims = _parse_section("dimensions", doc["dimensions"], None)
    kwargs = {
        "dims": dims,
        "feeder": _parse_section("feeder", doc["feeder"], dims.num_beams),
        "users": _parse_section("users", doc["users"], dims.num_beams),
        "power": _parse_section("power", doc["power"], dims.num_beams),
        "budgets": _parse_section("budgets", doc["budgets"], dims.num_beams),
        "weights": _parse_section("weights", doc["weights"], dims.num_beams),
        "algo": _parse_section("algorithm", doc.get("algorithm", {}), dims.num_beams),
    }
    seed = doc["seed"]
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ScenarioError("seed must be a 64-bit non-negative integer")
    return Scenario(seed=seed, schema_version=SCHEMA_VERSION, **kwargs)


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema_version": s.schema_version,
        "seed": s.seed,
        "dimensions": _plain(asdict(s.dims)),
        "feeder": _plain(asdict(s.feeder)),
        "users": _plain(asdict(s.users)),
        "power": _plain(asdict(s.power)),
        "budgets": _plain(asdict(s.budgets)),
        "weights": _plain(asdict(s.weights)),
        "algorithm": _plain(asdict(s.algo)),
    }


def dump_scenario(s: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=False, default_flow_style=None)


def load_scenario_file(path: str | os.PathLike | None = None) -> Scenario:
    """Load from ``path``, else from $BENTPIPE_SCENARIO, else the built-in default."""
    path = path or os.environ.get(SCENARIO_ENV_VAR)
    if not path:
        return default_scenario()
    return load_scenario(Path(path).read_text())


# --------------------------------------------------------------------------
# Realizations
# --------------------------------------------------------------------------


def stream(seed: int, offset: int, stream_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(offset), int(stream_id)))
    return np.random.Generator(np.random.Philox(ss))


def draw_feeder_impairments(scenario: Scenario, rng: np.random.Generator) -> FeederImpairments:
    f, d = scenario.feeder, scenario.dims
    L, S = d.num_feeds, d.num_subcarriers
    return FeederImpairments(
        phase_noise=rng.uniform(-f.phase_noise_max_rad, f.phase_noise_max_rad, size=(L, L)),
        atm_amplitude=rng.uniform(f.atm_amplitude_min, f.atm_amplitude_max, size=L),
        atm_phase=rng.uniform(-np.pi, np.pi, size=(S, L)),
    )


def user_link_params(scenario: Scenario, rng: np.random.Generator) -> UserLinkParams:
    u, d = scenario.users, scenario.dims
    shape = (d.num_beams, d.num_users)
    phase = rng.uniform(-u.phase_noise_max_rad, u.phase_noise_max_rad, size=shape)
    nlos = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return UserLinkParams(
        user_positions=u.user_positions,
        rician_factor=u.rician_factor,
        wavelength=SPEED_OF_LIGHT / u.downlink_freq_hz,
        user_rx_gain=u.user_rx_gain * u.sat_tx_gain,
        beam_centers=u.beam_centers,
        beam_3db_width=u.beam_3db_width_deg,
        phase_noise=phase,
        nlos_fading=nlos,
        sat_longitude=scenario.feeder.sat_longitude_deg,
    )


def realize(scenario: Scenario, seed_offset: int = 0) -> tuple[FeederChannel, UserChannel]:
    """Channel realization number ``seed_offset`` of a scenario."""
    imp = draw_feeder_impairments(scenario, stream(scenario.seed, seed_offset, STREAM_FEEDER))
    F = build_feeder_channel(scenario.feeder_geometry(), imp)
    H = build_user_channel(user_link_params(scenario, stream(scenario.seed, seed_offset, STREAM_USER)))
    return F, H
