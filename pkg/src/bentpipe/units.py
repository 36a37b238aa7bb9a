"""Unit conversions. The only place decibel quantities become linear."""

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(value_db):
    """Power ratio (or dBW -> W) conversion."""
    if np.ndim(value_db):
        return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)
    return 10.0 ** (float(value_db) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(value)


def wavelength(freq_hz: float, c0: float = SPEED_OF_LIGHT) -> float:
    return c0 / freq_hz


def parabolic_gain(diameter_m: float, freq_hz: float, efficiency: float, c0: float = SPEED_OF_LIGHT) -> float:
    """Linear boresight gain of a parabolic aperture, eta * (pi D / lambda)^2."""
    return efficiency * (np.pi * diameter_m / wavelength(freq_hz, c0)) ** 2
