import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bentpipe.units import SPEED_OF_LIGHT, db_to_linear, linear_to_db, parabolic_gain, wavelength


def test_db_reference_points():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert db_to_linear(-3.0) == pytest.approx(0.501187, rel=1e-6)
    np.testing.assert_allclose(db_to_linear([0.0, 20.0]), [1.0, 100.0])


@given(st.floats(min_value=-200, max_value=200))
def test_db_round_trip(x):
    assert linear_to_db(db_to_linear(x)) == pytest.approx(x, abs=1e-9)


def test_parabolic_gain_matches_handbook_formula():
    # G[dBi] = 20 log10(f/GHz) + 20 log10(D/m) + 20.4 + 10 log10(eff), to ~0.01 dB
    for d, f, eff in [(6.8, 49.075e9, 0.6), (1.4, 50.075e9, 0.6), (0.75, 19.5e9, 0.65)]:
        handbook = 20 * np.log10(f / 1e9) + 20 * np.log10(d) + 20.4 + 10 * np.log10(eff)
        assert linear_to_db(parabolic_gain(d, f, eff)) == pytest.approx(handbook, abs=0.01)


def test_wavelength():
    assert wavelength(SPEED_OF_LIGHT) == 1.0
    assert wavelength(50e9) == pytest.approx(5.99585e-3, rel=1e-5)
