import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glate.distributions import betainc, betaincc, chi2_sf, f_sf, gammaincc

mpmath.mp.dps = 60


def _f_sf_ref(f, d1, d2):
    x = mpmath.mpf(d2) / (d2 + d1 * mpmath.mpf(f))
    return float(mpmath.betainc(d2 / 2, d1 / 2, 0, x, regularized=True))


def _chi2_sf_ref(x, df):
    return float(mpmath.gammainc(mpmath.mpf(df) / 2, mpmath.mpf(x) / 2, mpmath.inf, regularized=True))


@pytest.mark.parametrize(
    "f,d1,d2",
    [(0.5, 1, 10), (2.0, 3, 50), (4.0, 26, 3000), (1.1, 29, 6700), (25.0, 2, 100), (0.01, 5, 7), (80.0, 11, 400)],
)
def test_f_sf_matches_high_precision(f, d1, d2):
    ref = _f_sf_ref(f, d1, d2)
    assert f_sf(f, d1, d2) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("x,df", [(0.1, 1), (3.0, 2), (12.0, 5), (40.0, 11), (150.0, 30), (0.5, 8)])
def test_chi2_sf_matches_high_precision(x, df):
    assert chi2_sf(x, df) == pytest.approx(_chi2_sf_ref(x, df), rel=1e-12)


def test_edges():
    assert f_sf(0.0, 3, 10) == 1.0
    assert f_sf(-1.0, 3, 10) == 1.0
    assert f_sf(math.inf, 3, 10) == 0.0
    assert math.isnan(f_sf(math.nan, 3, 10))
    assert chi2_sf(0.0, 4) == 1.0
    assert chi2_sf(math.inf, 4) == 0.0
    assert betainc(2, 3, 0.0) == 0.0 and betainc(2, 3, 1.0) == 1.0
    with pytest.raises(ValueError):
        f_sf(1.0, 0, 10)
    with pytest.raises(ValueError):
        chi2_sf(1.0, -1)


def test_chi2_two_dof_closed_form():
    for x in (0.3, 1.0, 7.5, 30.0):
        assert chi2_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(0.5, 200), b=st.floats(0.5, 200), x=st.floats(1e-6, 1 - 1e-6),
)
def test_betainc_complement(a, b, x):
    assert betainc(a, b, x) + betaincc(a, b, x) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(d1=st.integers(1, 40), d2=st.integers(2, 5000), f1=st.floats(0.01, 50), step=st.floats(0.01, 10))
def test_f_sf_decreasing(d1, d2, f1, step):
    assert f_sf(f1 + step, d1, d2) <= f_sf(f1, d1, d2)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0.5, 50), x=st.floats(0.0, 200))
def test_gammaincc_in_unit_interval(a, x):
    q = gammaincc(a, x)
    assert 0.0 <= q <= 1.0


def test_f_one_numerator_dof_is_squared_t():
    # F(1, v) tail equals two-sided t tail; t with v=1 is Cauchy
    for t in (0.5, 1.0, 3.0):
        two_sided = 1.0 - 2.0 * math.atan(t) / math.pi
        assert f_sf(t * t, 1, 1) == pytest.approx(two_sided, rel=1e-12)
    assert np.isclose(f_sf(1.0, 4, 4), 0.5)
