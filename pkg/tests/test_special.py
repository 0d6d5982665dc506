import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from fracpert.special import _density_hankel, _density_series, _series_terms
from fracpert.special import (
    StableParams,
    cauchy_density,
    normalizing_constant,
    profile_independent_sum,
    profile_q,
    riesz_constant,
    stable_density_free,
    stable_tail_asymptotic,
)

mp.mp.dps = 40


def _norm_const_mp(d, s):
    s = mp.mpf(s)
    return s * 2 ** (s - 1) * mp.gamma((d + s) / 2) / (mp.pi ** (mp.mpf(d) / 2) * mp.gamma(1 - s / 2))


@pytest.mark.parametrize("d,s", [(1, 0.5), (2, 1.0), (2, 1.5), (3, 0.3), (5, 1.9)])
def test_normalizing_constant_matches_mpmath(d, s):
    assert normalizing_constant(d, s) == pytest.approx(float(_norm_const_mp(d, s)), rel=1e-12)


def test_cauchy_constant_closed_form():
    # A(2,-1) = Gamma(3/2) / (pi^{3/2} Gamma(1/2)) * 1 = 1/(2 pi)
    assert normalizing_constant(2, 1.0) == pytest.approx(1.0 / (2 * math.pi), rel=1e-14)


def test_riesz_constant_d2_alpha1():
    assert riesz_constant(2, 1.0) == pytest.approx(1.0 / (2 * math.pi), rel=1e-14)


@pytest.mark.parametrize("bad", [0.0, 2.0, -0.1])
def test_normalizing_constant_rejects_index(bad):
    with pytest.raises(ValueError):
        normalizing_constant(2, bad)


def test_params_validation():
    with pytest.raises(ValueError):
        StableParams(2, 1.0, 1.0)
    with pytest.raises(ValueError):
        StableParams(1, 1.0, 0.5)
    assert StableParams(2, 1.5, 0.5).regime == 1
    assert StableParams(2, 1.0, 0.5).regime == 0
    assert StableParams(2, 1.0, 0.7).regime == -1


def test_cauchy_density_is_used_for_alpha_one():
    p = StableParams(2, 1.0, 0.5)
    r = np.array([0.0, 0.5, 1.0, 2.0])
    assert np.allclose(stable_density_free(p, 1.0, r), cauchy_density(2, 1.0, r), rtol=1e-14)


@pytest.mark.parametrize("alpha", [0.7, 1.5])
def test_density_integrates_to_one(alpha):
    p = StableParams(2, alpha, 0.3)
    # radial integral up to R plus the tail mass beyond it, integrated term by term
    # from the large-distance expansion c_k r^{-2-k alpha}
    R = 40.0
    val, _ = integrate.quad(lambda r: 2 * math.pi * r * stable_density_free(p, 1.0, r), 0, R, limit=400)
    coef, _ = _series_terms(2, alpha, 1.0, kmax=4)
    k = np.arange(1, 5)
    tail = float(np.sum(2 * math.pi * coef * R ** (-k * alpha) / (k * alpha)))
    assert val + tail == pytest.approx(1.0, abs=2e-4)


@pytest.mark.parametrize("alpha", [0.7, 1.5])
def test_density_scaling(alpha):
    p = StableParams(2, alpha, 0.3)
    t, r = 0.3, 0.8
    lhs = stable_density_free(p, t, r)
    rhs = t ** (-2 / alpha) * stable_density_free(p, 1.0, r * t ** (-1 / alpha))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_density_matches_tail_asymptotic():
    p = StableParams(2, 1.5, 0.5)
    r = 50.0
    assert stable_density_free(p, 1.0, r) == pytest.approx(stable_tail_asymptotic(p, 1.0, r), rel=2e-2)


@pytest.mark.parametrize("alpha", [0.7, 1.5])
@pytest.mark.parametrize("rho", [6.0, 8.0, 12.0])
def test_density_fourier_and_series_agree(alpha, rho):
    h, _ = _density_hankel(2, alpha, rho)
    s, _ = _density_series(2, alpha, rho)
    assert h == pytest.approx(s, rel=1e-9)


def test_profile_q_branches():
    p = StableParams(2, 1.0, 0.5)
    assert profile_q(p, 1.0, 0.0) == 1.0
    assert profile_q(p, 1.0, 10.0) == pytest.approx(10.0 ** -3)


def test_profile_independent_sum_reduces_to_q():
    p = StableParams(2, 1.5, 0.5)
    r = np.array([0.1, 1.0, 5.0])
    assert np.allclose(profile_independent_sum(p, 0.0, 1.0, r), profile_q(p, 1.0, r))
    with pytest.raises(ValueError):
        profile_independent_sum(p, -1.0, 1.0, r)
