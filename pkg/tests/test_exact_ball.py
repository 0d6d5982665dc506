import math

import numpy as np
import pytest
from scipy import integrate

from fracpert.exact_ball import (
    exit_radius_cdf,
    fractional_laplacian_of_power,
    green_ball,
    green_ball_grad_x,
    green_factor,
    green_factor_quad,
    green_global,
    green_gradient_profile,
    mean_exit_time,
    poisson_ball,
)
from fracpert.geometry import Ball, green_profile, profile_gD, sample_uniform
from fracpert.special import StableParams, stable_density_free

P1 = StableParams(2, 1.0, 0.5)
P15 = StableParams(2, 1.5, 0.5)


def test_global_green_cauchy():
    assert green_global(P1, [0, 0], [0.5, 0]) == pytest.approx(1 / (2 * math.pi * 0.5), rel=1e-14)
    assert green_global(P1, [0, 0], [0, 0]) == np.inf


def test_global_green_homogeneity():
    x, y = np.array([0.1, 0.2]), np.array([-0.3, 0.5])
    assert green_global(P15, 2 * x, 2 * y) == pytest.approx(2 ** (1.5 - 2) * green_global(P15, x, y), rel=1e-13)


def test_global_green_time_integral():
    # int_0^T p(t, r) dt with r = 1 and T = 1e3; the remainder beyond T is O(T^{1-d/alpha})
    f = lambda t: stable_density_free(P1, t, 1.0)
    val = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in ((0, 1), (1, 30), (30, 1e3)))
    assert val == pytest.approx(green_global(P1, [0, 0], [1, 0]), rel=1e-2)


@pytest.mark.parametrize("z", [1e-6, 0.3, 4.0, 1e4])
def test_green_factor_beta_vs_quadrature(z):
    assert green_factor(P15, z) == pytest.approx(green_factor_quad(P15, z), rel=1e-10)


def test_green_ball_symmetry_and_monotonicity(unit_ball, rng):
    xs, ys = sample_uniform(unit_ball, 1000, rng), sample_uniform(unit_ball, 1000, rng)
    g_xy = green_ball(P15, unit_ball, xs, ys)
    assert np.array_equal(g_xy, green_ball(P15, unit_ball, ys, xs))
    assert np.all(g_xy <= green_global(P15, xs, ys) * (1 + 1e-12))


def test_green_ball_near_center_matches_global(unit_ball):
    # the deficit G - G_B is bounded near the center, so the ratio tends to 1 like r^{d-alpha}
    x, y = np.array([0.0, 0.0]), np.array([1e-7, 0.0])
    assert green_ball(P15, unit_ball, x, y) / green_global(P15, x, y) == pytest.approx(1.0, abs=1e-3)


def test_green_ball_boundary_exponent(unit_ball):
    k = np.arange(2, 6)
    dep = 10.0 ** -k
    y = np.stack([1 - dep, np.zeros_like(dep)], axis=1)
    g = green_ball(P15, unit_ball, np.zeros(2), y)
    slope = np.polyfit(np.log(dep), np.log(g), 1)[0]
    assert slope == pytest.approx(0.75, abs=0.02)


def test_green_ball_edge_cases(unit_ball):
    assert green_ball(P15, unit_ball, [0.2, 0], [0.2, 0]) == np.inf
    assert green_ball(P15, unit_ball, [1.0, 0], [0.2, 0]) == 0.0
    with pytest.raises(ValueError):
        green_ball(P15, unit_ball, [1.5, 0], [0.2, 0])


def test_green_ball_two_sided_estimate(unit_ball, rng):
    xs, ys = sample_uniform(unit_ball, 1000, rng), sample_uniform(unit_ball, 1000, rng)
    ratio = green_ball(P15, unit_ball, xs, ys) / green_profile(unit_ball, P15, xs, ys)
    c0 = max(ratio.max(), 1 / ratio.min())
    assert np.isfinite(c0) and c0 < 20
    ratio_g = green_ball(P15, unit_ball, xs, ys) / profile_gD(unit_ball, P15, xs, ys)
    assert np.all(np.isfinite(ratio_g)) and ratio_g.min() > 0


def test_gradient_matches_finite_difference(unit_ball):
    x, y = np.array([0.3, -0.2]), np.array([-0.4, 0.5])
    h = 1e-6
    fd = np.array([(green_ball(P15, unit_ball, x + e, y) - green_ball(P15, unit_ball, x - e, y)) / (2 * h)
                   for e in np.eye(2) * h])
    assert np.allclose(green_ball_grad_x(P15, unit_ball, x, y), fd, rtol=1e-6)


def test_gradient_bound_single_constant(unit_ball, rng):
    xs, ys = sample_uniform(unit_ball, 100, rng), sample_uniform(unit_ball, 100, rng)
    g = np.linalg.norm(green_ball_grad_x(P15, unit_ball, xs, ys), axis=1)
    C = np.max(g / green_gradient_profile(P15, unit_ball, xs, ys))
    assert np.isfinite(C) and C > 0


def _poisson_mass(params, ball, x):
    # polar integral in y about the center
    def ring(r):
        th = np.linspace(0, 2 * np.pi, 2049)[:-1]
        y = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        return r * np.mean(poisson_ball(params, ball, np.broadcast_to(x, y.shape), y)) * 2 * np.pi
    # substitute r = 1 + s^2 / (1 - s) to tame the (r-1)^{-alpha/2} edge and the tail
    g = lambda s: ring(1 + s * s / (1 - s)) * (2 * s / (1 - s) + s * s / (1 - s) ** 2)
    return integrate.quad(g, 0, 1, epsabs=0, epsrel=1e-9, limit=400)[0]


@pytest.mark.parametrize("alpha", [1.0, 1.5])
def test_poisson_normalization(unit_ball, alpha):
    p = StableParams(2, alpha, 0.5)
    assert _poisson_mass(p, unit_ball, np.zeros(2)) == pytest.approx(1.0, abs=1e-6)
    assert _poisson_mass(p, unit_ball, np.array([0.9, 0.0])) == pytest.approx(1.0, abs=1e-6)


def test_poisson_rotation_invariance(unit_ball):
    a = poisson_ball(P15, unit_ball, [0, 0], [1.3, 0.4])
    assert poisson_ball(P15, unit_ball, [0, 0], [-1.3, -0.4]) == pytest.approx(a, rel=1e-14)
    assert poisson_ball(P15, unit_ball, [0, 0], [0.4, 1.3]) == pytest.approx(a, rel=1e-14)
    with pytest.raises(ValueError):
        poisson_ball(P15, unit_ball, [0, 0], [0.5, 0])


def test_exit_radius_cdf_matches_poisson(unit_ball):
    s = 1.7
    val = integrate.quad(lambda r: 2 * math.pi * r * poisson_ball(P15, unit_ball, [0, 0], [r, 0]), 1, s)[0]
    assert exit_radius_cdf(P15, unit_ball, s) == pytest.approx(val, rel=1e-6)


def test_mean_exit_time_is_green_mass(unit_ball):
    # E_0 tau = int_B G_B(0, y) dy
    f = lambda r: 2 * math.pi * r * green_ball(P15, unit_ball, [0, 0], [r, 0])
    val = integrate.quad(f, 0, 1, epsrel=1e-10, limit=200)[0]
    assert mean_exit_time(P15, unit_ball, [0, 0]) == pytest.approx(val, rel=1e-7)


@pytest.mark.parametrize("R", [1e-3, 0.3, 4.0])
def test_green_ball_scales_with_the_ball(R):
    from fracpert._kernels import green_ball_pt
    from fracpert.exact_ball import green_ball_prefactor

    c = np.array([0.5, -0.2])
    big = Ball(c, R)
    x, y = np.array([0.2, 0.1]), np.array([-0.3, 0.6])
    for p in (P1, P15):
        g1 = green_ball(p, Ball([0, 0], 1.0), x, y)
        s = R ** (p.d - p.alpha)
        assert s * green_ball(p, big, c + R * x, c + R * y) == pytest.approx(g1, rel=1e-12)
        pt = green_ball_pt(c + R * x, c + R * y, c, R, 2, p.alpha, green_ball_prefactor(2, p.alpha))
        assert s * pt == pytest.approx(g1, rel=1e-12)
        grad = R * s * green_ball_grad_x(p, big, c + R * x, c + R * y)
        assert grad == pytest.approx(green_ball_grad_x(p, Ball([0, 0], 1.0), x, y), rel=1e-10)


def test_mean_exit_time_is_green_mass_off_unit_ball():
    ball = Ball([1.0, 2.0], 0.3)
    x = np.array([1.1, 2.05])
    f = lambda r, t: r * green_ball(P15, ball, x, x + r * np.array([math.cos(t), math.sin(t)]))
    # polar about x; the outer radius depends on the direction
    def ray(t):
        e = np.array([math.cos(t), math.sin(t)])
        q = x - ball.center
        return -(q @ e) + math.sqrt((q @ e) ** 2 + ball.radius**2 - q @ q)
    val = integrate.quad(lambda t: integrate.quad(lambda r: f(r, t), 0, ray(t), epsrel=1e-9, limit=200)[0],
                         0, 2 * math.pi, epsrel=1e-8, limit=200)[0]
    assert mean_exit_time(P15, ball, x) == pytest.approx(val, rel=1e-6)


def test_mean_value_property(unit_ball):
    # int K_{B'}(x, z) G_B(z, y) dz = G_B(x, y) for x in B' and y outside the closure of B'
    inner = Ball([0.0, 0.0], 0.5)
    x, y = np.array([0.1, 0.0]), np.array([0.0, 0.8])

    def ring(r):
        th = (np.arange(512) + 0.5) * 2 * np.pi / 512
        z = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        keep = np.linalg.norm(z, axis=1) < 1
        val = np.zeros(len(z))
        val[keep] = poisson_ball(P15, inner, np.broadcast_to(x, z[keep].shape), z[keep]) * green_ball(
            P15, unit_ball, z[keep], np.broadcast_to(y, z[keep].shape))
        return r * np.sum(val) * 2 * np.pi / 512

    # split the radial range at |y| where the ring crosses the pole of G_B(., y)
    pieces = [(0.5, 0.7), (0.7, 0.8), (0.8, 0.9), (0.9, 1.0)]
    val = sum(integrate.quad(ring, a, b, limit=200, epsrel=1e-8)[0] for a, b in pieces)
    assert val == pytest.approx(green_ball(P15, unit_ball, x, y), rel=1e-3)


def test_fractional_laplacian_of_power_torsion():
    # (-Delta)^{a/2} (1-|x|^2)_+^{a/2} is constant: equals 1 / c where E tau = c (1-|x|^2)^{a/2}
    val = fractional_laplacian_of_power(2, 1.5, 0.75, np.array([0.0, 0.4, 0.9]))
    c = mean_exit_time(P15, Ball([0, 0], 1), [0, 0])
    assert np.allclose(val, 1 / c, rtol=1e-12)
