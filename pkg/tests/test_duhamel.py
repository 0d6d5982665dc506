import math

import numpy as np
import pytest
from scipy import integrate

from fracpert.duhamel import (
    ContractionError,
    KernelTables,
    SeriesConstants,
    _sb_indicator,
    contraction_factor,
    decay_ratios,
    diameter_factor,
    find_r1,
    init_series,
    kernel_mass,
    perturbed_sb_sweep,
    polar_grid,
    series_next_term,
    sum_series,
    three_g_sweep,
)
from fracpert.exact_ball import green_ball
from fracpert.geometry import Ball, profile_hD
from fracpert.jump_kernel import PerturbationB
from fracpert.nonlocal_op import apply_Sb_to_green_ball
from fracpert.special import StableParams

P = StableParams(2, 1.5, 0.5)
BALL = Ball([0.0, 0.0], 1.0)
B_HALF = PerturbationB.const(0.5)
# hand-set constants: tests below exercise the mechanics, not the fitted values
FAKE = SeriesConstants(c1=2.0, c2=1.0, C21=1.0, gamma=0.75, theta=0.0)
PROBES = [([0.0, 0.0], [0.4, 0.0]), ([0.2, 0.3], [-0.5, 0.1]), ([0.6, 0.0], [0.62, 0.05])]


def test_polar_grid_area():
    g = polar_grid(BALL, 16, 8)
    assert g.size == 128
    assert np.sum(g.weights) == pytest.approx(math.pi, rel=1e-10)
    assert np.all(np.linalg.norm(g.nodes, axis=1) < 1)


def test_indicator_image_const_matches_direct_quadrature():
    # S^b 1_B(z) = a A(d,-beta) int (1_B(z+w) - 1) |w|^{-d-beta} dw, done on rays for a point off-center
    from fracpert.special import normalizing_constant

    z = np.array([0.35, 0.2])
    q = z @ z

    def ray(t):
        e = np.array([math.cos(t), math.sin(t)])
        L = -(z @ e) + math.sqrt((z @ e) ** 2 + 1 - q)
        return -L ** -0.5 / 0.5

    val = integrate.quad(ray, 0, 2 * math.pi, limit=200, epsrel=1e-11)[0]
    ref = 0.5 * normalizing_constant(2, 0.5) * val
    assert _sb_indicator(P, B_HALF, BALL, z)[0] == pytest.approx(ref, rel=1e-8)


def test_kernel_mass_against_direct_integral():
    # m(y) = int_B G_B(z, y) S^b 1_B(z) dz, integrated in polar coordinates about y
    y = np.array([0.3, -0.1])

    def ring(rho):
        th = (np.arange(256) + 0.5) * 2 * math.pi / 256
        z = y + rho * np.stack([np.cos(th), np.sin(th)], axis=1)
        inside = np.linalg.norm(z, axis=1) < 1
        vals = np.zeros(len(th))
        zi = z[inside]
        vals[inside] = green_ball(P, BALL, zi, np.broadcast_to(y, zi.shape)) * _sb_indicator(P, B_HALF, BALL, zi)
        return rho * np.mean(vals) * 2 * math.pi

    edges = [0, 0.05, 0.2, 0.6, 0.9, 1.0, 1.1, 1.2, 1.3]
    ref = sum(integrate.quad(ring, a, c, limit=400, epsrel=1e-7)[0] for a, c in zip(edges[:-1], edges[1:]))
    assert kernel_mass(P, B_HALF, BALL, y) == pytest.approx(ref, rel=1e-3)


def test_kernel_tables_first_term_consistent_with_grid():
    grid = polar_grid(BALL, 8, 4)
    tab = KernelTables(P, B_HALF, BALL, grid)
    x, y = np.array([0.1, 0.0]), np.array([-0.3, 0.2])
    k = tab.K(x, y)
    assert k == pytest.approx(apply_Sb_to_green_ball(P, B_HALF, BALL, x, y), rel=1e-3)
    g1 = tab.first_term(x, y)
    assert np.isfinite(g1) and g1 != 0


def test_zero_b_series_is_green():
    res = sum_series(P, PerturbationB.zero(), BALL, PROBES, consts=FAKE, grid=polar_grid(BALL, 8, 4))
    assert res.n_terms == 0
    assert np.array_equal(res.values, res.green_ball)
    assert np.all(res.ratio == 1.0)


@pytest.fixture(scope="module")
def small_series():
    ball = Ball([0.0, 0.0], 0.3)
    probes = [([0.0, 0.0], [0.12, 0.0]), ([0.1, 0.05], [-0.15, 0.03])]
    res = sum_series(P, B_HALF, ball, probes, tol=1e-6, max_terms=4, certify=False, consts=FAKE,
                     grid=polar_grid(ball, 8, 4))
    return ball, probes, res


def test_series_terms_decay(small_series):
    _, _, res = small_series
    assert res.n_terms >= 2
    assert np.all(res.decay_ratios < 1)
    assert np.all(np.abs(res.ratio - 1) < 0.5)


def test_fixed_point_residual_is_next_term(small_series):
    ball, _, res = small_series
    nxt = series_next_term(res.state, P, B_HALF, ball)
    assert np.allclose(res.residual, -nxt.terms[-1], rtol=1e-8, atol=1e-14)


def test_series_state_is_resumable(small_series):
    ball, probes, res = small_series
    st = init_series(P, B_HALF, ball, probes, grid=polar_grid(ball, 8, 4), consts=FAKE)
    while st.order < res.n_terms:
        st = series_next_term(st, P, B_HALF, ball)
    assert np.allclose(st.partial_sum, res.values, rtol=1e-12)


def test_decay_ratios_helper():
    terms = np.array([[1.0, 2.0], [0.1, 0.2], [0.01, 0.02], [0.002, 0.004]])
    assert np.allclose(decay_ratios(terms), [0.1, 0.2])


def test_probe_validation():
    with pytest.raises(ValueError):
        sum_series(P, B_HALF, BALL, [([0.0, 0.0], [0.0, 0.0])], consts=FAKE)
    with pytest.raises(ValueError):
        sum_series(P, B_HALF, BALL, [([0.0, 0.0], [1.5, 0.0])], consts=FAKE)


def test_certified_mode_refuses_without_contraction():
    # with these constants delta at radius 1 is far above 1
    assert contraction_factor(P, 5.0, 1.0, FAKE) > 1
    with pytest.raises(ContractionError):
        sum_series(P, PerturbationB.const(5.0), BALL, PROBES, consts=FAKE, grid=polar_grid(BALL, 8, 4))


def test_find_r1_monotone_in_A():
    r_a, cert_a = find_r1(P, 1.0, r_hi=1.0, consts=FAKE)
    r_b, _ = find_r1(P, 2.0, r_hi=1.0, consts=FAKE)
    assert r_b < r_a
    assert cert_a["delta"] <= cert_a["target"]
    assert find_r1(P, 0.0, r_hi=0.5, consts=FAKE)[0] == 0.5
    with pytest.raises(ContractionError):
        find_r1(P, 1e9, r_hi=1.0, consts=FAKE)


def test_diameter_factor_regimes():
    assert diameter_factor(P, 2.0) == pytest.approx(2.0**0.25)
    crit = StableParams(2, 1.0, 0.5)
    assert diameter_factor(crit, 2.0) == pytest.approx(2.0**0.25 + 4.0)
    assert diameter_factor(StableParams(2, 1.0, 0.8), 2.0) == 1.0


@pytest.mark.parametrize("beta", [0.5, 0.75, 0.9])
def test_three_g_sweep_finite(beta):
    out = three_g_sweep(StableParams(2, 1.5, beta), n=2000, seed=3)
    assert np.isfinite(out["C21"]) and np.isfinite(out["C21_hh"])


@pytest.mark.parametrize("lam", [0.5, 2.0, 4.0])
def test_find_r1_scales_with_the_ball(lam):
    # delta(A, r) is invariant under A -> A lam^{beta-alpha}, r -> lam r
    r1, _ = find_r1(P, 1.0, r_hi=1.0, consts=FAKE)
    r1_lam, _ = find_r1(P, lam ** (P.beta - P.alpha), r_hi=lam, consts=FAKE)
    assert r1_lam / r1 == pytest.approx(lam, rel=0.1)


def test_perturbed_sb_sweep_reduces_to_unperturbed_for_small_balls():
    ball = Ball([0.0, 0.0], 1e-3)
    b = PerturbationB.const(1.0)
    out = perturbed_sb_sweep(P, b, ball, n_pairs=4, seed=3)
    assert out["operator_norm"] < 1e-3 and np.all(out["ratios"] > 0)
    ref = [abs(apply_Sb_to_green_ball(P, b, ball, x, y)) / profile_hD(ball, P, x, y)
           for x, y in zip(out["xs"], out["ys"])]
    assert out["ratios"] == pytest.approx(ref, rel=2e-3)
    assert out["C22"] == max(out["ratios"])


@pytest.mark.slow
def test_series_matches_occupation_green():
    """Annulus averages of G^b_B(0, .) from the series against the MC occupation estimate."""
    from fracpert.mc import BinSpec, McConfig, estimate_green

    p = StableParams(2, 1.0, 0.25)
    b = PerturbationB.const(0.5)
    annuli = np.array([[0.15, 0.2], [0.3, 0.35], [0.45, 0.5], [0.6, 0.65], [0.75, 0.8]])
    g, w = np.polynomial.legendre.leggauss(3)
    radii, weights = [], []
    for lo, hi in annuli:
        r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * g
        radii.extend(r)
        weights.append(w * r / np.sum(w * r))
    probes = np.array([[[0.0, 0.0], [r, 0.0]] for r in radii])
    res = sum_series(p, b, BALL, probes, certify=False, max_terms=4, error_estimate=True)

    def annulus_avg(v):
        return np.array([np.dot(weights[i], v[3 * i:3 * i + 3]) for i in range(len(annuli))])

    series = annulus_avg(res.values)
    series_err = annulus_avg(res.tail_bound + res.quad_error)
    unperturbed = annulus_avg(res.green_ball)
    edges = np.unique(np.concatenate([[0.0], annuli.ravel(), [1.0]]))
    spec = BinSpec.radial([0.0, 0.0], edges)
    cfg = McConfig(n_paths=100000, seed=3, horizon=20.0, bin_spec=spec, record_occupation=True)
    est = estimate_green(p, b, BALL, np.zeros(2), cfg)
    idx = [int(np.argmin(np.abs(est.centers - annuli[i].mean()))) for i in range(len(annuli))]
    mc, se = est.estimate[idx], est.se[idx]
    assert np.all(np.abs(mc - series) <= 3 * np.hypot(se, series_err))
    # and the perturbation is resolved: G_B itself is rejected
    assert np.all(np.abs(mc - unperturbed) > 10 * se)
