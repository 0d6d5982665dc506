import json
import math

import numpy as np
import pytest

from fracpert.geometry import Ball, UnionOfBalls
from fracpert.jump_kernel import PerturbationB
from fracpert.mc import McConfig
from fracpert.special import StableParams
from fracpert.verify import (
    FitError,
    SpectralFit,
    _count_interval,
    boundary_slope,
    check_scaling,
    extreme_decile_trend,
    fit_lambda1,
    heat_probes,
    model_digest,
    verify_green_bounds,
    verify_heat_bounds,
)

P1 = StableParams(2, 1.0, 0.5)
BALL = Ball([0.0, 0.0], 1.0)
ZERO = PerturbationB.zero()


def test_model_digest_is_canonical():
    a = model_digest(x=1.0, y=[1, 2], z=np.array([0.5]))
    assert a == model_digest(z=[0.5], y=(1, 2), x=1.0)
    assert a != model_digest(x=1.0000001, y=[1, 2], z=[0.5])
    assert len(a) == 64


def test_count_interval_three_sigma():
    lo, hi = _count_interval(0)
    assert lo == 0 and hi == pytest.approx(-math.log(0.00135), rel=1e-6)
    lo, hi = _count_interval(10000)
    assert lo == pytest.approx(10000 - 300, rel=2e-3) and hi == pytest.approx(10000 + 300, rel=2e-3)


def test_heat_probes_are_stratified_and_inside():
    rng = np.random.default_rng(0)
    dom = UnionOfBalls([Ball([0, 0], 1), Ball([3, 0], 1)])
    probes = heat_probes(dom, 40, rng, [0.1, 1.0])
    labels = {p[4] for p in probes}
    assert labels == {"near_diagonal", "mid_range", "near_boundary", "cross_component"}
    for t, x, y, h, label in probes:
        assert dom.signed_depth(x) > 0 and dom.signed_depth(y) > 0 and h > 0
        if label == "cross_component":
            assert dom.component(x) != dom.component(y)


def test_exact_green_band_is_finite_and_stable():
    rep = verify_green_bounds(P1, ZERO, BALL, method="exact", n_pairs=200, seed=1)
    assert rep.passed and 0 < rep.C_lower <= rep.C_upper < math.inf
    big = verify_green_bounds(P1, ZERO, BALL, method="exact", n_pairs=400, seed=2)
    assert big.C_lower == pytest.approx(rep.C_lower, rel=0.2)
    assert big.C_upper == pytest.approx(rep.C_upper, rel=0.2)
    with pytest.raises(ValueError):
        verify_green_bounds(P1, PerturbationB.const(0.5), BALL, method="exact")
    with pytest.raises(ValueError):
        verify_green_bounds(P1, ZERO, BALL, method="nope")


def test_mc_green_band():
    rep = verify_green_bounds(P1, PerturbationB.const(0.5), BALL, method="mc",
                              cfg=McConfig(n_paths=20000, seed=3, horizon=20.0), grid_shape=(12, 12))
    assert rep.passed
    assert all(label == "bin" for label in rep.labels)


@pytest.fixture(scope="module")
def small_heat_report():
    cfg = McConfig(n_paths=30000, seed=5)
    return verify_heat_bounds(P1, ZERO, BALL, cfg, n_probes=15, band=(1e-2, 1e2), fit_slope=False)


def test_heat_report_passes_with_wide_band(small_heat_report):
    rep = small_heat_report
    assert rep.passed and rep.violations == []
    assert 0 < rep.C_lower <= rep.C_upper < math.inf
    assert len(rep.grid) == len(rep.ratios) == len(rep.labels) == 15
    assert math.isnan(rep.boundary_slope)


def test_heat_report_json_roundtrip(small_heat_report):
    obj = json.loads(small_heat_report.to_json())
    assert obj["violations"] == [] and obj["passed"] is True
    assert obj["certificate"]["digest"] == small_heat_report.certificate["digest"]
    assert len(obj["ratios"]) == 15


def test_heat_report_is_reproducible(small_heat_report):
    again = verify_heat_bounds(P1, ZERO, BALL, McConfig(n_paths=30000, seed=5), n_probes=15, band=(1e-2, 1e2),
                               fit_slope=False)
    assert again.to_json() == small_heat_report.to_json()


def test_absurd_band_is_violated():
    rep = verify_heat_bounds(P1, ZERO, BALL, McConfig(n_paths=20000, seed=6), n_probes=9, band=(50.0, 100.0),
                             fit_slope=False)
    assert rep.violations and not rep.passed


def test_cutoff_kernel_cannot_cross_a_wide_gap():
    dom = UnionOfBalls([Ball([0, 0], 1), Ball([3, 0], 1)])
    b = PerturbationB.truncated_stable(P1, cutoff=0.5)
    rep = verify_heat_bounds(P1, b, dom, McConfig(n_paths=5000, seed=7), n_probes=16, fit_slope=False)
    cross = [i for i, lab in enumerate(rep.labels) if lab == "cross_component"]
    assert cross and np.all(rep.ratios[cross] == 0)
    assert all(i in rep.excluded for i in cross)


def test_boundary_slope_near_half_alpha():
    slope, se, _ = boundary_slope(P1, ZERO, BALL, McConfig(n_paths=300000, seed=8, horizon=0.5))
    assert abs(slope - 0.5) < max(0.1, 4 * se)


def test_fit_lambda1_small():
    cfg = McConfig(n_paths=20000, seed=9, horizon=3.0)
    fit = fit_lambda1(P1, ZERO, BALL, cfg, start_paths=4000)
    assert fit.lambda1_hat > 0 and fit.r_squared > 0.95
    assert fit.lambda1_ci[0] < fit.lambda1_hat < fit.lambda1_ci[1]
    assert 0 < fit.eps0_hat < 1 and fit.consistent
    assert json.loads(fit.to_json())["lambda1_hat"] == pytest.approx(fit.lambda1_hat)
    with pytest.raises(FitError):
        fit_lambda1(P1, ZERO, BALL, cfg, start_paths=100, min_r2=1.0 + 1e-9)


def test_spectral_fit_consistency_rule():
    fit = SpectralFit(1.0, 0.1, (0.8, 1.2), 1.5, 0.1, 0.7, 0.999)
    # 1.0 >= 1.5 - 3 * hypot(0.1, 0.1) = 1.076 fails
    assert not fit.consistent
    assert SpectralFit(1.0, 0.1, (0.8, 1.2), 1.2, 0.1, 0.7, 0.999).consistent


def test_free_density_scaling():
    rep = check_scaling(P1, ZERO, "free_density", lam=2.0)
    assert rep.passed and rep.residual < 1e-5
    rep15 = check_scaling(StableParams(2, 1.5, 0.5), ZERO, "free_density", lam=3.0)
    assert rep15.passed
    with pytest.raises(ValueError):
        check_scaling(P1, PerturbationB.const(0.5), "free_density")
    with pytest.raises(ValueError):
        check_scaling(P1, ZERO, "no_such_quantity")


def test_mc_heat_scaling_common_seeds():
    rep = check_scaling(P1, PerturbationB.const(0.5), "mc_heat", lam=2.0, dom=BALL,
                        cfg=McConfig(n_paths=20000, seed=10))
    assert rep.passed
    assert rep.lhs.shape == rep.rhs.shape == (8,)


def test_extreme_decile_trend():
    scale = np.linspace(1e-4, 1.0, 1000)
    flat = extreme_decile_trend(np.ones(1000), scale)
    assert flat["quotient"] == 1.0 and flat["finite"] and len(flat["slices"]) == 5
    growing = extreme_decile_trend(scale ** -0.5, scale)
    assert growing["quotient"] > 5 and growing["slices"][0] > growing["slices"][-1]
