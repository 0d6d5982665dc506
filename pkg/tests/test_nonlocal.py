import numpy as np
import pytest

from fracpert.geometry import Ball
from fracpert.jump_kernel import PerturbationB
from fracpert.nonlocal_op import apply_Sb, apply_Sb_to_green_ball, sb_bound_sweep, sb_green_ball_matrix
from fracpert.quadrature import NumericalError
from fracpert.special import StableParams

P = StableParams(2, 1.5, 0.5)
ONE = PerturbationB.const(1.0)


def _cos(xi):
    xi = np.asarray(xi, dtype=float)
    return lambda p: np.cos(p @ xi)


def test_zero_b_is_zero():
    assert apply_Sb(P, PerturbationB.zero(), _cos([1, 0]), np.zeros(2)) == 0.0
    assert apply_Sb_to_green_ball(P, PerturbationB.zero(), Ball([0, 0], 1), [0, 0], [0.5, 0]) == 0.0


def test_constant_function_is_annihilated():
    val = apply_Sb(P, ONE, lambda p: np.full(len(p), 3.0), np.array([0.2, 0.1]))
    assert abs(val) < 1e-12


def test_fourier_symbol():
    val = apply_Sb(P, ONE, _cos([0.0, 1.3]), np.zeros(2))
    assert val == pytest.approx(-(1.3**0.5), rel=1e-6)


def test_symbol_at_shifted_point():
    x = np.array([0.4, -0.7])
    xi = np.array([0.6, 0.8])
    val = apply_Sb(P, ONE, _cos(xi), x)
    assert val == pytest.approx(-np.cos(x @ xi), rel=1e-6)


def test_symmetric_and_gradient_agree(rng):
    for _ in range(6):
        c = rng.normal(size=2)
        w = rng.uniform(0.5, 2.0)
        f = lambda p, c=c, w=w: np.exp(-w * np.sum((p - c) ** 2, axis=-1))
        x = rng.normal(size=2) * 0.5
        v1, e1 = apply_Sb(P, PerturbationB.const(0.7), f, x, return_error=True, tol=1e-5)
        v2, e2 = apply_Sb(P, PerturbationB.const(0.7), f, x, return_error=True, tol=1e-5, method="gradient")
        assert abs(v1 - v2) <= 2 * (e1 + e2) + 1e-9


def test_linearity_in_b():
    f, x = _cos([0.7, 0.2]), np.array([0.3, 0.0])
    s1 = apply_Sb(P, PerturbationB.const(0.3), f, x)
    s2 = apply_Sb(P, PerturbationB.const(0.4), f, x)
    assert apply_Sb(P, PerturbationB.const(0.7), f, x) == pytest.approx(s1 + s2, rel=1e-6)


def test_scaling_with_rescaled_b():
    # b_lam = lam^{beta-alpha} a:  S^{b_lam}[f(lam .)](x) = lam^{2 beta - alpha} (S^b f)(lam x)
    lam, xi, x = 2.0, np.array([0.5, 0.5]), np.array([0.1, 0.2])
    b = PerturbationB.const(0.6)
    lhs = apply_Sb(P, b.scaled(P, lam), _cos(lam * xi), x)
    rhs = lam ** (2 * 0.5 - 1.5) * apply_Sb(P, b, _cos(xi), lam * x)
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_tolerance_failure_raises():
    with pytest.raises(NumericalError):
        apply_Sb(P, ONE, _cos([0.05, 0.0]), np.zeros(2), tol=1e-15, far=5.0)


# reference values from an independent adaptive scipy quadrature, b = 1, alpha = 1.5, beta = 0.5
ORACLE = [
    ((0.5, 0.5), (0.52, 0.49), -6.8318912, 1e-4),
    ((0.85, 0.0), (0.0, 0.3), -0.0145213, 2e-3),
    ((0.0, 0.3), (0.99, 0.0), -0.00390079, 1e-4),
    ((0.3, -0.2), (0.9, 0.4), -0.00830133, 1e-4),
]


@pytest.mark.parametrize("x,y,ref,rel", ORACLE)
def test_sb_green_ball_oracle(unit_ball, x, y, ref, rel):
    val, err = apply_Sb_to_green_ball(P, ONE, unit_ball, x, y, return_error=True)
    assert val == pytest.approx(ref, rel=rel)
    assert err < 1e-2 * abs(val)


def test_majorant_dominates(unit_ball, rng):
    for _ in range(5):
        x, y = rng.uniform(-0.6, 0.6, size=(2, 2))
        v = apply_Sb_to_green_ball(P, ONE, unit_ball, x, y)
        m = apply_Sb_to_green_ball(P, ONE, unit_ball, x, y, absolute=True)
        assert abs(v) <= m * (1 + 1e-6)


def test_truncated_stable_small_ball_is_multiple_of_green(unit_ball):
    from fracpert.exact_ball import green_ball

    b = PerturbationB.truncated_stable(P, cutoff=2.5)
    x, y = np.array([0.1, 0.2]), np.array([-0.3, 0.4])
    v1 = apply_Sb_to_green_ball(P, b, unit_ball, x, y)
    v2 = apply_Sb_to_green_ball(P, b, unit_ball, -x, y)
    assert v1 / green_ball(P, unit_ball, x, y) == pytest.approx(v2 / green_ball(P, unit_ball, -x, y), rel=1e-12)
    assert v1 > 0  # b <= 0 removes long jumps: killing-type sign reversed


def test_matrix_shape_and_diagonal(unit_ball):
    pts = np.array([[0.0, 0.0], [0.3, 0.1]])
    m = sb_green_ball_matrix(P, ONE, unit_ball, pts, pts)
    assert np.isnan(m[0, 0]) and np.isfinite(m[0, 1])


def test_input_validation(unit_ball):
    with pytest.raises(ValueError):
        apply_Sb_to_green_ball(P, ONE, unit_ball, [0.2, 0], [0.2, 0])
    with pytest.raises(ValueError):
        apply_Sb_to_green_ball(P, ONE, unit_ball, [1.2, 0], [0.2, 0])
    with pytest.raises(NotImplementedError):
        apply_Sb_to_green_ball(StableParams(3, 1.5, 0.5), ONE, Ball([0, 0, 0], 1), [0, 0, 0], [0.2, 0, 0])


def test_bound_sweep_small(unit_ball):
    out = sb_bound_sweep(P, ONE, unit_ball, n_pairs=30, seed=1)
    assert np.isfinite(out["C"]) and out["C"] > 0
    assert len(out["ratios"]) == 30
