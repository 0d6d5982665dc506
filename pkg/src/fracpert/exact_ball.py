"""Closed-form potential theory of the isotropic stable process on balls."""

import math

import numpy as np
from scipy import integrate
from scipy.special import betainc, betaln, gammaln, hyp2f1

from ._kernels import green_ball_prefactor
from .geometry import Ball
from .special import riesz_constant


def _pts(x):
    return np.asarray(x, dtype=float)


def green_global(params, x, y):
    """Free-space Green function c |x-y|^{alpha-d}; inf on the diagonal."""
    r = np.linalg.norm(_pts(x) - _pts(y), axis=-1)
    c = riesz_constant(params.d, params.alpha)
    with np.errstate(divide="ignore"):
        val = np.where(r > 0, c * r ** (params.alpha - params.d), np.inf)
    return float(val) if val.ndim == 0 else val


def green_factor(params, z):
    """F(z) = int_0^z u^{alpha/2-1}(1+u)^{-d/2} du via the regularized incomplete beta function."""
    a, b = 0.5 * params.alpha, 0.5 * (params.d - params.alpha)
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        t = np.where(np.isinf(z), 1.0, z / (1.0 + z))
    return np.exp(betaln(a, b)) * betainc(a, b, t)


def green_factor_quad(params, z):
    """Same integral by adaptive Gauss-Kronrod after u = v^{2/alpha} (slow reference)."""
    a, h = params.alpha, 0.5 * params.d
    if z <= 0:
        return 0.0
    # u^{a/2-1} du = (2/a) dv  with  u = v^{2/a}
    top = z ** (0.5 * a)
    val, _ = integrate.quad(lambda v: (2.0 / a) * (1.0 + v ** (2.0 / a)) ** (-h), 0.0, top,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def _ball_terms(ball, x, y):
    x, y = _pts(x), _pts(y)
    px = ball.radius**2 - np.sum((x - ball.center) ** 2, axis=-1)
    py = ball.radius**2 - np.sum((y - ball.center) ** 2, axis=-1)
    r2 = np.sum((x - y) ** 2, axis=-1)
    return px, py, r2


def _check_closure(ball, *pts, tol=1e-12):
    for p in pts:
        if np.any(np.linalg.norm(_pts(p) - ball.center, axis=-1) > ball.radius * (1 + tol)):
            raise ValueError("point outside the closed ball")


def green_ball(params, ball, x, y):
    """Green function of the killed stable process on a ball; 0 on the boundary, inf on the diagonal."""
    _check_closure(ball, x, y)
    d, a = params.d, params.alpha
    px, py, r2 = _ball_terms(ball, x, y)
    px, py = np.maximum(px, 0.0), np.maximum(py, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(r2 > 0, px * py / (ball.radius**2 * r2), np.inf)
        val = green_ball_prefactor(d, a) * r2 ** (0.5 * (a - d)) * green_factor(params, z)
    val = np.where(r2 > 0, val, np.inf)
    val = np.where((px > 0) & (py > 0), val, np.where(r2 > 0, 0.0, val))
    return float(val) if np.ndim(val) == 0 else val


def green_ball_grad_x(params, ball, x, y):
    """Gradient in x of G_B(x, y) (analytic), x != y interior."""
    d, a = params.d, params.alpha
    x, y = _pts(x), _pts(y)
    px, py, r2 = _ball_terms(ball, x, y)
    py = py / ball.radius**2  # makes z scale free
    z = px * py / r2
    cst = green_ball_prefactor(d, a)
    F = green_factor(params, z)
    dF = z ** (0.5 * a - 1.0) * (1.0 + z) ** (-0.5 * d)
    diff = x - y
    grad_z = py[..., None] * (-2.0 * (x - ball.center) / r2[..., None] - 2.0 * px[..., None] * diff / r2[..., None] ** 2)
    rpow = r2 ** (0.5 * (a - d))
    return cst * ((a - d) * (rpow / r2 * F)[..., None] * diff + (rpow * dF)[..., None] * grad_z)


def poisson_constant(d, alpha):
    return math.exp(math.lgamma(0.5 * d) - (0.5 * d + 1.0) * math.log(math.pi)) * math.sin(0.5 * math.pi * alpha)


def poisson_ball(params, ball, x, y):
    """Exit-position density K_B(x, y) for x inside B and y outside its closure."""
    d, a = params.d, params.alpha
    px, py, r2 = _ball_terms(ball, x, y)
    if np.any(px <= 0):
        raise ValueError("x must lie inside the ball")
    if np.any(py >= 0):
        raise ValueError("y must lie outside the closed ball")
    val = poisson_constant(d, a) * px ** (0.5 * a) * (-py) ** (-0.5 * a) * r2 ** (-0.5 * d)
    return float(val) if np.ndim(val) == 0 else val


def exit_radius_cdf(params, ball, s):
    """P(|X_tau - c| <= s R) for a start at the center, s >= 1 (closed form)."""
    # with u = R^2/|y-c|^2 the radial law becomes a Beta(alpha/2, 1 - alpha/2) in u
    a = params.alpha
    s = np.asarray(s, dtype=float)
    u = np.clip(1.0 / s**2, 0.0, 1.0)
    return 1.0 - betainc(0.5 * a, 1.0 - 0.5 * a, u)


def mean_exit_time(params, ball, x):
    """E_x tau_B = c (R^2 - |x-c|^2)^{alpha/2}."""
    d, a = params.d, params.alpha
    px = ball.radius**2 - np.sum((_pts(x) - ball.center) ** 2, axis=-1)
    c = math.exp(gammaln(0.5 * d) - a * math.log(2.0) - gammaln(1.0 + 0.5 * a) - gammaln(0.5 * (d + a)))
    val = c * np.maximum(px, 0.0) ** (0.5 * a)
    return float(val) if np.ndim(val) == 0 else val


def fractional_laplacian_of_power(d, gamma, p, r):
    """(-Delta)^{gamma/2} applied to (1-|x|^2)_+^p at |x| = r < 1 (closed hypergeometric form)."""
    r = np.asarray(r, dtype=float)
    c = math.exp(gamma * math.log(2.0) + math.lgamma(p + 1.0) + math.lgamma(0.5 * (d + gamma))
                 - math.lgamma(p + 1.0 - 0.5 * gamma) - math.lgamma(0.5 * d))
    val = c * hyp2f1(0.5 * (d + gamma), 0.5 * gamma - p, 0.5 * d, r**2)
    return float(val) if np.ndim(val) == 0 else val


def green_gradient_profile(params, ball, x, y):
    """|x-y|^{alpha-d-1} (1 ^ delta(y)/|x-y|)^{alpha/2} (1 v |x-y|/delta(x))^{1-alpha/2}."""
    d, a = params.d, params.alpha
    r = np.linalg.norm(_pts(x) - _pts(y), axis=-1)
    dx, dy = ball.delta(x), ball.delta(y)
    return r ** (a - d - 1) * np.minimum(1.0, dy / r) ** (0.5 * a) * np.maximum(1.0, r / dx) ** (1 - 0.5 * a)


__all__ = [
    "Ball",
    "green_global",
    "green_factor",
    "green_factor_quad",
    "green_ball",
    "green_ball_grad_x",
    "poisson_ball",
    "poisson_constant",
    "exit_radius_cdf",
    "mean_exit_time",
    "green_gradient_profile",
    "fractional_laplacian_of_power",
]
