"""Quadrature rules shared by the kernel, operator and series modules."""

from functools import lru_cache
import math

import numpy as np
from scipy.special import roots_jacobi, roots_legendre, gammaln


class NumericalError(RuntimeError):
    """A quadrature or series evaluation failed to reach its tolerance.

    ``estimate`` carries the achieved error estimate (or ``nan`` when the
    failure is a non-finite intermediate).
    """

    def __init__(self, message, estimate=float("nan")):
        super().__init__(message)
        self.estimate = estimate


@lru_cache(maxsize=None)
def gauss_legendre(n):
    x, w = roots_legendre(n)
    return x, w


@lru_cache(maxsize=None)
def gauss_jacobi(n, left, right):
    """Nodes/weights on [0, 1] for the weight ``s**left * (1 - s)**right``."""
    x, w = roots_jacobi(n, right, left)
    s = 0.5 * (x + 1.0)
    w = w * 0.5 ** (1.0 + left + right)
    return s, w


def sphere_area(d):
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@lru_cache(maxsize=None)
def sphere_rule(d, n):
    """Symmetric quadrature on S^{d-1}: directions closed under e -> -e.

    For d = 2 this is the n-point trapezoid rule in the angle; in higher
    dimension a product rule in hyperspherical coordinates with Gauss-Jacobi
    weights for the sin-powers. Returns (directions (m, d), weights (m,)).
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if d == 2:
        if n % 2:
            n += 1
        th = 2.0 * math.pi * (np.arange(n) + 0.5) / n
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        w = np.full(n, 2.0 * math.pi / n)
        return dirs, w
    # recursive: polar angle phi in [0, pi] with weight sin^{d-2}(phi);
    # substitute c = cos(phi), weight (1 - c^2)^{(d-3)/2} -> Gauss-Jacobi
    p = (d - 3) / 2.0
    c, wc = roots_jacobi(n, p, p)
    sub_dirs, sub_w = sphere_rule(d - 1, 2 * n)
    s = np.sqrt(1.0 - c**2)
    dirs = np.concatenate(
        [np.concatenate([np.full((len(sub_w), 1), ci), si * sub_dirs], axis=1) for ci, si in zip(c, s)]
    )
    w = np.concatenate([wi * sub_w for wi in wc])
    return dirs, w


def tanh_sinh(n=40, h=None):
    """Double-exponential rule on [0, 1]; robust to algebraic endpoint singularities."""
    if h is None:
        h = 6.0 / n
    k = np.arange(-n, n + 1) * h
    u = 0.5 * math.pi * np.sinh(k)
    x = 0.5 * (1.0 + np.tanh(u))
    w = 0.25 * math.pi * h * np.cosh(k) / np.cosh(u) ** 2
    keep = (x > 0.0) & (x < 1.0) & (w > 0.0)
    return x[keep], w[keep]


def panels(a, b, n_panels, order=8):
    """Composite Gauss-Legendre on [a, b] with equal panels."""
    xg, wg = gauss_legendre(order)
    edges = np.linspace(a, b, n_panels + 1)
    left, right = edges[:-1, None], edges[1:, None]
    x = 0.5 * (right - left) * xg[None, :] + 0.5 * (right + left)
    w = 0.5 * (right - left) * wg[None, :]
    return x.ravel(), w.ravel()


def log_gamma_ratio(a, b):
    return float(gammaln(a) - gammaln(b))
