"""Compiled scalar kernels shared by the operator, series and simulation modules."""

import math

import numba as nb
import numpy as np

_TINY = 1e-300


@nb.njit(cache=True)
def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    dd = 1.0 - qab * x / qap
    if abs(dd) < _TINY:
        dd = _TINY
    dd = 1.0 / dd
    h = dd
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        dd = 1.0 + aa * dd
        if abs(dd) < _TINY:
            dd = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        dd = 1.0 / dd
        h *= dd * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        dd = 1.0 + aa * dd
        if abs(dd) < _TINY:
            dd = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        dd = 1.0 / dd
        delta = dd * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


@nb.njit(cache=True)
def beta_lower(a, b, x):
    """Unregularized lower incomplete beta integral int_0^x t^{a-1}(1-t)^{b-1} dt."""
    if x <= 0.0:
        return 0.0
    lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    if x >= 1.0:
        return math.exp(lbeta)
    front = math.exp(a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return math.exp(lbeta) - front * _betacf(b, a, 1.0 - x) / b


@nb.njit(cache=True)
def green_factor(z, d, alpha):
    """int_0^z u^{alpha/2-1} (1+u)^{-d/2} du."""
    if z <= 0.0:
        return 0.0
    t = z / (1.0 + z)
    return beta_lower(0.5 * alpha, 0.5 * (d - alpha), t)


@nb.njit(cache=True)
def green_ball_pt(x, y, c, R, d, alpha, cst):
    """G_B(x, y) for B = B(c, R); cst is the prefactor 2^{-alpha} pi^{-d/2} Gamma(d/2)/Gamma(alpha/2)^2.

    Returns 0 if either point is outside the ball and inf on the diagonal.
    """
    r2 = 0.0
    px = R * R
    py = R * R
    for k in range(d):
        dk = x[k] - y[k]
        r2 += dk * dk
        px -= (x[k] - c[k]) ** 2
        py -= (y[k] - c[k]) ** 2
    if px <= 0.0 or py <= 0.0:
        return 0.0
    if r2 == 0.0:
        return np.inf
    z = px * py / (R * R * r2)
    return cst * r2 ** (0.5 * (alpha - d)) * green_factor(z, d, alpha)


def green_ball_prefactor(d, alpha):
    return math.exp(
        -alpha * math.log(2.0) - 0.5 * d * math.log(math.pi) + math.lgamma(0.5 * d) - 2.0 * math.lgamma(0.5 * alpha)
    )


@nb.njit(cache=True)
def splitmix64(x):
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    return z ^ (z >> np.uint64(31))


# -- xoshiro256** streams keyed by (seed, index) -------------------------------

@nb.njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@nb.njit(cache=True)
def rng_init(state, seed, index):
    """Fill the 4-word state from splitmix64 applied to (seed, index)."""
    h = splitmix64(np.uint64(seed) ^ np.uint64(0x5851F42D4C957F2D)) ^ splitmix64(np.uint64(index))
    for k in range(4):
        h = splitmix64(h)
        state[k] = h
    if state[0] == 0 and state[1] == 0 and state[2] == 0 and state[3] == 0:
        state[0] = np.uint64(1)


@nb.njit(cache=True)
def rng_next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@nb.njit(cache=True)
def rng_uniform(s):
    """Uniform on (0, 1): 53 random bits, never exactly 0."""
    return ((rng_next(s) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def rng_normal(s):
    # Marsaglia polar method, one value per call (the partner is discarded for simplicity)
    while True:
        u = 2.0 * rng_uniform(s) - 1.0
        v = 2.0 * rng_uniform(s) - 1.0
        q = u * u + v * v
        if 0.0 < q < 1.0:
            return u * math.sqrt(-2.0 * math.log(q) / q)
