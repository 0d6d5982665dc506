"""Normalizing constants, free-space isotropic stable densities and profiles."""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.special import gammaln, jv

from .quadrature import NumericalError, gauss_legendre, sphere_area


@dataclass(frozen=True)
class StableParams:
    """Dimension ``d`` and the indices ``alpha`` (principal) and ``beta`` (perturbation)."""

    d: int
    alpha: float
    beta: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        if not 0.0 < self.beta < self.alpha < 2.0:
            raise ValueError(f"need 0 < beta < alpha < 2, got alpha={self.alpha}, beta={self.beta}")

    @property
    def regime(self):
        """Sign of alpha - 2*beta: +1, 0 or -1 (selects the h_D branch)."""
        gap = self.alpha - 2.0 * self.beta
        if abs(gap) < 1e-12:
            return 0
        return 1 if gap > 0 else -1


def normalizing_constant(d, sigma):
    """A(d, -sigma), the constant making the kernel operator equal to -(-Delta)^{sigma/2}."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0.0 < sigma < 2.0:
        raise ValueError(f"sigma must lie in (0, 2), got {sigma}")
    log_c = (
        math.log(sigma)
        + (sigma - 1.0) * math.log(2.0)
        - 0.5 * d * math.log(math.pi)
        + math.lgamma(0.5 * (d + sigma))
        - math.lgamma(1.0 - 0.5 * sigma)
    )
    return math.exp(log_c)


def riesz_constant(d, gamma):
    """Constant of the Riesz potential kernel c |x|^{gamma-d} with symbol |xi|^{-gamma}."""
    if not 0.0 < gamma < d:
        raise ValueError("need 0 < gamma < d")
    return math.exp(
        -gamma * math.log(2.0)
        - 0.5 * d * math.log(math.pi)
        + math.lgamma(0.5 * (d - gamma))
        - math.lgamma(0.5 * gamma)
    )


def cauchy_density(d, t, r):
    """Closed-form alpha = 1 density."""
    r = np.asarray(r, dtype=float)
    c = math.exp(math.lgamma(0.5 * (d + 1)) - 0.5 * (d + 1) * math.log(math.pi))
    return c * t * (t * t + r * r) ** (-0.5 * (d + 1))


# -- unit-time density p_1(rho) ------------------------------------------------

def _series_terms(d, alpha, rho, kmax=400):
    """Terms of the expansion of p_1 in powers of rho^{-alpha}, and their envelopes.

    Convergent for alpha < 1, asymptotic for alpha >= 1.
    """
    k = np.arange(1, kmax + 1, dtype=float)
    with np.errstate(over="ignore"):
        envelope = np.exp(
            gammaln(0.5 * k * alpha + 1.0)
            + gammaln(0.5 * (k * alpha + d))
            - gammaln(k + 1.0)
            + k * alpha * math.log(2.0)
            - (d + k * alpha) * math.log(rho)
        ) * math.pi ** (-0.5 * d - 1.0)
    sign = np.where(k % 2 == 1, 1.0, -1.0)
    return sign * np.sin(0.5 * math.pi * k * alpha) * envelope, envelope


def _density_series(d, alpha, rho):
    """Return (value, error_estimate) or None if the series is not usable at rho."""
    terms, env = _series_terms(d, alpha, rho)
    finite = np.isfinite(env)
    if alpha < 1.0:
        if not finite.all():
            return None
        total = float(np.sum(terms))
        err = float(env[-1]) + 1e-15 * float(env.max())
    else:
        # optimal truncation of the asymptotic expansion at the smallest envelope
        best = int(np.argmin(np.where(finite, env, np.inf)))
        total = float(np.sum(terms[:best]))
        err = float(env[best]) + 1e-15 * float(env[: best + 1].max())
    if not np.isfinite(total) or total <= 0:
        return None
    return total, err


def _density_hankel(d, alpha, rho):
    """Radial Fourier inversion of exp(-|xi|^alpha); returns (value, error estimate)."""
    nu = 0.5 * d - 1.0
    s_max = 42.0 ** (1.0 / alpha)
    if rho == 0.0:
        val = (2.0 * math.pi) ** (-d) * sphere_area(d) * math.gamma(d / alpha) / alpha
        return val, 0.0

    def integrand(s):
        return np.exp(-(s**alpha)) * s ** (0.5 * d) * jv(nu, rho * s)

    xg, wg = gauss_legendre(16)
    width = min(math.pi / rho, 0.5)
    n_pan = int(math.ceil(s_max / width))
    edges = np.linspace(0.0, n_pan * width, n_pan + 1)
    # grade the first panel toward s = 0 where exp(-s^alpha) is not smooth
    first = edges[1] * 0.5 ** np.arange(0, 30)[::-1]
    edges = np.concatenate([[0.0], first, edges[2:]])
    left, right = edges[:-1, None], edges[1:, None]
    x = 0.5 * (right - left) * xg + 0.5 * (right + left)
    w = 0.5 * (right - left) * wg
    vals = integrand(x)
    total = float(np.sum(vals * w))
    # second estimate with an 8-point rule for the error bound
    xg8, wg8 = gauss_legendre(8)
    x8 = 0.5 * (right - left) * xg8 + 0.5 * (right + left)
    w8 = 0.5 * (right - left) * wg8
    total8 = float(np.sum(integrand(x8) * w8))
    pref = (2.0 * math.pi) ** (-0.5 * d) * rho ** (1.0 - 0.5 * d)
    err = abs(total - total8) * pref + 1e-15 * pref * float(np.sum(np.abs(vals * w)))
    return pref * total, err


@lru_cache(maxsize=200_000)
def _p1(d, alpha, rho, rtol=1e-7):
    if alpha == 1.0:
        return float(cauchy_density(d, 1.0, rho))
    use_series = rho > (3.0 if alpha < 1.0 else 6.0)
    if use_series:
        out = _density_series(d, alpha, rho)
        if out is not None and out[1] <= rtol * out[0]:
            return out[0]
    val, err = _density_hankel(d, alpha, rho)
    if err > rtol * abs(val):
        out = _density_series(d, alpha, rho)
        if out is not None and out[1] <= rtol * out[0]:
            return out[0]
        raise NumericalError(f"stable density at rho={rho} did not converge", err / abs(val))
    return val


def stable_density_free(params, t, r):
    """Transition density p(t, x, y) of the isotropic alpha-stable process, |x - y| = r.

    Uses exact scaling p(t, r) = t^{-d/alpha} p(1, r t^{-1/alpha}).
    """
    d, alpha = params.d, float(params.alpha)
    t_arr, r_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(t_arr <= 0) or np.any(r_arr < 0):
        raise ValueError("need t > 0 and r >= 0")
    out = np.empty(t_arr.shape)
    for idx in np.ndindex(t_arr.shape):
        tt, rr = t_arr[idx], r_arr[idx]
        rho = rr * tt ** (-1.0 / alpha)
        out[idx] = tt ** (-d / alpha) * _p1(d, alpha, float(rho))
    return out if out.shape else float(out)


def stable_tail_asymptotic(params, t, r):
    """Leading large-distance term t A(d,-alpha) r^{-d-alpha}."""
    return t * normalizing_constant(params.d, params.alpha) * np.asarray(r, dtype=float) ** (-params.d - params.alpha)


def profile_q(params, t, r):
    """t^{-d/alpha} min t r^{-d-alpha}."""
    d, a = params.d, params.alpha
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        off = np.where(r > 0, t * r ** (-(d + a)), np.inf)
    out = np.minimum(t ** (-d / a), off)
    return out if out.shape else float(out)


def profile_independent_sum(params, a, t, r):
    """Two-sided profile of the density of the alpha-stable plus a-scaled beta-stable sum."""
    if np.any(np.asarray(a) < 0):
        raise ValueError("a must be nonnegative")
    d, al, be = params.d, params.alpha, params.beta
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        on = np.minimum(t ** (-d / al), np.where(a > 0, (a * t) ** (-d / be), np.inf))
        off = np.where(r > 0, t * r ** (-(d + al)) + a * t * r ** (-(d + be)), np.inf)
    out = np.minimum(on, off)
    return out if out.shape else float(out)
