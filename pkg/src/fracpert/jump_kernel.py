"""Perturbation functions b, the jump intensity j^b and the dominating kernel used for thinning."""

import math

import numpy as np

from .quadrature import sphere_area
from .special import normalizing_constant

ZERO, CONST, TRUNCATED_STABLE, CALLBACK = 0, 1, 2, 3
_FORM_NAMES = {"zero": ZERO, "const": CONST, "truncated_stable": TRUNCATED_STABLE, "callback": CALLBACK}


class PerturbationB:
    """Bounded symmetric b(x, z) with its sup-norm bound A.

    Builtins: ``PerturbationB.zero``, ``.const(a)``, ``.truncated_stable(params)``
    (b = -(A(d,-alpha)/A(d,-beta)) |z|^{beta-alpha} 1{|z| >= cutoff}) and
    ``.callback(params, fn, A)`` where ``fn(x, z)`` is vectorized over leading axes.
    """

    def __init__(self, kind, a=0.0, cutoff=1.0, fn=None, A=0.0, ratio=None, exponent=None, elliptic_eps=None):
        self.kind = kind
        self.exponent = exponent  # beta - alpha for the truncated form
        self.a = float(a)
        self.cutoff = float(cutoff)
        self.fn = fn
        self.A = float(A)
        self.ratio = ratio  # A(d,-alpha)/A(d,-beta), only needed by the truncated form
        self.elliptic_eps = elliptic_eps

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls):
        return cls(ZERO)

    @classmethod
    def const(cls, a, elliptic_eps=None):
        return cls(CONST, a=a, A=abs(a), elliptic_eps=elliptic_eps)

    @classmethod
    def truncated_stable(cls, params, cutoff=1.0):
        ratio = normalizing_constant(params.d, params.alpha) / normalizing_constant(params.d, params.beta)
        sup = ratio * cutoff ** (params.beta - params.alpha)
        return cls(TRUNCATED_STABLE, cutoff=cutoff, A=sup, ratio=ratio, exponent=params.beta - params.alpha)

    @classmethod
    def callback(cls, params, fn, A, elliptic_eps=None, n_check=1000, seed=12345):
        b = cls(CALLBACK, fn=fn, A=A, elliptic_eps=elliptic_eps)
        b._spot_check(params, n_check, seed)
        return b

    @classmethod
    def from_config(cls, params, form, a=0.0, A=None, elliptic_eps=None):
        kind = _FORM_NAMES.get(form)
        if kind is None or kind == CALLBACK:
            raise ValueError(f"unknown b form {form!r}")
        if kind == ZERO:
            b = cls.zero()
        elif kind == CONST:
            b = cls.const(a)
        else:
            b = cls.truncated_stable(params)
        if A is not None:
            if A < b.A - 1e-12:
                raise ValueError(f"b.A={A} is below the sup norm {b.A} of the chosen form")
            b.A = float(A)
        b.elliptic_eps = elliptic_eps
        return b

    # -- evaluation --------------------------------------------------------
    @property
    def name(self):
        return {ZERO: "zero", CONST: "const", TRUNCATED_STABLE: "truncated_stable", CALLBACK: "callback"}[self.kind]

    @property
    def positive_sup(self):
        """Bound on the positive part of b, which is all the thinning majorant needs."""
        if self.kind == CONST:
            return max(self.a, 0.0)
        if self.kind in (ZERO, TRUNCATED_STABLE):
            return 0.0
        return self.A

    @property
    def is_radial(self):
        """b(x, z) depends on |z| only."""
        return self.kind != CALLBACK

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == ZERO:
            return np.zeros_like(r)
        if self.kind == CONST:
            return np.full_like(r, self.a)
        if self.kind == TRUNCATED_STABLE:
            with np.errstate(divide="ignore"):
                return np.where(r >= self.cutoff, -self.ratio * r**self.exponent, 0.0)
        raise TypeError("callback b is not radial")

    def __call__(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.kind == CALLBACK:
            return np.asarray(self.fn(x, z), dtype=float)
        return self.radial(np.linalg.norm(z, axis=-1))

    def tail_weight(self, params, lam):
        """int_{|z|>lam} b(z) |z|^{-d-beta} dz for radial forms (closed form)."""
        d, al, be = params.d, params.alpha, params.beta
        area = sphere_area(d)
        lam = np.asarray(lam, dtype=float)
        if self.kind == ZERO:
            out = np.zeros_like(lam)
        elif self.kind == CONST:
            out = self.a * area * lam ** (-be) / be
        elif self.kind == TRUNCATED_STABLE:
            out = -self.ratio * area * np.maximum(lam, self.cutoff) ** (-al) / al
        else:
            raise TypeError("no closed-form tail for callback b")
        return float(out) if out.ndim == 0 else out

    def scaled(self, params, lam):
        """b_lam(x, z) = lam^{beta-alpha} b(x/lam, z/lam); keeps sup norm A_lam = lam^{beta-alpha} A."""
        f = lam ** (params.beta - params.alpha)
        eps = None if self.elliptic_eps is None else self.elliptic_eps
        if self.kind == ZERO:
            return PerturbationB.zero()
        if self.kind == CONST:
            out = PerturbationB.const(f * self.a, elliptic_eps=eps)
            out.A = f * self.A
            return out
        if self.kind == TRUNCATED_STABLE:
            # lam^{beta-alpha} |z/lam|^{beta-alpha} = |z|^{beta-alpha}: only the cutoff moves
            out = PerturbationB.truncated_stable(params, cutoff=self.cutoff * lam)
            out.A = f * self.A
            return out
        fn = self.fn
        out = PerturbationB(CALLBACK, fn=lambda x, z: f * fn(np.asarray(x) / lam, np.asarray(z) / lam),
                            A=f * self.A, elliptic_eps=eps)
        return out

    def _spot_check(self, params, n, seed):
        # bounds and symmetry hold almost everywhere in theory; here only at n random points
        rng = np.random.default_rng(seed)
        d = params.d
        x = rng.uniform(-2.0, 2.0, size=(n, d))
        z = rng.standard_normal((n, d)) * np.exp(rng.uniform(-4.0, 2.0, size=(n, 1)))
        b1 = np.asarray(self.fn(x, z), dtype=float)
        b2 = np.asarray(self.fn(x, -z), dtype=float)
        if not np.all(np.isfinite(b1)):
            raise ValueError("callback b returned non-finite values")
        if np.any(np.abs(b1 - b2) > 1e-12 * np.maximum(1.0, np.abs(b1))):
            raise ValueError("callback b is not symmetric in z")
        if np.any(np.abs(b1) > self.A * (1 + 1e-12)):
            raise ValueError("callback b exceeds its declared sup norm A")
        floor = -admissible_floor(params, np.linalg.norm(z, axis=1))
        if np.any(b1 < floor - 1e-12):
            raise ValueError("callback b violates the admissibility floor")

    def __repr__(self):
        return f"PerturbationB({self.name}, a={self.a}, A={self.A})"


def admissible_floor(params, r):
    """(A(d,-alpha)/A(d,-beta)) r^{beta-alpha}; admissible b stay above minus this."""
    ratio = normalizing_constant(params.d, params.alpha) / normalizing_constant(params.d, params.beta)
    return ratio * np.asarray(r, dtype=float) ** (params.beta - params.alpha)


def eps_A(params, A):
    """Jump length below which j^b is at least half the stable kernel."""
    if A < 0:
        raise ValueError("A must be nonnegative")
    if A == 0:
        return math.inf
    ratio = normalizing_constant(params.d, params.alpha) / normalizing_constant(params.d, params.beta)
    return (0.5 * ratio / A) ** (1.0 / (params.alpha - params.beta))


def j_b(params, b, x, y):
    """Jump intensity from x to y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = y - x
    r = np.linalg.norm(z, axis=-1)
    if np.any(r == 0):
        raise ValueError("j_b is undefined on the diagonal")
    d, al, be = params.d, params.alpha, params.beta
    ca, cb = normalizing_constant(d, al), normalizing_constant(d, be)
    val = ca * r ** (-d - al) + cb * b(x, z) * r ** (-d - be)
    return float(val) if np.ndim(val) == 0 else val


def dominating_kernel(params, A, r):
    """State-independent majorant A(d,-alpha) r^{-d-alpha} + A A(d,-beta) r^{-d-beta}."""
    d, al, be = params.d, params.alpha, params.beta
    r = np.asarray(r, dtype=float)
    val = normalizing_constant(d, al) * r ** (-d - al) + A * normalizing_constant(d, be) * r ** (-d - be)
    return float(val) if np.ndim(val) == 0 else val


def tail_intensity(params, A, delta):
    """Lambda(delta), the total dominating intensity of jumps longer than delta."""
    d, al, be = params.d, params.alpha, params.beta
    return sphere_area(d) * (
        normalizing_constant(d, al) * delta ** (-al) / al + A * normalizing_constant(d, be) * delta ** (-be) / be
    )


def uniform_directions(rng, n, d):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_dominating_jump(params, A, delta, rng, n=None):
    """Displacements with |z| > delta drawn from j_dom(|z|) / Lambda(delta).

    Mixture of two radial Pareto laws (indices alpha and beta) sampled by inverse CDF.
    ``rng`` is a numpy Generator; returns shape (d,) or (n, d).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    d, al, be = params.d, params.alpha, params.beta
    m = 1 if n is None else n
    w_alpha = sphere_area(d) * normalizing_constant(d, al) * delta ** (-al) / al / tail_intensity(params, A, delta)
    u = rng.random(m)
    pick_alpha = rng.random(m) < w_alpha
    index = np.where(pick_alpha, al, be)
    radius = delta * (1.0 - u) ** (-1.0 / index)
    z = radius[:, None] * uniform_directions(rng, m, d)
    return z[0] if n is None else z
