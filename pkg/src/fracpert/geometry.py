"""Balls, unions of balls, boundary distance and the comparability profiles."""

import math

import numpy as np

from .special import profile_q


class Ball:
    """Open ball B(center, radius). For a ball the C^{1,1} characteristic is (radius, 0)."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        if self.center.size < 1:
            raise ValueError("center must be a point")

    @property
    def d(self):
        return self.center.size

    @property
    def balls(self):
        return [self]

    @property
    def c11_characteristic(self):
        return self.radius, 0.0

    @property
    def diameter(self):
        return 2.0 * self.radius

    def signed_depth(self, x):
        x = np.asarray(x, dtype=float)
        return self.radius - np.linalg.norm(x - self.center, axis=-1)

    def delta(self, x):
        return np.maximum(self.signed_depth(x), 0.0)

    def component(self, x):
        """Index of the component containing x, -1 if x is outside the closure."""
        return np.where(self.signed_depth(x) >= 0, 0, -1)

    def scaled(self, lam):
        return Ball(lam * self.center, lam * self.radius)

    def inner_ball_witness(self, x, r, theta0=0.5):
        """Center A with B(A, theta0*r) inside B(x, r) and inside the ball, for 0 < r <= radius."""
        x = np.asarray(x, dtype=float)
        if not 0 < r <= self.radius:
            raise ValueError("need 0 < r <= radius")
        if not 0 < theta0 <= 0.5:
            raise ValueError("witness built for theta0 in (0, 1/2]")
        offset = x - self.center
        dist = np.linalg.norm(offset)
        # walk from x toward the center by (1 - theta0) r, stopping at the center
        step = min((1.0 - theta0) * r, dist)
        if dist > 0:
            return x - step * offset / dist
        return x.copy()

    def literal(self):
        return "ball " + " ".join(repr(float(c)) for c in self.center) + " " + repr(self.radius)

    def __repr__(self):
        return f"Ball({self.center.tolist()}, {self.radius})"


class UnionOfBalls:
    """Finite union of balls with pairwise disjoint closures."""

    def __init__(self, balls):
        balls = list(balls)
        if not balls:
            raise ValueError("union needs at least one ball")
        d = balls[0].d
        if any(b.d != d for b in balls):
            raise ValueError("balls of different dimension")
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                if _ball_gap(balls[i], balls[j]) <= 0:
                    raise ValueError(f"balls {i} and {j} overlap or touch")
        self.balls = balls

    @property
    def d(self):
        return self.balls[0].d

    @property
    def c11_characteristic(self):
        return min(b.radius for b in self.balls), 0.0

    @property
    def diameter(self):
        best = 0.0
        for b1 in self.balls:
            for b2 in self.balls:
                best = max(best, np.linalg.norm(b1.center - b2.center) + b1.radius + b2.radius)
        return best

    def gap(self, i=None, j=None):
        """dist(D_i, D_j); with no arguments the smallest gap between components."""
        if i is not None:
            return _ball_gap(self.balls[i], self.balls[j])
        n = len(self.balls)
        if n == 1:
            return math.inf
        return min(_ball_gap(self.balls[a], self.balls[b]) for a in range(n) for b in range(a + 1, n))

    def signed_depth(self, x):
        return np.max(np.stack([b.signed_depth(x) for b in self.balls]), axis=0)

    def delta(self, x):
        return np.maximum(self.signed_depth(x), 0.0)

    def component(self, x):
        depth = np.stack([b.signed_depth(x) for b in self.balls])
        idx = np.argmax(depth, axis=0)
        return np.where(np.max(depth, axis=0) >= 0, idx, -1)

    def scaled(self, lam):
        return UnionOfBalls([b.scaled(lam) for b in self.balls])

    def literal(self):
        return "\n".join(b.literal() for b in self.balls)

    def __repr__(self):
        return f"UnionOfBalls({self.balls!r})"


def _ball_gap(b1, b2):
    return float(np.linalg.norm(b1.center - b2.center) - b1.radius - b2.radius)


def parse_domain(text):
    """Domain from `ball cx cy ... r` lines; several lines give a union."""
    balls = []
    for raw in text.splitlines():
        line = raw.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "ball" or len(parts) < 4:
            raise ValueError(f"bad domain line: {raw!r}")
        nums = [float(p) for p in parts[1:]]
        balls.append(Ball(nums[:-1], nums[-1]))
    if not balls:
        raise ValueError("empty domain")
    return balls[0] if len(balls) == 1 else UnionOfBalls(balls)


def _directions(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_uniform(ball, n, rng):
    """Uniform points in a ball."""
    rad = ball.radius * rng.uniform(size=(n, 1)) ** (1.0 / ball.d)
    return ball.center + rad * _directions(rng, n, ball.d)


def sample_at_depth(ball, n, rng, dmin, dmax):
    """Points whose boundary distance is log-uniform on [dmin, dmax] (lengths in units of the radius)."""
    depth = ball.radius * np.exp(rng.uniform(math.log(dmin), math.log(dmax), size=(n, 1)))
    return ball.center + (ball.radius - depth) * _directions(rng, n, ball.d)


def _near(ball, x, rng, smin, smax):
    # partner points at log-uniform distance from x, redrawn until inside
    out = np.empty_like(x)
    for i, p in enumerate(x):
        while True:
            s = ball.radius * math.exp(rng.uniform(math.log(smin), math.log(smax)))
            q = p + s * _directions(rng, 1, ball.d)[0]
            if ball.signed_depth(q) > 1e-9 * ball.radius:
                out[i] = q
                break
    return out


STRATA = ("near_diagonal", "mid_range", "near_boundary", "cross_component")


def stratified_pairs(dom, n, rng, dmin=1e-4):
    """Probe pairs spread over the near-diagonal, mid-range, near-boundary and cross-component strata.

    Returns (xs, ys, labels). Cross-component pairs appear only for unions.
    """
    strata = [s for s in STRATA if s != "cross_component" or len(dom.balls) > 1]
    counts = [n // len(strata) + (k < n % len(strata)) for k in range(len(strata))]
    xs, ys, labels = [], [], []
    balls = dom.balls
    for name, m in zip(strata, counts):
        if m == 0:
            continue
        pick = rng.integers(len(balls), size=m)
        for k, bl in enumerate(balls):
            idx = np.flatnonzero(pick == k)
            if idx.size == 0:
                continue
            j = len(idx)
            if name == "near_diagonal":
                x = sample_at_depth(bl, j, rng, 0.1, 0.9)
                y = _near(bl, x, rng, 1e-3, 0.05)
            elif name == "mid_range":
                x = sample_at_depth(bl, j, rng, 0.05, 0.95)
                y = sample_at_depth(bl, j, rng, 0.05, 0.95)
                far = np.linalg.norm(x - y, axis=1) < 0.2 * bl.radius
                while np.any(far):
                    y[far] = sample_at_depth(bl, int(far.sum()), rng, 0.05, 0.95)
                    far = np.linalg.norm(x - y, axis=1) < 0.2 * bl.radius
            elif name == "near_boundary":
                x = sample_at_depth(bl, j, rng, dmin, 0.05)
                y = sample_uniform(bl, j, rng)
                swap = rng.uniform(size=j) < 0.5
                x[swap], y[swap] = y[swap].copy(), x[swap].copy()
            else:
                other = [balls[(k + 1 + o) % len(balls)] for o in rng.integers(len(balls) - 1, size=j)]
                x = sample_uniform(bl, j, rng)
                y = np.array([sample_uniform(ob, 1, rng)[0] for ob in other])
            xs.append(x)
            ys.append(y)
            labels += [name] * j
    return np.concatenate(xs), np.concatenate(ys), np.array(labels)


def delta_D(dom, x):
    """Distance from x to the boundary of D; positive iff x lies in D."""
    out = dom.delta(x)
    return float(out) if np.ndim(out) == 0 else out


def _check_inside(dom, *pts, tol=1e-12):
    for p in pts:
        if np.any(dom.signed_depth(p) < -tol * max(1.0, dom.diameter)):
            raise ValueError("point outside the domain closure")


def _dist(x, y):
    return np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)


def _finish(val):
    return float(val) if np.ndim(val) == 0 else val


def r_D(dom, x, y):
    return _finish(dom.delta(x) + dom.delta(y) + _dist(x, y))


def profile_fD(dom, params, t, x, y):
    """Dirichlet heat-kernel profile with boundary factors 1 ^ delta^{alpha/2}/sqrt(t)."""
    _check_inside(dom, x, y)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    half = 0.5 * params.alpha
    st = np.sqrt(t)
    fx = np.minimum(1.0, dom.delta(x) ** half / st)
    fy = np.minimum(1.0, dom.delta(y) ** half / st)
    return _finish(fx * fy * profile_q(params, t, _dist(x, y)))


def profile_gD(dom, params, x, y):
    """Green-function profile; +inf on the diagonal."""
    _check_inside(dom, x, y)
    d, a = params.d, params.alpha
    r = _dist(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (
            r ** (a - d)
            * np.minimum(1.0, dom.delta(x) / r) ** (0.5 * a)
            * np.minimum(1.0, dom.delta(y) / r) ** (0.5 * a)
        )
    return _finish(np.where(r > 0, val, np.inf))


def profile_hD(dom, params, x, y):
    """Profile controlling |S^b| G_D(x, y); three regimes by the sign of alpha - 2 beta."""
    _check_inside(dom, x, y)
    d, a, b = params.d, params.alpha, params.beta
    r = _dist(x, y)
    dx, dy = dom.delta(x), dom.delta(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        if params.regime > 0:
            val = r ** (a - b - d) * np.minimum(1.0, dy / r) ** (0.5 * a)
        elif params.regime == 0:
            val = r ** (b - d) * np.minimum(1.0, dy / r) ** b * np.maximum(1.0, np.log(r / dx))
        else:
            val = (
                r ** (a - b - d)
                * np.minimum(1.0, dy / r) ** (0.5 * a)
                * np.maximum(1.0, r / dx) ** (b - 0.5 * a)
            )
    return _finish(np.where(r > 0, val, np.inf))


def green_profile(dom, params, x, y):
    """|x-y|^{alpha-d} (1 ^ delta(x) delta(y)/|x-y|^2)^{alpha/2}, comparable to g_D."""
    _check_inside(dom, x, y)
    d, a = params.d, params.alpha
    r = _dist(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = r ** (a - d) * np.minimum(1.0, dom.delta(x) * dom.delta(y) / r**2) ** (0.5 * a)
    return _finish(np.where(r > 0, val, np.inf))
