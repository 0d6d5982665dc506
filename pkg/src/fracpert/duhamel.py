"""Perturbation series for the Green function of a ball.

G_0 = G_B and G_n(x, y) = int_B G_{n-1}(x, z) K(z, y) dz with K(z, y) = S^b_z G_B(z, y).
The integrals run on a polar Nystrom grid of the ball. Two singularities are
subtracted: z = y, where K(., y) blows up, and (for n = 1) z = x, where G_B(x, .)
does. The subtracted pieces are integrated exactly or by dedicated rules:

* int_B G_B(x, z) dz = E_x tau_B (closed form);
* m(y) = int_B K(z, y) dz = int_B G_B(z, y) S^b 1_B(z) dz by symmetry of S^b,
  where S^b 1_B is closed-form for the built-in b and the remaining integral is
  done in polar coordinates about y.

Radial b makes K invariant under rotations about the center, so the grid-to-grid
kernel matrix only needs one row block per grid radius.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .exact_ball import fractional_laplacian_of_power, green_ball, mean_exit_time
from .geometry import Ball, profile_gD, profile_hD, sample_at_depth, sample_uniform, stratified_pairs
from .jump_kernel import CONST, TRUNCATED_STABLE, ZERO
from .nonlocal_op import _Rules, apply_Sb_to_green_ball, sb_bound_sweep
from .quadrature import NumericalError, gauss_jacobi, gauss_legendre
from .special import normalizing_constant


class SeriesError(NumericalError):
    """Non-finite or otherwise unusable series term."""


class ContractionError(NumericalError):
    """The certified contraction factor is not below the required level."""


# -- quadrature grid -----------------------------------------------------------

@dataclass(frozen=True)
class PolarGrid:
    ball: Ball
    n_theta: int
    n_rad: int
    nodes: np.ndarray
    weights: np.ndarray
    radii: np.ndarray

    @property
    def size(self):
        return self.n_theta * self.n_rad

    def rotation_index(self, k):
        """Permutation taking node (k', p') to node (k' - k mod n_theta, p')."""
        kk = np.arange(self.n_theta)
        return ((kk[:, None] - k) % self.n_theta * self.n_rad + np.arange(self.n_rad)[None, :]).reshape(-1)


def polar_grid(ball, n_theta=16, n_rad=8):
    """Tensor grid in (angle, radius), radially graded toward the boundary.

    rho = R (1 - (1 - s)^2) with Gauss-Legendre s, so the boundary layer
    delta^{alpha/2} becomes a power of (1 - s) with a larger exponent.
    Node index is k * n_rad + p for angle k and radius p.
    """
    if ball.d != 2:
        raise NotImplementedError("the series grid is built for d = 2")
    x, w = gauss_legendre(n_rad)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    R = ball.radius
    rho = R * (1.0 - (1.0 - s) ** 2)
    jac = 2.0 * R * (1.0 - s)
    th = 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    nodes = ball.center + (rho[None, :, None] * np.stack([np.cos(th), np.sin(th)], axis=1)[:, None, :]).reshape(-1, 2)
    wt = np.tile(ws * jac * rho * 2.0 * math.pi / n_theta, n_theta)
    for a in (nodes, wt, rho):
        a.setflags(write=False)
    return PolarGrid(ball, n_theta, n_rad, nodes, wt, rho)


# -- S^b 1_B and the kernel mass m(y) -----------------------------------------

def _sb_indicator(params, b, ball, z):
    """S^b 1_B(z) for z in B."""
    z = np.atleast_2d(z)
    cb = normalizing_constant(params.d, params.beta)
    if b.kind == ZERO:
        return np.zeros(len(z))
    if b.kind == CONST:
        r = np.linalg.norm(z - ball.center, axis=1) / ball.radius
        return -b.a * ball.radius ** (-params.beta) * fractional_laplacian_of_power(params.d, params.beta, 0.0, r)
    if b.kind == TRUNCATED_STABLE and ball.diameter <= b.cutoff:
        return np.full(len(z), -cb * b.tail_weight(params, b.cutoff))
    # exit distance along each direction, averaged over a fine angular rule
    th = 2.0 * math.pi * (np.arange(512) + 0.5) / 512
    e = np.stack([np.cos(th), np.sin(th)], axis=1)
    q = z - ball.center
    qe = q @ e.T
    reach = -qe + np.sqrt(qe**2 + ball.radius**2 - np.sum(q * q, axis=1, keepdims=True))
    return -cb * np.mean(b.tail_weight(params, reach), axis=1)


def _ray_rule(L, s0, left, right, n=8, ratio=2.0):
    """Nodes/weights for int_0^L f with f ~ rho^left at 0 and (L - rho)^right at L."""
    s0 = min(s0, 0.5 * L)
    pts = [0.0, s0]
    while pts[-1] * ratio < 0.5 * L:
        pts.append(pts[-1] * ratio)
    pts.append(0.5 * L if pts[-1] < 0.5 * L else pts[-1])
    pts.append(L)
    nodes, wts = [], []
    gl_x, gl_w = gauss_legendre(n)
    for a, c in zip(pts[:-1], pts[1:]):
        h = c - a
        if h <= 0:
            continue
        if a == 0.0:
            s, w = gauss_jacobi(n, left, 0.0)
            nodes.append(a + h * s)
            wts.append(h * w / s**left)
        elif c == L:
            s, w = gauss_jacobi(n, 0.0, right)
            nodes.append(a + h * s)
            wts.append(h * w / (1.0 - s) ** right)
        else:
            nodes.append(a + 0.5 * h * (gl_x + 1.0))
            wts.append(0.5 * h * gl_w)
    return np.concatenate(nodes), np.concatenate(wts)


def kernel_mass(params, b, ball, y, n_ang=96):
    """m(y) = int_B S^b_z G_B(z, y) dz."""
    y = np.asarray(y, dtype=float)
    if b.kind == ZERO:
        return 0.0
    if b.kind == TRUNCATED_STABLE and ball.diameter <= b.cutoff:
        return float(_sb_indicator(params, b, ball, y)[0] * mean_exit_time(params, ball, y))
    al, be = params.alpha, params.beta
    right = 0.5 * al - be if b.kind == CONST else 0.5 * al
    dy = ball.radius - np.linalg.norm(y - ball.center)
    q = y - ball.center
    th = 2.0 * math.pi * (np.arange(n_ang) + 0.5) / n_ang
    total = 0.0
    for t in th:
        e = np.array([math.cos(t), math.sin(t)])
        qe = q @ e
        L = -qe + math.sqrt(qe**2 + ball.radius**2 - q @ q)
        rho, w = _ray_rule(L, 0.5 * dy, al - 1.0, max(right, -0.9))
        z = y + rho[:, None] * e
        f = rho * green_ball(params, ball, z, np.broadcast_to(y, z.shape)) * _sb_indicator(params, b, ball, z)
        total += np.sum(w * f)
    return total * 2.0 * math.pi / n_ang


# -- kernel tables -------------------------------------------------------------

def duhamel_rules(params):
    """Operator rules used inside the series (about 3e-5 relative accuracy)."""
    return _Rules(params, n_in=8, n_gl=8, n_bd=6, n_pole=6, n_ang=96)


class KernelTables:
    """Memoized K(z, y) = S^b_z G_B(z, y) on a grid and at probe points."""

    def __init__(self, params, b, ball, grid, rules=None, pair_order=4):
        self.params, self.b, self.ball, self.grid = params, b, ball, grid
        self.pair_order = pair_order
        self.rules = rules or duhamel_rules(params)
        self._pts = {}
        self._mass = {}
        self.n_evals = 0
        self.matrix = self._grid_matrix()
        self.mass_grid = np.tile(np.array([self.mass(grid.nodes[p]) for p in range(grid.n_rad)]), grid.n_theta)
        self.area = math.pi * ball.radius**2

    def K(self, z, y):
        if self.b.kind == ZERO:
            return 0.0
        key = (tuple(z), tuple(y))
        if key not in self._pts:
            self.n_evals += 1
            self._pts[key] = apply_Sb_to_green_ball(self.params, self.b, self.ball, z, y, rules=self.rules)
        return self._pts[key]

    def mass(self, y):
        key = tuple(np.asarray(y, dtype=float))
        if key not in self._mass:
            self._mass[key] = kernel_mass(self.params, self.b, self.ball, y)
        return self._mass[key]

    def _grid_matrix(self):
        g = self.grid
        N = g.size
        base = np.zeros((g.n_rad, N))
        if self.b.kind != ZERO:
            for p in range(g.n_rad):
                for j in range(N):
                    if j != p:
                        base[p, j] = self.K(g.nodes[p], g.nodes[j])
        # row (k, p) is row (0, p) with the columns rotated back by k
        mat = np.empty((N, N))
        for k in range(g.n_theta):
            perm = g.rotation_index(k)
            mat[k * g.n_rad:(k + 1) * g.n_rad] = base[:, perm]
        np.fill_diagonal(mat, 0.0)
        mat.setflags(write=False)
        return mat

    def first_term(self, x, y, n=None):
        """G_1(x, y) = int_B G_B(x, z) K(z, y) dz by a rule adapted to the pair.

        Writes the integrand as (G_B(x, z) - G_B(x, y)) K(z, y) + G_B(x, y) K(z, y);
        the second part integrates to G_B(x, y) m(y), the first is integrated in
        polar coordinates about x with radial panels graded at |x - y| and
        angular panels graded toward the direction of y.
        """
        params, ball = self.params, self.ball
        if self.b.kind == ZERO:
            return 0.0
        n = n or self.pair_order
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        gxy = float(green_ball(params, ball, x, y))
        eps = float(np.linalg.norm(y - x))
        al, be = params.alpha, params.beta
        right = 0.5 * al - be if self.b.kind == CONST else 0.5 * al
        th_y = math.atan2(y[1] - x[1], y[0] - x[0])
        breaks = np.array([-math.pi, -math.pi / 4, -math.pi / 16, 0.0, math.pi / 16, math.pi / 4, math.pi])
        gx, gw = gauss_legendre(n + 2)
        ang, angw = [], []
        for a, c in zip(breaks[:-1], breaks[1:]):
            ang.append(th_y + a + 0.5 * (c - a) * (gx + 1.0))
            angw.append(0.5 * (c - a) * gw)
        ang, angw = np.concatenate(ang), np.concatenate(angw)
        q = x - ball.center
        total = 0.0
        for t, wt in zip(ang, angw):
            e = np.array([math.cos(t), math.sin(t)])
            qe = q @ e
            L = -qe + math.sqrt(qe**2 + ball.radius**2 - q @ q)
            rho, w = _ray_rule(L, 0.5 * eps, al - 1.0, max(right, -0.9), n=n, ratio=4.0)
            z = x + rho[:, None] * e
            gz = green_ball(params, ball, np.broadcast_to(x, z.shape), z)
            kz = np.array([self.K(zz, y) for zz in z])
            total += wt * np.sum(w * rho * (gz - gxy) * kz)
        return total + gxy * self.mass(y)

    def from_point(self, x):
        """K(x, z_j) over the grid."""
        return np.array([self.K(x, z) for z in self.grid.nodes])

    def to_point(self, y):
        """K(z_i, y) over the grid."""
        return np.array([self.K(z, y) for z in self.grid.nodes])


# -- series state --------------------------------------------------------------

@dataclass(frozen=True)
class SeriesState:
    """Series truncated at ``order``; each update returns a new state.

    terms[k, p] = G_k(x_p, y_p); grid_terms[k, p, j] = G_k(x_p, z_j).
    """

    order: int
    grid: PolarGrid
    xs: np.ndarray
    ys: np.ndarray
    terms: np.ndarray
    grid_terms: np.ndarray
    contraction_factor: float
    comparability: float
    tables: KernelTables = field(repr=False, compare=False)

    @property
    def partial_sum(self):
        return self.terms.sum(axis=0)

    @property
    def error_bound(self):
        """Geometric tail bound c1^2 delta^{n+1}/(1-delta) G_B per probe (inf if delta >= 1)."""
        dlt = self.contraction_factor
        if dlt >= 1:
            return np.full(len(self.xs), np.inf)
        return self.comparability**2 * dlt ** (self.order + 1) / (1.0 - dlt) * self.terms[0]


def init_series(params, b, ball, probes, grid=None, consts=None, rules=None, pair_order=4):
    xs, ys = _probe_arrays(ball, probes)
    grid = grid or polar_grid(ball)
    consts = consts or fit_constants(params)
    tables = KernelTables(params, b, ball, grid, rules, pair_order)
    g0 = green_ball(params, ball, xs, ys)
    gz = np.stack([green_ball(params, ball, grid.nodes, np.broadcast_to(x, grid.nodes.shape)) for x in xs])
    dlt = contraction_factor(params, b.A, ball.radius, consts)
    return SeriesState(0, grid, xs, ys, g0[None, :], gz[None], dlt, consts.c1, tables)


def series_next_term(state, params, b, ball):
    """State at order n+1 from the state at order n."""
    t = state.tables
    if t.b is not b or t.ball is not ball:
        raise ValueError("state was built for a different b or ball")
    g = state.grid
    W = g.weights
    P, N = len(state.xs), g.size
    new_probe = np.zeros(P)
    new_grid = np.zeros((P, N))
    if b.kind != ZERO:
        prev_p = state.terms[-1]
        prev_g = state.grid_terms[-1]
        Kg = t.matrix
        for p in range(P):
            x, y = state.xs[p], state.ys[p]
            v = prev_g[p]
            if state.order == 0:
                new_probe[p] = t.first_term(x, y)
                # grid values: subtract at z = x (K(x, .)) and at z = y (G_B(x, y)) simultaneously
                Kx = t.from_point(x)
                Ex = mean_exit_time(params, ball, x)
                diff = v[:, None] - v[None, :]
                new_grid[p] = (np.einsum("i,ij->j", W, diff * (Kg - Kx[None, :]))
                               + v * t.mass_grid + Kx * Ex - v * Kx * t.area)
            else:
                Ky = t.to_point(y)
                new_probe[p] = W @ ((v - prev_p[p]) * Ky) + t.mass(y) * prev_p[p]
                diff = v[:, None] - v[None, :]
                new_grid[p] = np.einsum("i,ij->j", W, diff * Kg) + v * t.mass_grid
    if not (np.all(np.isfinite(new_probe)) and np.all(np.isfinite(new_grid))):
        raise SeriesError(f"non-finite series term at order {state.order + 1}")
    return replace(
        state,
        order=state.order + 1,
        terms=np.vstack([state.terms, new_probe[None]]),
        grid_terms=np.concatenate([state.grid_terms, new_grid[None]]),
    )


def _probe_arrays(ball, probes):
    arr = np.asarray(probes, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise ValueError("probes must be a list of (x, y) pairs")
    xs, ys = np.ascontiguousarray(arr[:, 0]), np.ascontiguousarray(arr[:, 1])
    for p in (xs, ys):
        if np.any(ball.signed_depth(p) <= 0):
            raise ValueError("probe points must lie inside the ball")
    if np.any(np.linalg.norm(xs - ys, axis=1) == 0):
        raise ValueError("probes must be off-diagonal")
    return xs, ys


# -- summation -----------------------------------------------------------------

@dataclass
class SeriesResult:
    values: np.ndarray
    green_ball: np.ndarray
    terms: np.ndarray
    n_terms: int
    delta: float
    tail_bound: np.ndarray
    decay_ratios: np.ndarray
    residual: np.ndarray
    quad_error: np.ndarray = None
    state: SeriesState = field(default=None, repr=False)

    @property
    def ratio(self):
        return self.values / self.green_ball


def decay_ratios(terms):
    """sup_p |G_{n+1}| / G_B over sup_p |G_n| / G_B for n = 1, 2, ..."""
    norms = np.max(np.abs(terms / terms[0]), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = norms[2:] / norms[1:-1]
    return np.where(norms[1:-1] > 0, out, 0.0)


def fixed_point_residual(state, params, b, ball):
    """S - G_B - int_B S(x, z) K(z, y) dz at the probes, S the current partial sum.

    The integral is one application of the operator to the summed grid function;
    by linearity the residual equals -G_{N+1} up to rounding and quadrature error.
    """
    head = series_next_term(replace(state, order=0, terms=state.terms[:1], grid_terms=state.grid_terms[:1]),
                            params, b, ball)
    rest = replace(state, order=1, terms=np.vstack([state.terms[:1], state.terms[1:].sum(axis=0, keepdims=True)]),
                   grid_terms=np.concatenate([state.grid_terms[:1],
                                              state.grid_terms[1:].sum(axis=0, keepdims=True)]))
    if state.order == 0:
        tail = np.zeros(len(state.xs))
    else:
        tail = series_next_term(rest, params, b, ball).terms[-1]
    return state.partial_sum - state.terms[0] - head.terms[1] - tail


def sum_series(params, b, ball, probes, tol=1e-4, max_terms=6, certify=True, consts=None, grid=None,
               error_estimate=False, rules=None):
    """G^b_B at probe pairs as a partial sum of the perturbation series.

    With ``certify=True`` the number of terms N is the least one whose geometric
    tail bound c1^2 delta^{N+1}/(1-delta) is below ``tol`` (relative to G_B), and a
    ContractionError is raised when delta >= 1. With ``certify=False`` terms are
    added until the last one is below ``tol`` G_B at every probe and the
    reported tail bound is empirical.
    """
    consts = consts or fit_constants(params)
    state = init_series(params, b, ball, probes, grid=grid, consts=consts, rules=rules)
    dlt = state.contraction_factor
    if certify and dlt >= 1:
        raise ContractionError(f"contraction factor {dlt:.3g} >= 1 at radius {ball.radius:g}", dlt)
    if b.kind == ZERO:
        n_needed = 0
    elif certify:
        n_needed = 0
        while consts.c1**2 * dlt ** (n_needed + 1) / (1.0 - dlt) > tol:
            n_needed += 1
            if n_needed > max_terms:
                raise NumericalError(f"tail bound above {tol:g} after {max_terms} terms (delta={dlt:.3g})", dlt)
    else:
        n_needed = max_terms
    while state.order < n_needed:
        state = series_next_term(state, params, b, ball)
        if not certify and np.max(np.abs(state.terms[-1] / state.terms[0])) < tol:
            break
    terms = state.terms
    ratios = decay_ratios(terms) if state.order >= 2 else np.zeros(0)
    if certify or b.kind == ZERO:
        tail = state.error_bound
    else:
        q = float(np.max(ratios)) if ratios.size else 0.0
        tail = np.abs(terms[-1]) * q / (1.0 - q) if q < 1 else np.full(len(state.xs), np.inf)
    residual = fixed_point_residual(state, params, b, ball)
    qerr = None
    if error_estimate:
        g = state.grid
        coarse = polar_grid(ball, max(4, g.n_theta // 2), max(3, g.n_rad // 2))
        cst = init_series(params, b, ball, probes, grid=coarse, consts=consts, rules=rules, pair_order=3)
        while cst.order < state.order:
            cst = series_next_term(cst, params, b, ball)
        qerr = np.abs(cst.partial_sum - state.partial_sum)
    return SeriesResult(state.partial_sum, terms[0], terms, state.order, dlt, tail, ratios, residual, qerr, state)


# -- constants and the contraction radius ----------------------------------------

@dataclass(frozen=True)
class SeriesConstants:
    c1: float
    c2: float
    C21: float
    gamma: float
    theta: float


def comparability_sweep(params, n=2000, seed=0):
    """Ratios G_B/g_B over stratified pairs of the unit ball (scale-invariant)."""
    ball = Ball(np.zeros(params.d), 1.0)
    xs, ys, labels = stratified_pairs(ball, n, np.random.default_rng(seed))
    r = green_ball(params, ball, xs, ys) / profile_gD(ball, params, xs, ys)
    return float(max(np.max(r), 1.0 / np.min(r))), r


def _regime_exponents(params):
    """(gamma, theta, kappa) of the three-G bound for the regime of alpha - 2 beta."""
    al, be = params.alpha, params.beta
    if params.regime > 0:
        return 0.5 * al, 0.0, 0.5 * al
    if params.regime == 0:
        th = 0.5 * be
        return th, th, be - th
    return al - be, 0.0, al - be


def diameter_factor(params, diam, theta=None):
    al, be = params.alpha, params.beta
    if params.regime > 0:
        return diam ** (0.5 * al - be)
    if params.regime == 0:
        th = 0.5 * be if theta is None else theta
        return diam**th + 1.0 / th
    return 1.0


def three_g_sweep(params, n=10000, seed=0):
    """Ratios of the three-G inequalities over random triples in the unit ball.

    ``gh`` is g(x,z) h(z,y)/g(x,y) divided by its bound without C21, ``hh`` the
    same for h(x,z) h(z,y)/h(x,y). ``scale`` is the smallest of the boundary
    distances and mutual distances of the triple.
    """
    rng = np.random.default_rng(seed)
    ball = Ball(np.zeros(params.d), 1.0)
    d, al, be = params.d, params.alpha, params.beta
    _, th, kappa = _regime_exponents(params)

    def pts(m):
        out = sample_uniform(ball, m, rng)
        edge = rng.uniform(size=m) < 0.5
        out[edge] = sample_at_depth(ball, int(edge.sum()), rng, 1e-4, 1.0)
        return out

    x, y, z = pts(n), pts(n), pts(n)
    # a third of the triples put z next to x or y
    close = rng.uniform(size=n) < 1.0 / 3.0
    anchor = np.where((rng.uniform(size=n) < 0.5)[:, None], x, y)
    step = np.exp(rng.uniform(math.log(1e-4), math.log(0.1), size=(n, 1)))
    v = rng.standard_normal((n, d))
    cand = anchor + step * v / np.linalg.norm(v, axis=1, keepdims=True)
    ok = close & (ball.signed_depth(cand) > 1e-12)
    z[ok] = cand[ok]
    dxz = np.linalg.norm(x - z, axis=1)
    dyz = np.linalg.norm(y - z, axis=1)
    good = (dxz > 0) & (dyz > 0) & (np.linalg.norm(x - y, axis=1) > 0)
    x, y, z, dxz, dyz = x[good], y[good], z[good], dxz[good], dyz[good]
    gh = profile_gD(ball, params, x, z) * profile_hD(ball, params, z, y) / profile_gD(ball, params, x, y)
    gh /= diameter_factor(params, ball.diameter, th or None) * (dxz ** (kappa - d) + dyz ** (kappa - d))
    hh = profile_hD(ball, params, x, z) * profile_hD(ball, params, z, y) / profile_hD(ball, params, x, y)
    hh /= dxz ** (al - be - d) + dyz ** (al - be - d)
    scale = np.min(np.stack([ball.delta(x), ball.delta(y), ball.delta(z), dxz, dyz,
                             np.linalg.norm(x - y, axis=1)]), axis=0)
    return {"C21": float(np.max(gh)), "C21_hh": float(np.max(hh)), "gh": gh, "hh": hh, "scale": scale}


_CONST_CACHE = {}


def fit_constants(params, seed=0, n_pairs=2000, n_sb=500, n_triples=10000):
    """c1 (Green comparability), c2 (|S^1| G_B / h_B) and C21 fitted on the unit ball.

    All three are scale-invariant, so one fit serves every radius.
    """
    key = (params, seed, n_pairs, n_sb, n_triples)
    if key not in _CONST_CACHE:
        from .jump_kernel import PerturbationB

        c1, _ = comparability_sweep(params, n_pairs, seed)
        ball = Ball(np.zeros(params.d), 1.0)
        c2 = sb_bound_sweep(params, PerturbationB.const(1.0), ball, n_sb, seed, rules=duhamel_rules(params))["C"]
        sweep = three_g_sweep(params, n_triples, seed)
        gamma, theta, _ = _regime_exponents(params)
        _CONST_CACHE[key] = SeriesConstants(c1, c2, max(sweep["C21"], sweep["C21_hh"]), gamma, theta)
    return _CONST_CACHE[key]


def C_of_r(params, r, consts):
    """6 C21 gamma^{-1} r^gamma times the diameter factor of the three-G bound."""
    return 6.0 * consts.C21 / consts.gamma * r**consts.gamma * diameter_factor(params, 2.0 * r, consts.theta or None)


def contraction_factor(params, A, r, consts):
    return consts.c2 * A * C_of_r(params, r, consts)


def find_r1(params, A, r_hi=1.0, consts=None, iterations=12):
    """Largest radius (to bisection accuracy) with c2 A C(r) <= 1/(2 c1^2 + 1).

    Bisection runs on log r over [r_hi 2^{-12}, r_hi]. Returns (r1, certificate).
    """
    if A < 0 or r_hi <= 0:
        raise ValueError("need A >= 0 and r_hi > 0")
    consts = consts or fit_constants(params)
    target = 1.0 / (2.0 * consts.c1**2 + 1.0)

    def ok(r):
        return contraction_factor(params, A, r, consts) <= target

    lo, hi = math.log(r_hi) - 12.0 * math.log(2.0), math.log(r_hi)
    if A == 0 or ok(r_hi):
        r1 = r_hi
    else:
        if not ok(math.exp(lo)):
            raise ContractionError(f"no contraction at radius {math.exp(lo):.3g} for A={A:g}")
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if ok(math.exp(mid)):
                lo = mid
            else:
                hi = mid
        r1 = math.exp(lo)
    cert = {"A": A, "delta": contraction_factor(params, A, r1, consts), "target": target,
            "c1": consts.c1, "c2": consts.c2, "C21": consts.C21, "gamma": consts.gamma}
    return r1, cert


def perturbed_sb_sweep(params, b, ball, n_pairs=20, seed=0, grid=None, rules=None):
    """Report-only sweep of |S^b_x G^b_B(x, y)| / h_B(x, y).

    H = S^b_x G^b_B solves H(x, y) = K(x, y) + int_B H(x, z) K(z, y) dz. For each x
    the values h_j = H(x, z_j) on the grid come from one Nystrom solve, with the
    singularity of K(., z_j) at z_j handled by the same mass subtraction as the
    series; the probe value then follows in closed form. The singularity of
    K(x, .) at x is only sampled, so the numbers are indicative, not certified.
    """
    rng = np.random.default_rng(seed)
    xs, ys, labels = stratified_pairs(ball, n_pairs, rng)
    grid = grid or polar_grid(ball)
    t = KernelTables(params, b, ball, grid, rules)
    W, M = grid.weights, t.matrix
    # (h o K)_j = sum_i W_i h_i M_ij + h_j (m_j - sum_i W_i M_ij)
    op = M.T * W[None, :] + np.diag(t.mass_grid - W @ M)
    lhs = np.eye(grid.size) - op
    ratios = np.empty(len(xs))
    for i, (x, y) in enumerate(zip(xs, ys)):
        h = np.linalg.solve(lhs, t.from_point(x))
        Ky = t.to_point(y)
        H = (t.K(x, y) + W @ (h * Ky)) / (1.0 - t.mass(y) + W @ Ky)
        ratios[i] = abs(H) / profile_hD(ball, params, x, y)
    scale = np.minimum(np.minimum(ball.delta(xs), ball.delta(ys)), np.linalg.norm(xs - ys, axis=1)) / ball.radius
    return {"C22": float(np.max(ratios)), "ratios": ratios, "xs": xs, "ys": ys, "labels": labels,
            "scale": scale, "operator_norm": float(np.max(np.abs(op).sum(axis=0)))}


__all__ = [
    "PolarGrid",
    "polar_grid",
    "kernel_mass",
    "KernelTables",
    "SeriesState",
    "SeriesResult",
    "SeriesError",
    "ContractionError",
    "init_series",
    "series_next_term",
    "sum_series",
    "decay_ratios",
    "fixed_point_residual",
    "SeriesConstants",
    "comparability_sweep",
    "three_g_sweep",
    "fit_constants",
    "C_of_r",
    "contraction_factor",
    "find_r1",
    "diameter_factor",
    "perturbed_sb_sweep",
]
