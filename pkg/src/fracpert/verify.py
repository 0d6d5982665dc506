"""Verification harness: fitted comparability bands, spectral rate and scaling residuals."""

from dataclasses import asdict, dataclass, field
import hashlib
import json
import math

import numpy as np
from scipy import stats

from . import __version__
from .duhamel import sum_series
from .exact_ball import green_ball
from .geometry import Ball, green_profile, profile_fD, sample_at_depth, sample_uniform
from .jump_kernel import ZERO
from .mc import BinSpec, McConfig, estimate_green, simulate, survival_curve
from .special import stable_density_free


class FitError(RuntimeError):
    """A regression did not reach the required quality."""


def model_digest(**parts):
    """sha256 of a canonical JSON rendering of the model and configuration."""
    return hashlib.sha256(json.dumps(_plain(parts), sort_keys=True).encode()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _plain(asdict(obj))
    if isinstance(obj, (str, int, bool)) or obj is None:
        return obj
    return repr(obj)


def _model(params, b, dom):
    return {"d": params.d, "alpha": params.alpha, "beta": params.beta, "b": b.name, "a": b.a, "A": b.A,
            "cutoff": b.cutoff, "domain": dom.literal()}


@dataclass
class BoundReport:
    grid: list
    ratios: np.ndarray
    se: np.ndarray
    labels: list
    C_lower: float
    C_upper: float
    violations: list
    excluded: list
    certificate: dict
    boundary_slope: float = float("nan")
    boundary_slope_se: float = float("nan")
    passed: bool = False

    def to_json(self):
        return json.dumps(_plain(asdict(self)), sort_keys=True, indent=1)


@dataclass
class SpectralFit:
    lambda1_hat: float
    lambda1_se: float
    lambda1_ci: tuple
    lambda0_bound: float
    lambda0_se: float
    eps0_hat: float
    r_squared: float
    certificate: dict = field(default_factory=dict)

    @property
    def consistent(self):
        """lambda1_hat >= lambda0_bound - 3 s.e."""
        return self.lambda1_hat >= self.lambda0_bound - 3.0 * math.hypot(self.lambda1_se, self.lambda0_se)

    def to_json(self):
        return json.dumps(_plain(asdict(self)), sort_keys=True, indent=1)


# -- probe design --------------------------------------------------------------

def heat_probe_starts(dom):
    """Start points per component: center, half depth, and two near-boundary depths."""
    out = []
    for bl in dom.balls:
        e = np.zeros(bl.d)
        e[0] = 1.0
        for depth in (1.0, 0.5, 0.1, 0.03):
            out.append(bl.center + (1.0 - depth) * bl.radius * e)
    return np.array(out)


def heat_probes(dom, n, rng, times):
    """Stratified (t, x, y, h, label) probes; h is the radius of the counting ball around y."""
    starts = heat_probe_starts(dom)
    strata = ["near_diagonal", "mid_range", "near_boundary"] + (["cross_component"] if len(dom.balls) > 1 else [])
    probes = []
    for k in range(n):
        label = strata[k % len(strata)]
        t = float(times[(k // len(strata)) % len(times)])
        x = starts[rng.integers(len(starts))]
        bl = dom.balls[int(dom.component(x))]
        R = bl.radius
        if label == "near_diagonal":
            while True:
                y = x + R * rng.uniform(0.03, 0.08) * _unit(rng, dom.d)
                if bl.signed_depth(y) > 0.04 * R:
                    break
        elif label == "mid_range":
            while True:
                y = sample_uniform(bl, 1, rng)[0]
                if np.linalg.norm(y - x) > 0.3 * R and bl.signed_depth(y) > 0.1 * R:
                    break
        elif label == "near_boundary":
            y = sample_at_depth(bl, 1, rng, 0.03, 0.08)[0]
        else:
            others = [b for b in dom.balls if b is not bl]
            y = sample_uniform(others[rng.integers(len(others))], 1, rng)[0]
        h = min(0.04 * R, 0.5 * float(dom.delta(y)))
        probes.append((t, x, y, h, label))
    return probes


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


# -- heat kernel bands ---------------------------------------------------------

_THREE_SIGMA = 0.00135  # one-sided tail of a 3-sigma normal interval


def _count_interval(k):
    """Exact (Garwood) Poisson interval for a count k at the 3-sigma level."""
    lo = 0.0 if k == 0 else 0.5 * stats.chi2.ppf(_THREE_SIGMA, 2 * k)
    return lo, 0.5 * stats.chi2.ppf(1 - _THREE_SIGMA, 2 * k + 2)


def _ball_volume(d, h):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * h**d


def _density_at(points, y, h, n_total):
    """Count-based density in B(y, h) with binomial s.e."""
    alive = ~np.isnan(points[:, 0])
    k = int(np.sum(np.linalg.norm(points[alive] - y, axis=1) < h))
    d = points.shape[1]
    vol = _ball_volume(d, h)
    p = k / n_total
    return p / vol, math.sqrt(p * (1 - p) / n_total) / vol, k


def boundary_slope(params, b, ball, cfg, t=0.5, depths=(0.003, 0.05), n_bins=8):
    """Fit log p(t, center, y) against log delta(y) over annuli near the boundary.

    By symmetry of the kernel this is the decay of p(t, x, center) as x -> boundary.
    Depths are in units of the radius. The window should start a few truncation
    lengths inside (dropped small jumps flatten the profile there) and end before
    the curvature of the ball profile bends the log-log line. Returns (slope, s.e.,
    per-bin table).
    """
    run = simulate(params, b, ball, ball.center, McConfig(n_paths=cfg.n_paths, horizon=t, delta=cfg.delta,
                                                          seed=cfg.seed, record_times=(t,)))
    pts = run.positions[:, 0, :]
    alive = ~np.isnan(pts[:, 0])
    depth = ball.radius - np.linalg.norm(pts[alive] - ball.center, axis=1)
    edges = ball.radius * np.geomspace(depths[0], depths[1], n_bins + 1)
    counts = np.histogram(depth, edges)[0]
    n = len(pts)
    r_out, r_in = ball.radius - edges[:-1], ball.radius - edges[1:]
    vol = math.pi * (r_out**2 - r_in**2) if params.d == 2 else (
        math.pi ** (params.d / 2) / math.gamma(params.d / 2 + 1) * (r_out**params.d - r_in**params.d))
    dens = counts / n / vol
    se = np.sqrt(counts) / n / vol
    mid = np.sqrt(edges[:-1] * edges[1:])
    ok = counts > 0
    if ok.sum() < 3:
        return float("nan"), float("inf"), (mid, dens, se)
    # weighted least squares on log density, s.e. of log from Poisson counts
    X = np.stack([np.ones(ok.sum()), np.log(mid[ok])], axis=1)
    w = counts[ok].astype(float)
    yv = np.log(dens[ok])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    coef = cov @ (X.T @ (w * yv))
    return float(coef[1]), float(math.sqrt(cov[1, 1])), (mid, dens, se)


def verify_heat_bounds(params, b, dom, cfg, n_probes=50, times=None, seed=0, band=None, max_rel_se=0.3,
                       slope_paths=None, slope_time=0.5, fit_slope=True):
    """MC heat kernel divided by the f_D profile over stratified probes.

    The fitted band is [min, max] of the ratios of probes whose relative s.e. is at
    most ``max_rel_se``; the others are flagged as excluded from the fit. With a
    prescribed ``band`` every same-component probe is tested: it violates when the
    exact Poisson 3-sigma interval of its count, mapped to a ratio, misses the band.
    For a single ball the boundary-decay exponent is fitted too.
    """
    times = np.geomspace(0.05, 1.0, 5) if times is None else np.asarray(times, dtype=float)
    rng = np.random.default_rng(seed)
    probes = heat_probes(dom, n_probes, rng, times)
    starts = heat_probe_starts(dom)
    runs = {}
    for k, x in enumerate(starts):
        if not any(np.array_equal(p[1], x) for p in probes):
            continue
        c = McConfig(n_paths=cfg.n_paths, horizon=float(times.max()), delta=cfg.delta, seed=cfg.seed + k,
                     record_times=tuple(float(t) for t in times))
        runs[k] = simulate(params, b, dom, x, c)
    grid, ratios, ses, labels, violations, excluded = [], [], [], [], [], []
    for t, x, y, h, label in probes:
        k = next(i for i, s in enumerate(starts) if np.array_equal(s, x))
        run = runs[k]
        ti = list(run.config.record_times).index(t)
        est, se, cnt = _density_at(run.positions[:, ti, :], y, h, len(run))
        prof = profile_fD(dom, params, t, x, y)
        r, rse = est / prof, se / prof
        grid.append((t, x.tolist(), y.tolist()))
        ratios.append(r)
        ses.append(rse)
        labels.append(label)
        idx = len(grid) - 1
        if label == "cross_component":
            # no quantitative band across components; record the estimate only
            excluded.append(idx)
            continue
        if band is not None:
            lo_r, hi_r = (np.array(_count_interval(cnt)) / len(run)) / (_ball_volume(dom.d, h) * prof)
            if hi_r < band[0] or lo_r > band[1]:
                violations.append(idx)
        if cnt == 0 or rse > max_rel_se * r:
            excluded.append(idx)
    ratios, ses = np.array(ratios), np.array(ses)
    good = [i for i in range(len(grid)) if i not in excluded]
    lo = float(np.min(ratios[good])) if good else float("nan")
    hi = float(np.max(ratios[good])) if good else float("nan")
    slope, slope_se = float("nan"), float("nan")
    if fit_slope and isinstance(dom, Ball):
        scfg = McConfig(n_paths=slope_paths or cfg.n_paths, horizon=slope_time, delta=cfg.delta, seed=cfg.seed)
        slope, slope_se, _ = boundary_slope(params, b, dom, scfg, t=slope_time)
    cert = {"version": __version__, "digest": model_digest(model=_model(params, b, dom), cfg=cfg,
                                                           n_probes=n_probes, times=times, seed=seed),
            "n_paths": cfg.n_paths, "delta": cfg.delta, "seed": cfg.seed}
    passed = bool(good) and math.isfinite(lo) and math.isfinite(hi) and lo > 0 and not violations
    return BoundReport(grid, ratios, ses, labels, lo, hi, violations, excluded, cert, slope, slope_se, passed)


# -- Green bands ---------------------------------------------------------------

def verify_green_bounds(params, b, dom, method="exact", n_pairs=200, seed=0, cfg=None, grid_shape=(24, 24),
                        series_kwargs=None):
    """Green function divided by |x-y|^{alpha-d}(1 ^ delta(x)delta(y)/|x-y|^2)^{alpha/2}.

    method "exact": closed-form G_B for b = 0; "series": summed perturbation
    series (ball radius must allow it); "mc": occupation-time estimate from the
    ball center on a Cartesian grid of bins.
    """
    rng = np.random.default_rng(seed)
    labels = []
    if method in ("exact", "series"):
        if not isinstance(dom, Ball):
            raise ValueError("closed-form and series Green need a ball")
        from .geometry import stratified_pairs

        xs, ys, labels = stratified_pairs(dom, n_pairs, rng)
        if method == "exact":
            if b.kind != ZERO:
                raise ValueError("closed form only for b = 0")
            vals = green_ball(params, dom, xs, ys)
            se = np.zeros(len(xs))
        else:
            res = sum_series(params, b, dom, np.stack([xs, ys], 1), **(series_kwargs or {}))
            vals = res.values
            se = res.tail_bound
        prof = green_profile(dom, params, xs, ys)
        grid = [(None, x.tolist(), y.tolist()) for x, y in zip(xs, ys)]
        labels = list(labels)
    elif method == "mc":
        if not isinstance(dom, Ball):
            raise ValueError("MC Green bands run on a ball")
        cfg = cfg or McConfig()
        R = dom.radius
        spec = BinSpec.grid(dom.center - R, dom.center + R, grid_shape)
        c = McConfig(n_paths=cfg.n_paths, horizon=cfg.horizon, delta=cfg.delta, seed=cfg.seed, bin_spec=spec,
                     record_occupation=True, clock_points=cfg.clock_points)
        est = estimate_green(params, b, dom, dom.center, c)
        cen = spec.centers()
        half = 0.5 * np.max((np.asarray(spec.hi) - np.asarray(spec.lo)) / np.asarray(spec.shape))
        keep = (dom.signed_depth(cen) > 2 * half) & (np.linalg.norm(cen - dom.center, axis=1) > 2 * half)
        ys = cen[keep]
        xs = np.broadcast_to(dom.center, ys.shape)
        vals, se = est.estimate[keep], est.se[keep]
        prof = green_profile(dom, params, xs, ys)
        grid = [(None, dom.center.tolist(), y.tolist()) for y in ys]
        labels = ["bin"] * len(ys)
    else:
        raise ValueError(f"unknown method {method!r}")
    ratios = vals / prof
    rse = se / prof
    excluded = [i for i in range(len(ratios)) if not (ratios[i] > 0 and rse[i] <= 0.3 * ratios[i])]
    good = [i for i in range(len(ratios)) if i not in excluded]
    lo = float(np.min(ratios[good])) if good else float("nan")
    hi = float(np.max(ratios[good])) if good else float("nan")
    cert = {"version": __version__, "method": method,
            "digest": model_digest(model=_model(params, b, dom), method=method, n_pairs=n_pairs, seed=seed, cfg=cfg)}
    passed = bool(good) and 0 < lo <= hi < math.inf
    return BoundReport(grid, ratios, rse, labels, lo, hi, [], excluded, cert, passed=passed)


# -- spectral rate ---------------------------------------------------------------

def _start_grid(dom, n=6):
    out = []
    for bl in dom.balls:
        e = np.zeros(bl.d)
        e[0] = 1.0
        for depth in np.linspace(1.0, 0.1, n):
            out.append(bl.center + (1.0 - depth) * bl.radius * e)
    return np.array(out)


def fit_lambda1(params, b, dom, cfg, x0=None, n_times=40, start_points=None, start_paths=None, min_r2=0.95):
    """Decay rate of P_x(tau > t) by least squares over [T/2, T] and the one-step bound.

    lambda0_bound = -log(1 - eps0) with eps0 the smallest one-unit-time exit
    probability over a grid of start points.
    """
    x0 = dom.balls[0].center if x0 is None else np.asarray(x0, dtype=float)
    T = cfg.horizon
    times = np.linspace(0.5 * T, T, n_times)
    run = simulate(params, b, dom, x0, McConfig(n_paths=cfg.n_paths, horizon=T, delta=cfg.delta, seed=cfg.seed))
    t, p, se = survival_curve(params, b, dom, x0, cfg, times, run=run)
    alive = p > 0
    if alive.sum() < 3:
        raise FitError("too few survivors on the fitting window")
    t, p, se = t[alive], p[alive], se[alive]
    X = np.stack([np.ones_like(t), t], axis=1)
    yv = np.log(p)
    coef, *_ = np.linalg.lstsq(X, yv, rcond=None)
    fitted = X @ coef
    ss_res = float(np.sum((yv - fitted) ** 2))
    ss_tot = float(np.sum((yv - yv.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    lam = -float(coef[1])
    # survival counts on a grid are nested, so the usual OLS s.e. is too small; use the
    # two-point binomial s.e. across the window instead
    span = t[-1] - t[0]
    lam_se = math.sqrt((se[0] / p[0]) ** 2 + (se[-1] / p[-1]) ** 2) / span
    if r2 < min_r2:
        raise FitError(f"log-survival fit R^2 = {r2:.4f} below {min_r2}")
    starts = _start_grid(dom) if start_points is None else np.asarray(start_points, dtype=float)
    m = start_paths or cfg.n_paths
    eps = []
    for k, s in enumerate(starts):
        c = McConfig(n_paths=m, horizon=1.0, delta=cfg.delta, seed=cfg.seed + 1000 + k)
        r = simulate(params, b, dom, s, c)
        eps.append(1.0 - r.censored.mean())
    eps = np.array(eps)
    k0 = int(np.argmin(eps))
    e0 = float(eps[k0])
    e0_se = math.sqrt(e0 * (1 - e0) / m)
    lam0 = -math.log1p(-e0) if e0 < 1 else math.inf
    lam0_se = e0_se / (1.0 - e0) if e0 < 1 else math.inf
    cert = {"version": __version__, "digest": model_digest(model=_model(params, b, dom), cfg=cfg, x0=x0),
            "window": [float(0.5 * T), float(T)], "eps_by_start": eps.tolist()}
    return SpectralFit(lam, lam_se, (lam - 1.96 * lam_se, lam + 1.96 * lam_se), lam0, lam0_se, e0, r2, cert)


# -- property sweeps ----------------------------------------------------------------

def extreme_decile_trend(ratios, scale, frac=0.1, n_sub=5):
    """Compare a fitted ratio on the most extreme points with the rest of a sweep.

    ``scale`` measures how close a sample is to the boundary or the diagonal
    (smaller is more extreme). Returns the max over the smallest ``frac`` of the
    scales, the max over the others, their quotient, and the maxima over
    ``n_sub`` consecutive slices of the extreme set ordered from most extreme.
    A divergence would show as a quotient well above 1 with slice maxima that
    increase towards the extreme end.
    """
    ratios, scale = np.asarray(ratios, dtype=float), np.asarray(scale, dtype=float)
    order = np.argsort(scale, kind="stable")
    k = max(1, int(round(frac * len(ratios))))
    top, rest = ratios[order[:k]], ratios[order[k:]]
    top_max = float(np.max(top))
    rest_max = float(np.max(rest)) if rest.size else top_max
    return {"top_max": top_max, "rest_max": rest_max, "quotient": top_max / rest_max,
            "slices": [float(np.max(c)) for c in np.array_split(top, n_sub) if c.size],
            "finite": bool(np.all(np.isfinite(ratios)))}


# -- scaling ---------------------------------------------------------------------

@dataclass
class ScalingReport:
    quantity: str
    lam: float
    lhs: np.ndarray
    rhs: np.ndarray
    residual: float
    tolerance: float
    passed: bool


def check_scaling(params, b, quantity, lam=2.0, dom=None, probes=None, cfg=None, t=0.5, series_kwargs=None):
    """Both sides of a scaling identity and their largest relative residual.

    free_density:  p(t, r) = lam^d p(lam^alpha t, lam r)  (b = 0)
    series_green:  G^b_B(x, y) = lam^{d-alpha} G^{b_lam}_{lam B}(lam x, lam y)
    mc_heat:       p^b_D(t, x, y) = lam^d p^{b_lam}_{lam D}(lam^alpha t, lam x, lam y), with the
                   truncation length scaled by lam and common seeds
    """
    d, al = params.d, params.alpha
    if quantity == "free_density":
        if b.kind != ZERO:
            raise ValueError("the free density identity is checked for b = 0")
        pts = np.array([(0.1, 0.3), (0.5, 1.0), (1.0, 0.0), (2.0, 2.5)]) if probes is None else np.asarray(probes)
        lhs = np.array([stable_density_free(params, tt, r) for tt, r in pts])
        rhs = np.array([lam**d * stable_density_free(params, lam**al * tt, lam * r) for tt, r in pts])
        res = float(np.max(np.abs(lhs - rhs) / np.abs(lhs)))
        return ScalingReport(quantity, lam, lhs, rhs, res, 1e-5, res < 1e-5)
    if quantity == "series_green":
        kw = dict(series_kwargs or {})
        kw.setdefault("error_estimate", True)
        probes = np.asarray(probes, dtype=float)
        r1 = sum_series(params, b, dom, probes, **kw)
        r2 = sum_series(params, b.scaled(params, lam), dom.scaled(lam), lam * probes, **kw)
        lhs = r1.values
        rhs = lam ** (d - al) * r2.values
        err = r1.quad_error + r1.tail_bound + lam ** (d - al) * (r2.quad_error + r2.tail_bound)
        res = float(np.max(np.abs(lhs - rhs) / np.abs(lhs)))
        tol = float(np.max(err / np.abs(lhs)))
        return ScalingReport(quantity, lam, lhs, rhs, res, tol, bool(np.all(np.abs(lhs - rhs) <= err)))
    if quantity == "mc_heat":
        cfg = cfg or McConfig()
        x0 = dom.balls[0].center if probes is None else np.asarray(probes[0], dtype=float)
        R = dom.balls[0].radius
        edges = np.linspace(0.0, R, 9)
        spec1 = BinSpec.radial(x0, edges)
        spec2 = BinSpec.radial(lam * x0, lam * edges)
        c1 = McConfig(n_paths=cfg.n_paths, horizon=t, delta=cfg.delta, seed=cfg.seed, record_times=(t,))
        c2 = McConfig(n_paths=cfg.n_paths, horizon=lam**al * t, delta=lam * cfg.delta, seed=cfg.seed,
                      record_times=(lam**al * t,))
        from .mc import estimate_heat_kernel

        e1 = estimate_heat_kernel(params, b, dom, x0, t, c1, bin_spec=spec1)
        e2 = estimate_heat_kernel(params, b.scaled(params, lam), dom.scaled(lam), lam * x0, lam**al * t, c2,
                                  bin_spec=spec2)
        lhs, rhs = e1.estimate, lam**d * e2.estimate
        se = np.hypot(e1.se, lam**d * e2.se)
        ok = e1.counts > 0
        z = np.abs(lhs - rhs)[ok] / se[ok]
        res = float(np.max(np.abs(lhs - rhs)[ok] / lhs[ok]))
        return ScalingReport(quantity, lam, lhs, rhs, res, float(np.max(3 * se[ok] / lhs[ok])),
                             bool(np.all(z <= 3.0)))
    raise ValueError(f"unknown quantity {quantity!r}")


__all__ = [
    "BoundReport",
    "SpectralFit",
    "ScalingReport",
    "FitError",
    "model_digest",
    "heat_probes",
    "boundary_slope",
    "verify_heat_bounds",
    "verify_green_bounds",
    "fit_lambda1",
    "check_scaling",
    "extreme_decile_trend",
]
