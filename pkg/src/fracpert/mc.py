"""Monte Carlo for the killed process X^b: thinning simulator, estimators and an exact free-space sampler.

Jumps longer than a truncation level arrive on a Poisson clock from the
dominating kernel; a proposal z from x is accepted with probability
j^b(x, x+z) / j_dom(|z|). Shorter jumps are dropped; the kernel is even in z
so no drift compensator is needed. The level is ``delta`` in the bulk and
``boundary_fraction`` times the distance to the complement near the boundary,
so a dropped jump can never leave the domain. The clock rate Lambda(level) is
constant between jumps, so the exponential waiting times stay exact.

Each path seeds its own stream from (seed, path index), so results do not
depend on the number of threads or the order in which paths are run.
"""

from dataclasses import dataclass, field
import math

import numba as nb
import numpy as np

from ._kernels import rng_init, rng_normal, rng_uniform
from .geometry import Ball
from .jump_kernel import CALLBACK, tail_intensity
from .quadrature import sphere_area
from .special import normalizing_constant


@dataclass(frozen=True)
class BinSpec:
    """Histogram geometry: radial shells about ``center`` or a Cartesian grid."""

    kind: str
    center: tuple = ()
    edges: tuple = ()
    lo: tuple = ()
    hi: tuple = ()
    shape: tuple = ()

    @classmethod
    def radial(cls, center, edges):
        return cls("radial", center=tuple(float(c) for c in center), edges=tuple(float(e) for e in edges))

    @classmethod
    def grid(cls, lo, hi, shape):
        return cls("grid", lo=tuple(map(float, lo)), hi=tuple(map(float, hi)), shape=tuple(map(int, shape)))

    @property
    def n_bins(self):
        if self.kind == "radial":
            return len(self.edges) - 1
        return int(np.prod(self.shape))

    def volumes(self, d):
        if self.kind == "radial":
            e = np.asarray(self.edges)
            return sphere_area(d) / d * (e[1:] ** d - e[:-1] ** d)
        cell = np.prod((np.asarray(self.hi) - np.asarray(self.lo)) / np.asarray(self.shape))
        return np.full(self.n_bins, cell)

    def centers(self):
        """Representative point per bin: mid-radius for shells, cell centers for grids."""
        if self.kind == "radial":
            e = np.asarray(self.edges)
            return 0.5 * (e[1:] + e[:-1])
        lo, hi, sh = np.asarray(self.lo), np.asarray(self.hi), self.shape
        axes = [lo[k] + (np.arange(sh[k]) + 0.5) * (hi[k] - lo[k]) / sh[k] for k in range(len(sh))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def arrays(self, d):
        if self.kind == "radial":
            return 0, np.asarray(self.center, float), np.asarray(self.edges, float), np.zeros(d), np.zeros(d), np.zeros(d, np.int64)
        return (1, np.zeros(d), np.zeros(2), np.asarray(self.lo, float), np.asarray(self.hi, float),
                np.asarray(self.shape, np.int64))


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 10_000
    horizon: float = 1.0
    delta: float = 1e-3
    seed: int = 0
    record_times: tuple = ()
    bin_spec: BinSpec = None
    record_occupation: bool = False
    clock_points: int = 2048
    chunk: int = 4096
    boundary_fraction: float = 0.1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.boundary_fraction <= 1.0:
            raise ValueError("boundary_fraction must lie in [0, 1]")
        if any(t < 0 or t > self.horizon for t in self.record_times):
            raise ValueError("record times must lie in [0, horizon]")
        if self.record_occupation and self.bin_spec is None:
            raise ValueError("occupation needs a bin_spec")


@dataclass
class PathRecord:
    exit_time: float
    exit_position: np.ndarray  # nan when censored
    jumped_from: np.ndarray
    censored: bool
    positions: np.ndarray  # one row per record time, nan after death


@dataclass
class RunResult:
    """Column-wise records of a batch of paths plus occupation tallies."""

    exit_time: np.ndarray
    exit_position: np.ndarray
    jumped_from: np.ndarray
    censored: np.ndarray
    positions: np.ndarray
    proposals: np.ndarray
    accepted: np.ndarray
    occ_sum: np.ndarray = None
    occ_sumsq: np.ndarray = None
    config: McConfig = None
    diagnostics: dict = field(default_factory=dict)

    def record(self, i):
        return PathRecord(self.exit_time[i], self.exit_position[i], self.jumped_from[i], bool(self.censored[i]),
                          self.positions[i])

    def __len__(self):
        return len(self.exit_time)


# -- compiled engine ---------------------------------------------------------

@nb.njit(cache=True)
def _inside(p, centers, radii):
    for m in range(radii.size):
        s = 0.0
        for k in range(p.size):
            s += (p[k] - centers[m, k]) ** 2
        if s < radii[m] * radii[m]:
            return True
    return False


@nb.njit(cache=True)
def _depth(p, centers, radii):
    # distance to the complement, bounded below by the best single ball
    best = 0.0
    for m in range(radii.size):
        s = 0.0
        for k in range(p.size):
            s += (p[k] - centers[m, k]) ** 2
        h = radii[m] - math.sqrt(s)
        if h > best:
            best = h
    return best


@nb.njit(cache=True)
def _deep_inside(p, centers, radii, thr):
    # True when some ball contains the closed thr-neighbourhood of p; no square roots
    for m in range(radii.size):
        h = radii[m] - thr
        if h <= 0.0:
            continue
        s = 0.0
        for k in range(p.size):
            s += (p[k] - centers[m, k]) ** 2
        if s <= h * h:
            return True
    return False


@nb.njit(cache=True)
def _local_clock(dl, alpha, beta, c_alpha, c_beta, a_dom, omega):
    ra = omega * c_alpha * dl ** (-alpha) / alpha
    rate = ra + omega * a_dom * c_beta * dl ** (-beta) / beta
    return rate, ra / rate


@nb.njit(cache=True)
def _bin_index(p, bkind, bcenter, bedges, blo, bhi, bshape):
    if bkind == 0:
        s = 0.0
        for k in range(p.size):
            s += (p[k] - bcenter[k]) ** 2
        r = math.sqrt(s)
        if r < bedges[0] or r >= bedges[-1]:
            return -1
        return np.searchsorted(bedges, r, side="right") - 1
    idx = 0
    for k in range(p.size):
        h = (bhi[k] - blo[k]) / bshape[k]
        j = int(math.floor((p[k] - blo[k]) / h))
        if j < 0 or j >= bshape[k]:
            return -1
        idx = idx * bshape[k] + j
    return idx


@nb.njit(cache=True)
def _b_of(rho, kind, a, cut, ratio, expo):
    if kind == 1:
        return a
    if kind == 2:
        if rho >= cut:
            return -ratio * rho**expo
    return 0.0


@nb.njit(cache=True, error_model="numpy")
def _run_paths(start, stop, x0s, d, alpha, beta, c_alpha, c_beta, bkind, ba, bcut, bratio, bexpo, a_dom,
               delta, lam_rate, w_alpha, kappa, delta_min, omega, centers, radii, horizon, rec_times, n_clock, occ_on,
               bkind_h, bcenter, bedges, blo, bhi, bshape, nbins, seed,
               exit_time, exit_pos, jumped, censored, positions, proposals, accepted, occ_sum, occ_sq):
    pos = np.empty(d)
    z = np.empty(d)
    st = np.empty(4, dtype=np.uint64)
    tmp = np.zeros(nbins, dtype=np.int64)
    touched = np.empty(n_clock, dtype=np.int64)
    dt = horizon / n_clock
    nrec = rec_times.size
    gap = alpha - beta
    for i in range(start, stop):
        rng_init(st, seed, i)
        for k in range(d):
            pos[k] = x0s[i, k]
        t = 0.0
        kr = 0
        q = 0
        ntouch = 0
        nprop = 0
        nacc = 0
        alive = _inside(pos, centers, radii)
        dl, rate, wa = delta, lam_rate, w_alpha
        moved = kappa > 0.0
        if not alive:
            exit_time[i] = 0.0
            censored[i] = False
            for k in range(d):
                exit_pos[i, k] = pos[k]
                jumped[i, k] = pos[k]
        while alive:
            if moved:
                # truncate below kappa * depth so no dropped jump can leave the domain
                if _deep_inside(pos, centers, radii, delta / kappa):
                    dl = delta
                else:
                    dl = min(delta, max(kappa * _depth(pos, centers, radii), delta_min))
                if dl < delta:
                    rate, wa = _local_clock(dl, alpha, beta, c_alpha, c_beta, a_dom, omega)
                else:
                    rate, wa = lam_rate, w_alpha
                moved = False
            t_new = t - math.log(rng_uniform(st)) / rate
            t_stop = min(t_new, horizon)
            while kr < nrec and rec_times[kr] < t_stop:
                for k in range(d):
                    positions[i, kr, k] = pos[k]
                kr += 1
            if occ_on:
                while q < n_clock and (q + 0.5) * dt < t_stop:
                    bi = _bin_index(pos, bkind_h, bcenter, bedges, blo, bhi, bshape)
                    if bi >= 0:
                        if tmp[bi] == 0:
                            touched[ntouch] = bi
                            ntouch += 1
                        tmp[bi] += 1
                    q += 1
            if t_new >= horizon:
                # censored; a record time equal to the horizon sees the final state
                while kr < nrec:
                    for k in range(d):
                        positions[i, kr, k] = pos[k]
                    kr += 1
                exit_time[i] = horizon
                censored[i] = True
                for k in range(d):
                    exit_pos[i, k] = np.nan
                    jumped[i, k] = np.nan
                break
            t = t_new
            # proposal from the dominating kernel: Pareto radius, uniform direction
            index = alpha
            if wa < 1.0 and rng_uniform(st) >= wa:
                index = beta
            rho = dl * rng_uniform(st) ** (-1.0 / index)
            if d == 2:
                # uniform direction by rejection from the square; avoids cos/sin
                while True:
                    u1 = 2.0 * rng_uniform(st) - 1.0
                    u2 = 2.0 * rng_uniform(st) - 1.0
                    q2 = u1 * u1 + u2 * u2
                    if 0.0 < q2 <= 1.0:
                        break
                s = rho / math.sqrt(q2)
                z[0] = u1 * s
                z[1] = u2 * s
            else:
                s = 0.0
                for k in range(d):
                    z[k] = rng_normal(st)
                    s += z[k] * z[k]
                s = rho / math.sqrt(s)
                for k in range(d):
                    z[k] *= s
            nprop += 1
            bv = _b_of(rho, bkind, ba, bcut, bratio, bexpo)
            if bv != a_dom:
                # j_b / j_dom = (c_a + c_b b rho^{a-b}) / (c_a + c_b A rho^{a-b})
                w = c_beta * rho**gap
                if rng_uniform(st) * (c_alpha + a_dom * w) >= c_alpha + bv * w:
                    continue
            nacc += 1
            for k in range(d):
                z[k] += pos[k]
            if not _inside(z, centers, radii):
                exit_time[i] = t
                censored[i] = False
                for k in range(d):
                    exit_pos[i, k] = z[k]
                    jumped[i, k] = pos[k]
                break
            for k in range(d):
                pos[k] = z[k]
            moved = kappa > 0.0
        proposals[i] = nprop
        accepted[i] = nacc
        for m in range(ntouch):
            bi = touched[m]
            c = tmp[bi]
            occ_sum[bi] += c
            occ_sq[bi] += c * c
            tmp[bi] = 0


def _delta_floor(radii):
    return 1e-12 * float(np.min(radii))


def _domain_arrays(dom):
    balls = dom.balls
    centers = np.ascontiguousarray(np.stack([b.center for b in balls]))
    radii = np.array([b.radius for b in balls])
    return centers, radii


def _b_arrays(b):
    ratio = b.ratio if b.ratio is not None else 0.0
    expo = b.exponent if b.exponent is not None else 0.0
    return b.kind, b.a, b.cutoff, ratio, expo


def simulate(params, b, dom, x0, cfg):
    """Run ``cfg.n_paths`` paths from x0 (a point, or one start point per path)."""
    d = params.d
    x0 = np.asarray(x0, dtype=float)
    x0s = np.ascontiguousarray(np.broadcast_to(x0, (cfg.n_paths, d)) if x0.ndim == 1 else x0)
    if x0s.shape != (cfg.n_paths, d):
        raise ValueError("start points must match n_paths and d")
    if b.kind == CALLBACK:
        return _simulate_python(params, b, dom, x0s, cfg)
    n = cfg.n_paths
    a_dom = b.positive_sup
    lam_rate = tail_intensity(params, a_dom, cfg.delta)
    c_alpha = normalizing_constant(d, params.alpha)
    c_beta = normalizing_constant(d, params.beta)
    w_alpha = sphere_area(d) * c_alpha * cfg.delta ** (-params.alpha) / params.alpha / lam_rate
    centers, radii = _domain_arrays(dom)
    rec = np.asarray(sorted(cfg.record_times), dtype=float)
    occ_on = bool(cfg.record_occupation)
    spec = cfg.bin_spec if cfg.bin_spec is not None else BinSpec.radial(np.zeros(d), [0.0, 1.0])
    bkh, bc, be_, blo, bhi, bsh = spec.arrays(d)
    nbins = spec.n_bins
    out = RunResult(
        exit_time=np.empty(n), exit_position=np.empty((n, d)), jumped_from=np.empty((n, d)),
        censored=np.zeros(n, dtype=np.bool_), positions=np.full((n, rec.size, d), np.nan),
        proposals=np.zeros(n, dtype=np.int64), accepted=np.zeros(n, dtype=np.int64),
        occ_sum=np.zeros(nbins, dtype=np.int64), occ_sumsq=np.zeros(nbins, dtype=np.int64), config=cfg,
    )
    kind, ba, bcut, bratio, bexpo = _b_arrays(b)
    for start in range(0, n, cfg.chunk):
        stop = min(n, start + cfg.chunk)
        _run_paths(start, stop, x0s, d, params.alpha, params.beta, c_alpha, c_beta, kind, ba, bcut, bratio, bexpo,
                   a_dom, cfg.delta, lam_rate, w_alpha, cfg.boundary_fraction, _delta_floor(radii), sphere_area(d),
                   centers, radii, cfg.horizon, rec, cfg.clock_points,
                   occ_on, bkh, bc, be_, blo, bhi, bsh, nbins, np.uint64(cfg.seed),
                   out.exit_time, out.exit_position, out.jumped_from, out.censored, out.positions,
                   out.proposals, out.accepted, out.occ_sum, out.occ_sumsq)
    out.diagnostics = {
        "clock_rate": lam_rate,
        "acceptance": float(out.accepted.sum() / max(out.proposals.sum(), 1)),
        "small_jump_variance_rate": small_jump_variance(params, a_dom, cfg.delta),
    }
    return out


def _simulate_python(params, b, dom, x0s, cfg):
    # reference loop for callback b; same algorithm, numpy Generator streams
    d = params.d
    n = cfg.n_paths
    a_dom = b.positive_sup
    lam_rate = tail_intensity(params, a_dom, cfg.delta)
    c_alpha = normalizing_constant(d, params.alpha)
    c_beta = normalizing_constant(d, params.beta)
    w_alpha = sphere_area(d) * c_alpha * cfg.delta ** (-params.alpha) / params.alpha / lam_rate
    rec = np.asarray(sorted(cfg.record_times), dtype=float)
    spec = cfg.bin_spec
    nb_ = spec.n_bins if spec is not None else 1
    out = RunResult(
        exit_time=np.empty(n), exit_position=np.full((n, d), np.nan), jumped_from=np.full((n, d), np.nan),
        censored=np.zeros(n, dtype=bool), positions=np.full((n, rec.size, d), np.nan),
        proposals=np.zeros(n, dtype=np.int64), accepted=np.zeros(n, dtype=np.int64),
        occ_sum=np.zeros(nb_, dtype=np.int64), occ_sumsq=np.zeros(nb_, dtype=np.int64), config=cfg,
    )
    dt = cfg.horizon / cfg.clock_points
    floor = _delta_floor(_domain_arrays(dom)[1])
    omega = sphere_area(d)
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, i])
        pos = x0s[i].copy()
        t, kr, q = 0.0, 0, 0
        counts = {}
        moved = cfg.boundary_fraction > 0
        dl, rate, wa = cfg.delta, lam_rate, w_alpha
        while True:
            if moved:
                dl = min(cfg.delta, max(cfg.boundary_fraction * float(np.max(dom.signed_depth(pos))), floor))
                rate, wa = _local_clock(dl, params.alpha, params.beta, c_alpha, c_beta, a_dom, omega)
                moved = False
            t_new = t + rng.exponential() / rate
            t_stop = min(t_new, cfg.horizon)
            while kr < rec.size and rec[kr] < t_stop:
                out.positions[i, kr] = pos
                kr += 1
            if cfg.record_occupation:
                while q < cfg.clock_points and (q + 0.5) * dt < t_stop:
                    bi = _bin_index(pos, *spec.arrays(d))
                    if bi >= 0:
                        counts[bi] = counts.get(bi, 0) + 1
                    q += 1
            if t_new >= cfg.horizon:
                out.positions[i, kr:] = pos
                out.exit_time[i] = cfg.horizon
                out.censored[i] = True
                break
            t = t_new
            u = rng.random()
            index = params.alpha if rng.random() < wa else params.beta
            rho = dl * (1.0 - u) ** (-1.0 / index)
            g = rng.standard_normal(d)
            z = rho * g / np.linalg.norm(g)
            out.proposals[i] += 1
            jd = c_alpha * rho ** (-d - params.alpha) + a_dom * c_beta * rho ** (-d - params.beta)
            jb = c_alpha * rho ** (-d - params.alpha) + float(b(pos, z)) * c_beta * rho ** (-d - params.beta)
            if rng.random() * jd >= jb:
                continue
            out.accepted[i] += 1
            new = pos + z
            if not np.any(dom.signed_depth(new) > 0):
                out.exit_time[i] = t
                out.exit_position[i] = new
                out.jumped_from[i] = pos
                break
            pos = new
            moved = cfg.boundary_fraction > 0
        for bi, c in counts.items():
            out.occ_sum[bi] += c
            out.occ_sumsq[bi] += c * c
    out.diagnostics = {"clock_rate": lam_rate,
                       "acceptance": float(out.accepted.sum() / max(out.proposals.sum(), 1)),
                       "small_jump_variance_rate": small_jump_variance(params, a_dom, cfg.delta)}
    return out


def simulate_path(params, b, dom, x0, cfg, index=0):
    """Single path with stream ``index`` of ``cfg.seed``; identical to row ``index`` of a batch run."""
    one = McConfig(n_paths=1, horizon=cfg.horizon, delta=cfg.delta, seed=cfg.seed,
                   record_times=cfg.record_times, clock_points=cfg.clock_points,
                   boundary_fraction=cfg.boundary_fraction)
    if b.kind == CALLBACK:
        raise NotImplementedError("single-path access needs a builtin b")
    res = _simulate_indexed(params, b, dom, np.asarray(x0, float), one, index)
    return res.record(0)


def _simulate_indexed(params, b, dom, x0, cfg, index):
    # run stream ``index`` by offsetting the start of the path loop
    d = params.d
    n = index + 1
    big = McConfig(n_paths=n, horizon=cfg.horizon, delta=cfg.delta, seed=cfg.seed,
                   record_times=cfg.record_times, clock_points=cfg.clock_points,
                   boundary_fraction=cfg.boundary_fraction)
    a_dom = b.positive_sup
    lam_rate = tail_intensity(params, a_dom, cfg.delta)
    c_alpha = normalizing_constant(d, params.alpha)
    c_beta = normalizing_constant(d, params.beta)
    w_alpha = sphere_area(d) * c_alpha * cfg.delta ** (-params.alpha) / params.alpha / lam_rate
    centers, radii = _domain_arrays(dom)
    rec = np.asarray(sorted(cfg.record_times), dtype=float)
    x0s = np.ascontiguousarray(np.broadcast_to(x0, (n, d)))
    res = RunResult(np.empty(n), np.empty((n, d)), np.empty((n, d)), np.zeros(n, np.bool_),
                    np.full((n, rec.size, d), np.nan), np.zeros(n, np.int64), np.zeros(n, np.int64),
                    np.zeros(1, np.int64), np.zeros(1, np.int64), big)
    kind, ba, bcut, bratio, bexpo = _b_arrays(b)
    spec = BinSpec.radial(np.zeros(d), [0.0, 1.0])
    _run_paths(index, index + 1, x0s, d, params.alpha, params.beta, c_alpha, c_beta, kind, ba, bcut, bratio,
               bexpo, a_dom, cfg.delta, lam_rate, w_alpha, cfg.boundary_fraction, _delta_floor(radii), sphere_area(d),
               centers, radii, cfg.horizon, rec, cfg.clock_points,
               False, *spec.arrays(d), 1, np.uint64(cfg.seed), res.exit_time, res.exit_position, res.jumped_from,
               res.censored, res.positions, res.proposals, res.accepted, res.occ_sum, res.occ_sumsq)
    sl = slice(index, index + 1)
    return RunResult(res.exit_time[sl], res.exit_position[sl], res.jumped_from[sl], res.censored[sl],
                     res.positions[sl], res.proposals[sl], res.accepted[sl], config=cfg)


def small_jump_variance(params, A, delta):
    """Per-unit-time second moment of the dropped jumps, int_{|z|<delta} |z|^2 j_dom dz."""
    d, al, be = params.d, params.alpha, params.beta
    return sphere_area(d) * (normalizing_constant(d, al) * delta ** (2 - al) / (2 - al)
                             + A * normalizing_constant(d, be) * delta ** (2 - be) / (2 - be))


# -- statistics ---------------------------------------------------------------

def survival_curve(params, b, dom, x0, cfg, times, run=None):
    """Empirical P(tau > t) with binomial standard errors on the given time grid."""
    run = run if run is not None else simulate(params, b, dom, x0, cfg)
    times = np.asarray(times, dtype=float)
    if np.any(times > cfg.horizon):
        raise ValueError("times beyond the horizon")
    tau = np.sort(run.exit_time)
    n = len(tau)
    # P(tau > t): count of exit times strictly greater than t; censored paths carry tau = horizon
    alive = n - np.searchsorted(tau, times, side="right")
    alive = np.where(times >= cfg.horizon, run.censored.sum(), alive)
    alive = np.where(times <= 0, n, alive)
    p = alive / n
    se = np.sqrt(p * (1 - p) / n)
    return times, p, se


@dataclass
class BinnedEstimate:
    centers: np.ndarray
    volumes: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    counts: np.ndarray
    n: int
    extra: dict = field(default_factory=dict)


def estimate_heat_kernel(params, b, dom, x0, t, cfg, bin_spec=None, run=None):
    """Histogram of surviving positions at time t, normalized per bin volume."""
    spec = bin_spec or cfg.bin_spec
    if spec is None:
        raise ValueError("need a bin_spec")
    if t > cfg.horizon:
        raise ValueError("t beyond the horizon")
    if run is None:
        c2 = McConfig(n_paths=cfg.n_paths, horizon=max(t, 1e-300) if t > 0 else cfg.horizon, delta=cfg.delta,
                      seed=cfg.seed, record_times=(t,), clock_points=cfg.clock_points)
        run = simulate(params, b, dom, x0, c2)
        k = 0
    else:
        k = list(run.config.record_times).index(t)
    pts = run.positions[:, k, :]
    alive = ~np.isnan(pts[:, 0])
    idx = _bin_many(pts[alive], spec, params.d)
    counts = np.bincount(idx[idx >= 0], minlength=spec.n_bins)
    n = len(pts)
    vol = spec.volumes(params.d)
    p = counts / n
    est = p / vol
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(counts > 0, np.sqrt(p * (1 - p) / n) / vol, np.inf)
    return BinnedEstimate(spec.centers(), vol, est, se, counts, n, {"survival": alive.mean()})


def _bin_many(pts, spec, d):
    arrs = spec.arrays(d)
    return np.array([_bin_index(p, *arrs) for p in pts], dtype=np.int64)


def estimate_green(params, b, dom, x0, cfg, run=None):
    """Occupation-time Green estimate per bin with per-path standard errors and a censoring bound."""
    if not cfg.record_occupation:
        raise ValueError("record_occupation must be enabled")
    run = run if run is not None else simulate(params, b, dom, x0, cfg)
    n = len(run)
    dt = cfg.horizon / cfg.clock_points
    vol = cfg.bin_spec.volumes(params.d)
    mean_c = run.occ_sum / n
    var_c = np.maximum(run.occ_sumsq / n - mean_c**2, 0.0)
    est = dt * mean_c / vol
    se = dt * np.sqrt(var_c / n) / vol
    surv_end = float(run.censored.mean())
    extra = {
        "survival_at_horizon": surv_end,
        "censoring_warning": surv_end > 1e-3,
        "mean_exit_time": float(np.mean(run.exit_time)),
        "mean_exit_time_se": float(np.std(run.exit_time) / math.sqrt(n)),
        "occupation_total": float(dt * run.occ_sum.sum() / n),
        "occupation_total_se": None,
    }
    return BinnedEstimate(cfg.bin_spec.centers(), vol, est, se, run.occ_sum, n, extra)


# -- exact free-space sampler for b = const -----------------------------------

def positive_stable(rng, rho, n):
    """Kanter's sampler: positive rho-stable with Laplace transform exp(-lambda^rho), 0 < rho < 1."""
    u = rng.uniform(0.0, math.pi, n)
    e = rng.exponential(1.0, n)
    a = (np.sin(rho * u) / np.sin(u)) ** (1.0 / (1.0 - rho)) * np.sin((1.0 - rho) * u) / np.sin(rho * u)
    return (a / e) ** ((1.0 - rho) / rho)


def isotropic_stable(rng, d, sigma, s, n):
    """Draws with characteristic function exp(-s |xi|^sigma): Brownian motion at a stable time."""
    sub = s ** (2.0 / sigma) * positive_stable(rng, 0.5 * sigma, n)
    return np.sqrt(2.0 * sub)[:, None] * rng.standard_normal((n, d))


def sample_independent_sum(params, a, t, rng, n=None):
    """Exact X_t for the generator Delta^{alpha/2} + a Delta^{beta/2} started at the origin."""
    if a < 0:
        raise ValueError("a must be nonnegative")
    if t <= 0:
        raise ValueError("t must be positive")
    m = 1 if n is None else n
    x = isotropic_stable(rng, params.d, params.alpha, t, m)
    if a > 0:
        x = x + isotropic_stable(rng, params.d, params.beta, a * t, m)
    return x[0] if n is None else x


def free_space(d, radius=1e9):
    """A ball large enough that no path leaves it at desk-scale horizons."""
    return Ball(np.zeros(d), radius)
